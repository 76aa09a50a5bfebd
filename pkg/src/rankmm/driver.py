"""Outer EM loop and the surrounding experiment machinery: two-step
initialization, held-out-bound model selection, empirical bootstrap
intervals, goodness-of-fit simulation, and summary reporting.

All randomness flows from one root seed through deterministic
SeedSequence spawning, so serial and parallel runs produce identical
results; parallel jobs are reduced in fixed index order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .estep import run_estep
from .model import (
    ModelParams,
    RankDataset,
    VariationalParams,
    compute_elbo,
    generate_dataset,
    make_fixed_theta,
)
from .mstep import (
    BarrierSchedule,
    LineSearchConfig,
    MStepDiagnostics,
    update_alpha,
    update_theta,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "fit",
    "seed_params",
    "two_step_init",
    "held_out_elbo",
    "select_k",
    "bootstrap_ci",
    "BootstrapResult",
    "goodness_of_fit",
    "GofResult",
    "report_summaries",
    "conditional_membership",
]

DEFAULT_INIT_CONCENTRATIONS = (0.6, 1.1, 1.5)


@dataclass(frozen=True)
class FitConfig:
    """Everything needed to reproduce one fit bit-exactly."""

    K: int
    fixed_subgroups: tuple = ()
    outer_tol: float = 1e-8
    estep_tol: float = 1e-6
    mstep_tol: float = 1e-8
    max_outer_iters: int = 200
    estep_max_iters: int = 500
    seed: int = 0
    init: str = "random"  # "random" | "provided" | "two_step"
    dirichlet_a: float = 1.0
    alpha0: float | None = None  # starting concentration per subgroup; None -> 1/K
    init_params: ModelParams | None = None
    barrier: BarrierSchedule = BarrierSchedule()
    line_search: LineSearchConfig = LineSearchConfig()

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.fixed_subgroups and self.K < 1 + len(self.fixed_subgroups):
            raise ValueError("K must exceed the number of fixed subgroups")
        for name in ("outer_tol", "estep_tol", "mstep_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.init not in ("random", "provided", "two_step", "seeded"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "provided" and self.init_params is None:
            raise ValueError("init='provided' requires init_params")
        if self.dirichlet_a <= 0.0:
            raise ValueError("dirichlet_a must be positive")
        if self.alpha0 is not None and self.alpha0 <= 0.0:
            raise ValueError("alpha0 must be positive")


@dataclass
class FitResult:
    params: ModelParams
    var: VariationalParams
    elbo_trace: np.ndarray
    converged: bool
    iters: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def elbo(self) -> float:
        return float(self.elbo_trace[-1])


def _rank_scores(data: RankDataset, i: int) -> list:
    """Geometrically position-weighted indicator scores of one
    individual's observed rankings, one vector per variable."""
    out = []
    for j, v in enumerate(data.n_alternatives):
        s = np.zeros(v)
        row = data.rankings[j][i]
        for n in range(int(data.lengths[j][i])):
            s[row[n]] = 0.5**n
        out.append(s)
    return out


def seed_params(
    data: RankDataset,
    K: int,
    rng: np.random.Generator,
    fixed_subgroups=(),
    mix: float = 0.3,
    n_candidates: int = 200,
) -> ModelParams:
    """Data-driven starting point: each free support vector is built from
    one individual's observed rankings, individuals chosen greedily for
    diversity (first at random, the rest with probability proportional to
    the distance from those already chosen).  ``mix`` blends toward the
    uniform vector so every alternative keeps positive mass.
    """
    if not 0.0 < mix < 1.0:
        raise ValueError("mix must lie in (0, 1)")
    n_fixed = len(fixed_subgroups)
    n_free = K - n_fixed
    if n_free < 1:
        raise ValueError("K must exceed the number of fixed subgroups")
    cand = rng.choice(data.T, size=min(n_candidates, data.T), replace=False)
    scores = [_rank_scores(data, int(i)) for i in cand]
    chosen = [int(rng.integers(len(cand)))]
    for _ in range(n_free - 1):
        d = np.array(
            [
                min(sum(np.abs(s - c).sum() for s, c in zip(scores[m], scores[p])) for p in chosen)
                for m in range(len(cand))
            ]
        )
        total = d.sum()
        if total <= 0.0:  # all candidates identical; fall back to uniform choice
            chosen.append(int(rng.integers(len(cand))))
        else:
            chosen.append(int(rng.choice(len(cand), p=d / total)))
    fixed_mask = np.zeros(K, dtype=bool)
    fixed_mask[K - n_fixed :] = n_fixed > 0
    theta = []
    for j, v in enumerate(data.n_alternatives):
        block = np.empty((K, v))
        for k, m in enumerate(chosen):
            s = scores[m][j]
            tot = s.sum()
            base = s / tot if tot > 0.0 else np.full(v, 1.0 / v)
            block[k] = (1.0 - mix) * base + mix / v
        for f, spec in enumerate(fixed_subgroups):
            block[K - n_fixed + f] = make_fixed_theta(spec, v)
        theta.append(block)
    return ModelParams(np.full(K, 1.0 / K), theta, fixed_mask).validate()


def _initial_params(data: RankDataset, cfg: FitConfig, rng: np.random.Generator) -> ModelParams:
    """Random or provided starting point; fixed subgroups sit at the end
    of the subgroup axis with frozen support vectors."""
    n_fixed = len(cfg.fixed_subgroups)
    fixed_mask = np.zeros(cfg.K, dtype=bool)
    fixed_mask[cfg.K - n_fixed :] = n_fixed > 0
    if cfg.init == "provided":
        params = cfg.init_params.copy()
        if params.K != cfg.K or params.n_alternatives != data.n_alternatives:
            raise ValueError("provided initialization does not match data/config shape")
        return params.validate()
    theta = []
    for j, v in enumerate(data.n_alternatives):
        block = np.empty((cfg.K, v))
        for k in range(cfg.K - n_fixed):
            block[k] = rng.dirichlet(np.full(v, cfg.dirichlet_a))
        for f, spec in enumerate(cfg.fixed_subgroups):
            block[cfg.K - n_fixed + f] = make_fixed_theta(spec, v)
        theta.append(block)
    # A small starting concentration (1/K by default) keeps the first
    # hyperparameter update anchored to the data-driven membership spread
    # instead of the homogeneous large-concentration stationary point.
    a0 = cfg.alpha0 if cfg.alpha0 is not None else 1.0 / cfg.K
    return ModelParams(np.full(cfg.K, a0), theta, fixed_mask).validate()


def fit(data: RankDataset, cfg: FitConfig) -> FitResult:
    """Alternate E-steps and M-steps until the relative change in the
    post-E-step bound falls below ``outer_tol``."""
    if cfg.init in ("two_step", "seeded"):
        if cfg.init == "two_step":
            first = fit(data, replace(cfg, init="random"))
        else:
            start = seed_params(
                data,
                cfg.K,
                np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,))),
                fixed_subgroups=cfg.fixed_subgroups,
            )
            first = fit(data, replace(cfg, init="provided", init_params=start))
        # carry over the support vectors only; the concentration restarts
        # small so the refit's membership spread is driven by the data
        a0 = cfg.alpha0 if cfg.alpha0 is not None else 1.0 / cfg.K
        warm = ModelParams(
            np.full(cfg.K, a0), first.params.theta, first.params.fixed_mask
        )
        second = fit(data, replace(cfg, init="provided", init_params=warm))
        second.diagnostics["first_run_elbo"] = first.elbo
        return second
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    params = _initial_params(data, cfg, rng)
    var = VariationalParams.uniform_init(data, cfg.K)
    mdiag = MStepDiagnostics()
    trace = []
    min_sweep_delta = 0.0
    prev = None
    converged = False
    iters = 0
    for iters in range(1, cfg.max_outer_iters + 1):
        es = run_estep(data, params, var, cfg.estep_tol, cfg.estep_max_iters)
        var = es.var
        min_sweep_delta = min(min_sweep_delta, es.min_sweep_delta)
        trace.append(es.elbo)
        if prev is not None and abs(es.elbo - prev) / max(abs(es.elbo), 1.0) < cfg.outer_tol:
            converged = True
            break
        prev = es.elbo
        alpha, alpha_ok = update_alpha(data, params, var, cfg.mstep_tol)
        mdiag.alpha_converged = mdiag.alpha_converged and alpha_ok
        params = ModelParams(alpha, params.theta, params.fixed_mask)
        theta = update_theta(
            data,
            var,
            params,
            cfg.barrier,
            line_search=cfg.line_search,
            diagnostics=mdiag,
        )
        params = ModelParams(alpha, theta, params.fixed_mask)
        trace.append(compute_elbo(data, params, var))
    diagnostics = {
        "min_estep_sweep_delta": min_sweep_delta,
        "mstep_stage_deltas": np.asarray(mdiag.stage_elbo_deltas),
        "alpha_converged": mdiag.alpha_converged,
        "singular_hessian": mdiag.singular_hessian,
        "no_progress_blocks": len(mdiag.no_progress_blocks),
    }
    return FitResult(params, var, np.asarray(trace), converged, iters, diagnostics)


def two_step_init(data: RankDataset, cfg: FitConfig) -> ModelParams:
    """Run to stationarity from a random start, reset the variational
    parameters, rerun from the resulting global parameters, and return the
    second run's parameters."""
    return fit(data, replace(cfg, init="two_step")).params


def held_out_elbo(train: RankDataset, test: RankDataset, cfg: FitConfig) -> float:
    """Fit on train, then refit only the variational parameters on test
    with the global parameters frozen; returns the test bound."""
    if train.n_alternatives != test.n_alternatives:
        raise ValueError("train and test must share the variable layout")
    result = fit(train, cfg)
    es = run_estep(
        test,
        result.params,
        VariationalParams.uniform_init(test, cfg.K),
        cfg.estep_tol,
        cfg.estep_max_iters,
    )
    return es.elbo


def _canonical_order(data: RankDataset) -> np.ndarray:
    # id-sorted so the split is invariant to row order in the source file
    if data.ids is not None:
        return np.argsort(np.asarray(data.ids, dtype=object), kind="stable")
    return np.arange(data.T)


def _restart_seed(root_seed: int, *key) -> int:
    return int(np.random.SeedSequence(root_seed, spawn_key=tuple(key)).generate_state(1)[0])


def _heldout_job(train, test, cfg):
    return held_out_elbo(train, test, cfg)


def select_k(
    data: RankDataset,
    k_range,
    restarts_per_k: int,
    split_seed: int,
    cfg: FitConfig,
    init_concentrations=DEFAULT_INIT_CONCENTRATIONS,
    n_jobs: int = 1,
):
    """Held-out-bound selection of the subgroup count.

    Random half split, ``restarts_per_k`` random initializations per
    (K, concentration) pair, best held-out bound per K; returns
    (best_k, table) where table rows are (K, best held-out bound).
    """
    k_range = sorted(set(int(k) for k in k_range))
    if not k_range:
        raise ValueError("k_range must be non-empty")
    order = _canonical_order(data)
    perm = order[np.random.default_rng(np.random.SeedSequence(split_seed)).permutation(data.T)]
    half = data.T // 2
    train, test = data.take(perm[:half]), data.take(perm[half:])
    jobs, keys = [], []
    for k in k_range:
        for ai, a in enumerate(init_concentrations):
            for r in range(restarts_per_k):
                cfg_r = replace(
                    cfg,
                    K=k,
                    init="random",
                    init_params=None,
                    dirichlet_a=float(a),
                    seed=_restart_seed(cfg.seed, k, ai, r),
                )
                jobs.append(delayed(_heldout_job)(train, test, cfg_r))
                keys.append(k)
    values = Parallel(n_jobs=n_jobs)(jobs)
    table = []
    for k in k_range:
        best = max(v for key, v in zip(keys, values) if key == k)
        table.append((k, best))
    best_k = max(table, key=lambda row: (row[1], -row[0]))[0]
    return best_k, table


@dataclass
class BootstrapResult:
    level: float
    alpha_point: np.ndarray
    alpha_low: np.ndarray
    alpha_high: np.ndarray
    rel_freq_point: np.ndarray
    rel_freq_low: np.ndarray
    rel_freq_high: np.ndarray
    theta_point: list
    theta_low: list
    theta_high: list
    n_replicates: int
    n_failed: int


def _bootstrap_job(data, indices, cfg):
    result = fit(data.take(indices), cfg)
    return result.converged, result.params.alpha, [t for t in result.params.theta]


def bootstrap_ci(
    data: RankDataset,
    fitted: FitResult,
    n_replicates: int,
    level: float,
    cfg: FitConfig,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Empirical bootstrap intervals for alpha, the relative frequencies,
    and theta.

    Individuals are resampled with replacement; every replicate fit is
    initialized at the full-data stationary point so only sampling
    variability is captured.  Non-convergent replicates are dropped and
    counted.
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    cfg_b = replace(cfg, init="provided", init_params=fitted.params)
    jobs = []
    for b in range(n_replicates):
        rng_b = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(b,)))
        indices = rng_b.integers(0, data.T, size=data.T)
        jobs.append(delayed(_bootstrap_job)(data, indices, cfg_b))
    outcomes = Parallel(n_jobs=n_jobs)(jobs)
    alphas, thetas = [], []
    n_failed = 0
    for ok, alpha, theta in outcomes:
        if ok:
            alphas.append(alpha)
            thetas.append(theta)
        else:
            n_failed += 1
    if not alphas:
        raise RuntimeError("every bootstrap replicate failed to converge")
    alphas = np.asarray(alphas)
    rel = alphas / alphas.sum(axis=1, keepdims=True)
    lo, hi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    theta_stack = [np.asarray([t[j] for t in thetas]) for j in range(fitted.params.J)]
    point_alpha = fitted.params.alpha
    return BootstrapResult(
        level=level,
        alpha_point=point_alpha.copy(),
        alpha_low=np.quantile(alphas, lo, axis=0),
        alpha_high=np.quantile(alphas, hi, axis=0),
        rel_freq_point=point_alpha / point_alpha.sum(),
        rel_freq_low=np.quantile(rel, lo, axis=0),
        rel_freq_high=np.quantile(rel, hi, axis=0),
        theta_point=[t.copy() for t in fitted.params.theta],
        theta_low=[np.quantile(s, lo, axis=0) for s in theta_stack],
        theta_high=[np.quantile(s, hi, axis=0) for s in theta_stack],
        n_replicates=len(alphas),
        n_failed=n_failed,
    )


@dataclass
class GofResult:
    sim_counts: np.ndarray  # (S, J, maxV) first-choice counts, padded with 0
    observed_counts: np.ndarray  # (J, maxV)
    n_alternatives: tuple


def goodness_of_fit(fitted: FitResult, data: RankDataset, n_sims: int, rng) -> GofResult:
    """Simulate datasets from the fitted parameters with the observed
    shape and tabulate first-place counts per alternative per variable."""
    if n_sims < 1:
        raise ValueError("need at least one simulation")
    params = fitted.params
    max_v = max(data.n_alternatives)
    lengths = [data.lengths[j] for j in range(data.J)]
    sim_counts = np.zeros((n_sims, data.J, max_v), dtype=np.int64)
    for s in range(n_sims):
        sim, _, _ = generate_dataset(params, data.T, lengths, rng)
        for j in range(data.J):
            sim_counts[s, j, : data.n_alternatives[j]] = np.bincount(
                sim.rankings[j][:, 0], minlength=data.n_alternatives[j]
            )
    observed = np.zeros((data.J, max_v), dtype=np.int64)
    for j in range(data.J):
        observed[j, : data.n_alternatives[j]] = np.bincount(
            data.rankings[j][:, 0], minlength=data.n_alternatives[j]
        )
    return GofResult(sim_counts, observed, data.n_alternatives)


def conditional_membership(memberships: np.ndarray, keep, threshold: float = 0.5):
    """Memberships renormalized over the subgroups in ``keep`` after
    dropping individuals whose mass outside ``keep`` exceeds
    ``threshold``.  Returns (renormalized memberships, kept index)."""
    keep = np.asarray(sorted(set(int(k) for k in keep)), dtype=np.int64)
    outside = 1.0 - memberships[:, keep].sum(axis=1)
    kept = np.nonzero(outside <= threshold)[0]
    sub = memberships[np.ix_(kept, keep)]
    return sub / sub.sum(axis=1, keepdims=True), kept


def report_summaries(fitted: FitResult, conditional_keep=None) -> dict:
    """Summary tables: support ratios against uniform selection, subgroup
    relative frequencies, normalized membership point estimates, modal
    memberships, and the membership correlation matrix."""
    params = fitted.params
    alpha = params.alpha
    memberships = fitted.var.phi / fitted.var.phi.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        support_ratios = [t * t.shape[1] for t in params.theta]
        log10_ratios = [np.log10(r) for r in support_ratios]
    report = {
        "support_ratios": support_ratios,
        "log10_support_ratios": log10_ratios,
        "relative_frequencies": alpha / alpha.sum(),
        "memberships": memberships,
        "modal_subgroup": memberships.argmax(axis=1),
        "modal_membership": memberships.max(axis=1),
        "membership_correlation": np.corrcoef(memberships, rowvar=False),
    }
    if conditional_keep is not None:
        cond, kept = conditional_membership(memberships, conditional_keep)
        report["conditional_memberships"] = cond
        report["conditional_kept"] = kept
    return report
