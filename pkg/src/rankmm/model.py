"""Model and variational parameter containers, the generative sampler, the
evidence lower bound, and a brute-force marginal-likelihood oracle.

Rankings are stored internally as 0-based padded int64 arrays, one
(T, maxN_j) block per variable; the public ``Ranking`` value type stays
1-based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .plackett_luce import Ranking, StructuralError, validate_support
from .special import digamma, log_gamma

__all__ = [
    "RankDataset",
    "ModelParams",
    "VariationalParams",
    "FixedSubgroupSpec",
    "make_fixed_theta",
    "generate_dataset",
    "compute_elbo",
    "exact_log_marginal",
]

_EXACT_MARGINAL_BUDGET = 10**7


@dataclass(frozen=True)
class FixedSubgroupSpec:
    """A non-estimated subgroup whose support weights stay frozen.

    kind "uniform" gives weight 1/V to every alternative; kind
    "presentation_ordered" gives weights proportional to
    sharpness**(v-1) in presentation order, so small sharpness makes the
    presentation-ordered full ranking nearly deterministic while keeping
    every weight positive.
    """

    kind: str
    sharpness: float = 0.01

    def __post_init__(self):
        if self.kind not in ("uniform", "presentation_ordered"):
            raise ValueError(f"unknown fixed subgroup kind {self.kind!r}")
        if self.kind == "presentation_ordered" and not 0.0 < self.sharpness < 1.0:
            raise ValueError("sharpness must lie in (0, 1)")


def make_fixed_theta(spec: FixedSubgroupSpec, n_alternatives: int) -> np.ndarray:
    """Frozen support vector for a fixed subgroup over V alternatives."""
    if n_alternatives < 2:
        raise ValueError("need at least 2 alternatives")
    if spec.kind == "uniform":
        return np.full(n_alternatives, 1.0 / n_alternatives)
    w = spec.sharpness ** np.arange(n_alternatives, dtype=np.float64)
    return w / w.sum()


class RankDataset:
    """T individuals by J variables of partial rankings.

    ``rankings[j]`` is a (T, maxN_j) int64 array of 0-based alternative
    indices padded with -1; ``lengths[j][i]`` is N_ij >= 1.
    """

    def __init__(self, n_alternatives, rankings, lengths, ids=None, variable_ids=None, labels=None):
        self.n_alternatives = tuple(int(v) for v in n_alternatives)
        self.rankings = [np.ascontiguousarray(r, dtype=np.int64) for r in rankings]
        self.lengths = [np.ascontiguousarray(n, dtype=np.int64) for n in lengths]
        self.ids = tuple(ids) if ids is not None else None
        self.variable_ids = tuple(variable_ids) if variable_ids is not None else None
        self.labels = labels
        self._validate()

    def _validate(self):
        if len(self.rankings) != self.J or len(self.lengths) != self.J:
            raise ValueError("one ranking/length block required per variable")
        t = self.rankings[0].shape[0]
        for j, (rk, ln, v) in enumerate(zip(self.rankings, self.lengths, self.n_alternatives)):
            if rk.shape[0] != t or ln.shape[0] != t:
                raise ValueError("inconsistent individual counts across variables")
            if np.any(ln < 1) or np.any(ln > v):
                raise ValueError(f"rank lengths for variable {j} outside [1, {v}]")
            cols = np.arange(rk.shape[1])[None, :]
            valid = cols < ln[:, None]
            if np.any(valid & ((rk < 0) | (rk >= v))):
                raise ValueError(f"alternative index out of range for variable {j}")
            if np.any(~valid & (rk != -1)):
                raise ValueError("padding slots must hold -1")
            for i in range(t):
                row = rk[i, : ln[i]]
                if len(set(row.tolist())) != ln[i]:
                    raise ValueError(f"duplicate alternative in ranking ({i}, {j})")
        if self.ids is not None and len(self.ids) != t:
            raise ValueError("ids length must equal T")

    @property
    def T(self) -> int:
        return self.rankings[0].shape[0]

    @property
    def J(self) -> int:
        return len(self.n_alternatives)

    @property
    def total_slots(self) -> int:
        return int(sum(ln.sum() for ln in self.lengths))

    def slots_per_individual(self) -> np.ndarray:
        return np.sum([ln for ln in self.lengths], axis=0)

    def ranking(self, i: int, j: int) -> Ranking:
        row = self.rankings[j][i, : self.lengths[j][i]]
        return Ranking(tuple(int(a) + 1 for a in row), self.n_alternatives[j])

    def take(self, indices) -> "RankDataset":
        """Subset/reorder individuals; used by the bootstrap."""
        idx = np.asarray(indices, dtype=np.int64)
        ids = tuple(self.ids[i] for i in idx) if self.ids is not None else None
        return RankDataset(
            self.n_alternatives,
            [rk[idx] for rk in self.rankings],
            [ln[idx] for ln in self.lengths],
            ids=ids,
            variable_ids=self.variable_ids,
            labels=self.labels,
        )

    @classmethod
    def from_rankings(cls, per_individual, n_alternatives, **kw) -> "RankDataset":
        """Build from nested 1-based entries: per_individual[i][j] is a
        sequence of alternatives for variable j."""
        n_alternatives = tuple(int(v) for v in n_alternatives)
        t = len(per_individual)
        j_count = len(n_alternatives)
        rankings, lengths = [], []
        for j in range(j_count):
            rows = [list(per_individual[i][j]) for i in range(t)]
            max_n = max(len(r) for r in rows)
            block = np.full((t, max_n), -1, dtype=np.int64)
            ln = np.zeros(t, dtype=np.int64)
            for i, r in enumerate(rows):
                block[i, : len(r)] = np.asarray(r, dtype=np.int64) - 1
                ln[i] = len(r)
            rankings.append(block)
            lengths.append(ln)
        return cls(n_alternatives, rankings, lengths, **kw)


@dataclass
class ModelParams:
    """Global parameters: Dirichlet membership alpha and per-(variable,
    subgroup) support vectors, with a mask marking frozen subgroups."""

    alpha: np.ndarray
    theta: list  # J entries of shape (K, V_j)
    fixed_mask: np.ndarray = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.theta = [np.asarray(t, dtype=np.float64) for t in self.theta]
        if self.fixed_mask is None:
            self.fixed_mask = np.zeros(self.K, dtype=bool)
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool)

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    @property
    def J(self) -> int:
        return len(self.theta)

    @property
    def n_alternatives(self):
        return tuple(t.shape[1] for t in self.theta)

    def validate(self):
        if np.any(self.alpha <= 0.0):
            raise ValueError("alpha components must be positive")
        if self.fixed_mask.shape != (self.K,):
            raise ValueError("fixed_mask must have one flag per subgroup")
        for j, block in enumerate(self.theta):
            if block.shape[0] != self.K:
                raise ValueError(f"theta block {j} has wrong subgroup count")
            for k in range(self.K):
                validate_support(block[k], allow_zero=bool(self.fixed_mask[k]))
        return self

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.alpha.copy(), [t.copy() for t in self.theta], self.fixed_mask.copy()
        )


@dataclass
class VariationalParams:
    """Per-individual Dirichlet parameters phi (T, K) and per-slot
    multinomial parameters delta (one (T, maxN_j, K) block per variable,
    padded slots zeroed)."""

    phi: np.ndarray
    delta: list

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.delta = [np.asarray(d, dtype=np.float64) for d in self.delta]

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.phi.copy(), [d.copy() for d in self.delta])

    @classmethod
    def uniform_init(cls, data: RankDataset, n_subgroups: int) -> "VariationalParams":
        """Flat start: every phi entry and every valid delta row at 1/K."""
        k = n_subgroups
        phi = np.full((data.T, k), 1.0 / k)
        delta = []
        for j in range(data.J):
            t, max_n = data.rankings[j].shape
            valid = np.arange(max_n)[None, :] < data.lengths[j][:, None]
            delta.append(np.where(valid[:, :, None], np.full((1, 1, k), 1.0 / k), 0.0))
        return cls(phi, delta)

    def validate(self, data: RankDataset):
        if np.any(self.phi <= 0.0):
            raise ValueError("phi entries must be positive")
        for j in range(data.J):
            d = self.delta[j]
            valid = np.arange(d.shape[1])[None, :] < data.lengths[j][:, None]
            sums = d.sum(axis=2)
            if np.any(np.abs(sums[valid] - 1.0) > 1e-10):
                raise ValueError("delta rows must sum to 1")
            if np.any(d < 0.0):
                raise ValueError("delta entries must be non-negative")
        return self


def _categorical_rows(rng, probs):
    """One draw per row from row-wise categorical distributions."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return (u[:, None] >= cum).sum(axis=1)


def generate_dataset(params: ModelParams, n_individuals: int, n_levels, rng):
    """Sample a dataset from the generative model.

    Each individual draws a membership vector from Dirichlet(alpha); each
    rank slot draws a context indicator from that membership and then the
    next alternative among those not yet ranked, proportional to the
    indicated subgroup's remaining weights.  ``n_levels`` gives the
    ranking length per variable (scalar per variable, or per-individual
    arrays).  Returns (dataset, memberships, context indicators).
    """
    params.validate()
    t, k, j_count = n_individuals, params.K, params.J
    lengths = []
    for j in range(j_count):
        n_j = np.broadcast_to(np.asarray(n_levels[j], dtype=np.int64), (t,)).copy()
        if np.any(n_j < 1) or np.any(n_j > params.n_alternatives[j]):
            raise ValueError(f"ranking lengths for variable {j} outside [1, V_j]")
        lengths.append(n_j)
    if k == 1:
        memberships = np.ones((t, 1))
    else:
        memberships = rng.dirichlet(params.alpha, size=t)
    rankings, contexts = [], []
    for j in range(j_count):
        v = params.n_alternatives[j]
        max_n = int(lengths[j].max())
        block = np.full((t, max_n), -1, dtype=np.int64)
        ctx = np.full((t, max_n), -1, dtype=np.int64)
        remaining = np.ones((t, v), dtype=bool)
        for n in range(max_n):
            active = lengths[j] > n
            z = _categorical_rows(rng, memberships)
            weights = params.theta[j][z] * remaining
            totals = weights.sum(axis=1)
            if np.any(active & (totals <= kernels.DENOM_TOL)):
                raise StructuralError(
                    f"no remaining positive-weight alternative at level {n + 1}, variable {j}"
                )
            picks = _categorical_rows(rng, np.where(totals[:, None] > 0, weights, 1.0))
            block[active, n] = picks[active]
            ctx[active, n] = z[active]
            remaining[np.arange(t)[active], picks[active]] = False
        rankings.append(block)
        contexts.append(ctx)
    data = RankDataset(params.n_alternatives, rankings, lengths)
    return data, memberships, contexts


def _membership_scores(phi):
    """E[i, k] = digamma(phi[i, k]) - digamma(sum_k phi[i, k])."""
    return digamma(phi) - digamma(phi.sum(axis=1))[:, None]


def compute_elbo(data: RankDataset, params: ModelParams, var: VariationalParams) -> float:
    """Evidence lower bound on the marginal log likelihood.

    Sum of the Dirichlet-prior expectation, the context-indicator
    expectation, the selection-probability expectation, and the entropies
    of the variational Dirichlet and multinomials (with 0 ln 0 = 0).
    Returns -inf when some positive delta weight sits on a selection the
    corresponding subgroup gives zero mass.
    """
    alpha, phi = params.alpha, var.phi
    t = data.T
    e_scores = _membership_scores(phi)
    asum = float(alpha.sum())
    prior = t * log_gamma(asum) - t * float(np.sum(log_gamma(alpha)))
    prior += float(((alpha - 1.0) * e_scores).sum())
    dir_entropy = -float(np.sum(log_gamma(phi.sum(axis=1)))) + float(np.sum(log_gamma(phi)))
    dir_entropy -= float(((phi - 1.0) * e_scores).sum())
    total = prior + dir_entropy
    for j in range(data.J):
        table = kernels.pl_log_table(data.rankings[j], data.lengths[j], params.theta[j])
        pl, context, entropy = kernels.delta_terms(var.delta[j], table, data.lengths[j], e_scores)
        total += pl + context + entropy
    return float(total)


def exact_log_marginal(data: RankDataset, params: ModelParams) -> float:
    """Log marginal likelihood by brute-force enumeration of context
    configurations; tiny instances only.

    Individuals factor, so for each one we enumerate subgroup assignments
    over its slots; each configuration contributes the closed-form
    Dirichlet-multinomial weight of its subgroup counts times the product
    of conditional selection probabilities.
    """
    params.validate()
    k = params.K
    if k ** data.total_slots > _EXACT_MARGINAL_BUDGET:
        raise ValueError("instance exceeds the enumeration budget")
    alpha = params.alpha
    asum = float(alpha.sum())
    tables = [
        kernels.pl_log_table(data.rankings[j], data.lengths[j], params.theta[j])
        for j in range(data.J)
    ]
    total = 0.0
    for i in range(data.T):
        slot_logp = np.concatenate(
            [tables[j][i, : data.lengths[j][i], :] for j in range(data.J)], axis=0
        )  # (n_i, K)
        n_i = slot_logp.shape[0]
        log_w = np.zeros(1)
        counts = np.zeros((1, k), dtype=np.int64)
        for s in range(n_i):
            m = log_w.shape[0]
            log_w = (log_w[:, None] + slot_logp[s][None, :]).ravel()
            counts = np.repeat(counts, k, axis=0)
            counts[np.arange(m * k), np.tile(np.arange(k), m)] += 1
        weight = (
            log_gamma(asum)
            - log_gamma(asum + n_i)
            + np.sum(log_gamma(alpha[None, :] + counts) - log_gamma(alpha)[None, :], axis=1)
        )
        vals = log_w + weight
        m = vals.max()
        if not np.isfinite(m):
            return -np.inf
        total += float(m + np.log(np.exp(vals - m).sum()))
    return total
