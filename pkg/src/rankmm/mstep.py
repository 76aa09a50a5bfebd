"""M-step: Newton-Raphson for the Dirichlet membership parameter and a
log-barrier interior-point method with KKT-projected Newton steps for the
simplex-constrained support vectors.

The barrier continuation runs M stages with weights 1/b0**m, m = 1..M, so
the barrier weakens stage by stage; each stage warm-starts from the
previous one's solution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma as _lgamma

import numpy as np

from . import kernels
from .model import ModelParams, RankDataset, VariationalParams, _membership_scores
from .special import digamma, trigamma

__all__ = [
    "BarrierSchedule",
    "LineSearchConfig",
    "MStepDiagnostics",
    "alpha_gradient",
    "alpha_hessian",
    "update_alpha",
    "theta_gradient_hessian",
    "kkt_step",
    "backtracking_line_search",
    "update_theta",
]

ALPHA_FLOOR = 1e-8
THETA_FLOOR = 1e-12


@dataclass(frozen=True)
class BarrierSchedule:
    """Continuation schedule: stage m of M uses barrier weight 1/b0**m."""

    b0: float = 10.0
    stages: int = 4

    def __post_init__(self):
        if self.b0 <= 1.0:
            raise ValueError("b0 must exceed 1")
        if self.stages < 1:
            raise ValueError("need at least one barrier stage")

    def weights(self):
        return [self.b0 ** -(m + 1) for m in range(self.stages)]


@dataclass(frozen=True)
class LineSearchConfig:
    tau0: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if not 0.0 < self.tau0 < 1.0:
            raise ValueError("tau0 must lie in (0, 1)")


@dataclass
class MStepDiagnostics:
    """Per-call flags and monotonicity bookkeeping."""

    alpha_converged: bool = True
    singular_hessian: bool = False
    no_progress_blocks: list = field(default_factory=list)
    stage_elbo_deltas: list = field(default_factory=list)  # true-bound change per accepted stage


def alpha_gradient(data: RankDataset, params: ModelParams, var: VariationalParams) -> np.ndarray:
    """d ELBO / d alpha_k."""
    t = data.T
    alpha = params.alpha
    e_scores = _membership_scores(var.phi)
    return t * (digamma(float(alpha.sum())) - digamma(alpha)) + e_scores.sum(axis=0)


def alpha_hessian(params: ModelParams, n_individuals: int) -> np.ndarray:
    """Hessian of the bound in alpha: diagonal plus a rank-one term."""
    alpha = params.alpha
    h = np.full((params.K, params.K), n_individuals * trigamma(float(alpha.sum())))
    h[np.diag_indices(params.K)] -= n_individuals * trigamma(alpha)
    return h


def _alpha_block_value(alpha, e_totals, n_individuals):
    """Alpha-dependent part of the bound; e_totals[k] = sum_i E[i, k].

    Uses math.lgamma: alpha is a length-K vector, so the scalar C call
    beats the vectorized path by a wide margin inside the line search.
    """
    total = n_individuals * _lgamma(float(alpha.sum()))
    for a in alpha:
        total -= n_individuals * _lgamma(a)
    return total + float(((alpha - 1.0) * e_totals).sum())


def update_alpha(
    data: RankDataset,
    params: ModelParams,
    var: VariationalParams,
    tol: float = 1e-8,
    max_iters: int = 100,
):
    """Damped Newton ascent on alpha with positivity and monotonicity
    safeguards; every component is updated, frozen subgroups included.

    Returns (alpha, converged).
    """
    t = data.T
    alpha = params.alpha.copy()
    e_totals = _membership_scores(var.phi).sum(axis=0)
    value = _alpha_block_value(alpha, e_totals, t)
    # the gradient scales with the number of individuals, so the stopping
    # rule does too: per-individual gradient below tol
    gtol = tol * t
    for _ in range(max_iters):
        grad = t * (digamma(float(alpha.sum())) - digamma(alpha)) + e_totals
        if np.max(np.abs(grad)) < gtol:
            return alpha, True
        hess = np.full((alpha.size, alpha.size), t * trigamma(float(alpha.sum())))
        hess[np.diag_indices(alpha.size)] -= t * trigamma(alpha)
        try:
            direction = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return alpha, False
        if not np.all(np.isfinite(direction)):
            return alpha, False
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = alpha + step * direction
            if np.all(cand > ALPHA_FLOOR):
                cand_value = _alpha_block_value(cand, e_totals, t)
                if cand_value >= value - 1e-12:
                    alpha, value = cand, cand_value
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return alpha, False
    return alpha, np.max(np.abs(t * (digamma(float(alpha.sum())) - digamma(alpha)) + e_totals)) < gtol


def theta_gradient_hessian(
    data: RankDataset,
    var: VariationalParams,
    j: int,
    k: int,
    theta_jk: np.ndarray,
    barrier_weight: float,
):
    """Gradient and Hessian of the barrier-augmented minimization
    objective for one (variable, subgroup) block."""
    return kernels.theta_grad_hess(
        data.rankings[j], data.lengths[j], var.delta[j][:, :, k], theta_jk, barrier_weight
    )


def kkt_step(gradient: np.ndarray, hessian: np.ndarray):
    """Newton direction projected onto the sum-zero constraint.

    Returns (step, used_fallback); the fallback is a projected gradient
    direction used when the Hessian solve fails.
    """
    ones = np.ones_like(gradient)
    try:
        sol = np.linalg.solve(hessian, np.column_stack([gradient, ones]))
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        step = -(gradient - gradient.mean())
        return step, True
    h_inv_g, h_inv_1 = sol[:, 0], sol[:, 1]
    lam = h_inv_g.sum() / h_inv_1.sum()
    step = -(h_inv_g - lam * h_inv_1)
    return step, False


def _block_objective(data, var, j, k, theta, barrier_weight):
    return kernels.theta_objective(
        data.rankings[j], data.lengths[j], var.delta[j][:, :, k], theta, barrier_weight
    )


def backtracking_line_search(
    data: RankDataset,
    var: VariationalParams,
    params: ModelParams,
    j: int,
    k: int,
    theta_jk: np.ndarray,
    delta_theta: np.ndarray,
    cfg: LineSearchConfig,
    barrier_weight: float,
):
    """Smallest power of tau0 keeping the step feasible and non-increasing
    in the barrier-augmented objective.

    Returns (tau, made_progress); tau = 0 with made_progress False when
    the backtrack budget is exhausted.
    """
    base = _block_objective(data, var, j, k, theta_jk, barrier_weight)
    tau = 1.0
    for _ in range(cfg.max_backtracks + 1):
        cand = theta_jk + tau * delta_theta
        if np.all(cand > 0.0):
            if _block_objective(data, var, j, k, cand, barrier_weight) <= base:
                return tau, True
        tau *= cfg.tau0
    return 0.0, False


def update_theta(
    data: RankDataset,
    var: VariationalParams,
    params: ModelParams,
    schedule: BarrierSchedule = BarrierSchedule(),
    tol: float = 1e-9,
    max_iters: int = 50,
    line_search: LineSearchConfig = LineSearchConfig(),
    diagnostics: MStepDiagnostics | None = None,
):
    """Interior-point update of every estimated support vector.

    Each (variable, subgroup) block runs the barrier continuation; a stage
    result is kept only when the block's true (barrier-free) bound does
    not decrease, which preserves outer-loop monotonicity even when an
    early wide barrier would pull the block off its optimum.  Frozen
    subgroups are untouched.  Returns the new theta blocks.
    """
    diag = diagnostics if diagnostics is not None else MStepDiagnostics()
    new_theta = [t.copy() for t in params.theta]
    for j in range(data.J):
        for k in range(params.K):
            if params.fixed_mask[k]:
                continue
            theta = new_theta[j][k].copy()
            for weight in schedule.weights():
                stage_start = theta.copy()
                true_before = _block_objective(data, var, j, k, stage_start, 0.0)
                value = _block_objective(data, var, j, k, theta, weight)
                for _ in range(max_iters):
                    grad, hess = theta_gradient_hessian(data, var, j, k, theta, weight)
                    step, fallback = kkt_step(grad, hess)
                    if fallback:
                        diag.singular_hessian = True
                        # scale the projected gradient to a sane magnitude
                        norm = np.max(np.abs(step))
                        if norm > 0.0:
                            step = step * min(1.0, 0.1 / norm)
                    if np.max(np.abs(step)) < tol:
                        break
                    tau, ok = backtracking_line_search(
                        data, var, params, j, k, theta, step, line_search, weight
                    )
                    if not ok:
                        diag.no_progress_blocks.append((j, k))
                        break
                    theta = theta + tau * step
                    new_value = _block_objective(data, var, j, k, theta, weight)
                    if abs(value - new_value) <= tol * (abs(value) + 1.0):
                        value = new_value
                        break
                    value = new_value
                true_after = _block_objective(data, var, j, k, theta, 0.0)
                # objective is a minimization target: smaller means larger bound
                stage_delta = true_before - true_after
                if stage_delta < -1e-12:
                    theta = stage_start
                    diag.no_progress_blocks.append((j, k))
                else:
                    diag.stage_elbo_deltas.append(stage_delta)
            theta = np.maximum(theta, THETA_FLOOR)
            new_theta[j][k] = theta / theta.sum()
    return new_theta
