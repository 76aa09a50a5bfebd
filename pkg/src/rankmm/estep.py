"""Coordinate-ascent E-step: closed-form updates of delta and phi until
the relative change in the bound is below tolerance.

Individuals are independent given the global parameters, so one sweep
updates every delta row from the current phi and then every phi row from
the fresh deltas; this matches the per-individual sweep order exactly
because no update couples different individuals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import ModelParams, RankDataset, VariationalParams, _membership_scores

__all__ = ["update_delta", "update_phi", "run_estep", "EStepResult"]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 500


@dataclass
class EStepResult:
    var: VariationalParams
    elbo: float
    iters: int
    converged: bool
    min_sweep_delta: float  # most negative observed sweep-to-sweep change


def update_delta(data: RankDataset, params: ModelParams, var: VariationalParams, i: int, j: int, n: int) -> np.ndarray:
    """Maximizing delta row for one rank slot (max-subtracted softmax)."""
    if n >= data.lengths[j][i]:
        raise ValueError(f"slot {n} out of range for individual {i}, variable {j}")
    e_row = _membership_scores(var.phi[i : i + 1])[0]
    table = kernels.pl_log_table(
        data.rankings[j][i : i + 1], data.lengths[j][i : i + 1], params.theta[j]
    )
    logits = table[0, n] + e_row
    m = logits.max()
    if not np.isfinite(m):
        raise ValueError("all subgroups assign zero mass to the observed selection")
    ex = np.where(np.isfinite(logits), np.exp(logits - m), 0.0)
    return ex / ex.sum()


def update_phi(params: ModelParams, var: VariationalParams, i: int) -> np.ndarray:
    """Maximizing phi row: alpha plus the individual's delta totals."""
    slot_sums = sum(d[i].sum(axis=0) for d in var.delta)
    return params.alpha + slot_sums


def _elbo_from_tables(data, params, var, tables):
    """compute_elbo with the per-variable log-probability tables reused.

    Returns (elbo, e_scores) so callers can feed the membership scores
    straight into the next round of delta updates.
    """
    e_scores, total = kernels.dirichlet_terms(var.phi, params.alpha)
    for j in range(data.J):
        pl, context, entropy = kernels.delta_terms(
            var.delta[j], tables[j], data.lengths[j], e_scores
        )
        total += pl + context + entropy
    return total, e_scores


def run_estep(
    data: RankDataset,
    params: ModelParams,
    var: VariationalParams,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> EStepResult:
    """Sweep delta and phi updates until |dELBO| / |ELBO| < tol.

    Returns the updated variational parameters, the final bound, the sweep
    count, and a convergence flag (non-convergence at max_iters is
    reported, not raised).
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    var = var.copy()
    tables = [
        kernels.pl_log_table(data.rankings[j], data.lengths[j], params.theta[j])
        for j in range(data.J)
    ]
    prev, e_scores = _elbo_from_tables(data, params, var, tables)
    min_delta = 0.0
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        slot_totals = np.zeros_like(var.phi)
        for j in range(data.J):
            var.delta[j], sums = kernels.delta_sweep(tables[j], data.lengths[j], e_scores)
            slot_totals += sums
        var.phi = params.alpha[None, :] + slot_totals
        elbo, e_scores = _elbo_from_tables(data, params, var, tables)
        change = elbo - prev
        min_delta = min(min_delta, change)
        if abs(change) / max(abs(elbo), 1.0) < tol:
            prev = elbo
            converged = True
            break
        prev = elbo
    return EStepResult(var, prev, iters, converged, min_delta)
