"""Pure NumPy implementations of the hot per-variable kernels.

Same contracts as the compiled module ``rankmm._kernels``; see
``rankmm.kernels`` for the dispatch.  Rankings are stored 0-based in a
(T, maxN) int64 array padded with -1; ``lengths`` gives the number of
valid rank levels per individual.
"""
from __future__ import annotations

import numpy as np

from .special import digamma, log_gamma

DENOM_TOL = 1e-14

BACKEND = "python"


def dirichlet_terms(phi, alpha):
    """Membership scores plus the phi/alpha block of the bound.

    Returns (E, total) where E[i, k] = digamma(phi[i, k]) - digamma(row
    sum) and total collects the Dirichlet prior expectation and the
    negated Dirichlet entropy:

        T ln G(sum alpha) - T sum ln G(alpha)
        + sum (alpha - 1) E - sum ln G(row sum) + sum ln G(phi)
        - sum (phi - 1) E.
    """
    phi = np.asarray(phi, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    t = phi.shape[0]
    row = phi.sum(axis=1)
    E = digamma(phi) - digamma(row)[:, None]
    total = t * log_gamma(float(alpha.sum())) - t * float(np.sum(log_gamma(alpha)))
    total += float(((alpha[None, :] - phi) * E).sum())
    total += float(np.sum(log_gamma(phi))) - float(np.sum(log_gamma(row)))
    return E, total


def pl_log_table(rankings, lengths, theta):
    """Per-slot selection log probabilities for every subgroup.

    Returns L of shape (T, maxN, K) with
    L[i, n, k] = ln theta[k, a] - ln(1 - prefix_sum) for valid slots,
    -inf where the subgroup assigns zero mass (or an exhausted
    denominator), and 0 in padded slots.
    """
    rankings = np.asarray(rankings, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    theta = np.asarray(theta, dtype=np.float64)
    T, max_n = rankings.shape
    K = theta.shape[0]
    valid = rankings >= 0
    safe = np.where(valid, rankings, 0)
    # (T, maxN, K) slot weights and exclusive prefix sums
    th = np.moveaxis(theta[:, safe], 0, -1)
    th = np.where(valid[:, :, None], th, 0.0)
    csum = np.cumsum(th, axis=1)
    prefix = np.concatenate([np.zeros((T, 1, K)), csum[:, :-1, :]], axis=1)
    denom = 1.0 - prefix
    ok = (th > 0.0) & (denom > DENOM_TOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.where(ok, np.log(np.where(ok, th, 1.0)) - np.log(np.where(ok, denom, 1.0)), -np.inf)
    return np.where(valid[:, :, None], L, 0.0)


def delta_sweep(L, lengths, E):
    """Closed-form update of every delta row given membership scores E.

    E[i, k] is digamma(phi[i, k]) - digamma(sum_k phi[i, k]).  Returns the
    normalized (T, maxN, K) delta array (padded slots zeroed) and the
    per-individual slot sums (T, K).
    """
    L = np.asarray(L, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    E = np.asarray(E, dtype=np.float64)
    T, max_n, K = L.shape
    valid = np.arange(max_n)[None, :] < lengths[:, None]
    logits = L + E[:, None, :]
    m = logits.max(axis=2)
    if np.any(valid & ~np.isfinite(m)):
        raise ValueError("all subgroups assign zero mass to an observed selection")
    with np.errstate(invalid="ignore"):
        ex = np.where(np.isfinite(logits), np.exp(logits - m[:, :, None]), 0.0)
    delta = ex / np.where(valid, ex.sum(axis=2), 1.0)[:, :, None]
    delta = np.where(valid[:, :, None], delta, 0.0)
    return delta, delta.sum(axis=1)


def delta_terms(delta, L, lengths, E):
    """Delta-dependent pieces of the bound, with the 0 ln 0 = 0 convention.

    Returns (pl, context, entropy): sum delta * L, sum delta * E over
    slots, and -sum delta ln delta.  pl is -inf when positive delta sits
    on a zero-mass selection.
    """
    delta = np.asarray(delta, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    pos = delta > 0.0
    with np.errstate(invalid="ignore"):
        pl_contrib = np.where(pos, delta * L, 0.0)
    pl = float(pl_contrib.sum())
    context = float((delta.sum(axis=1) * E).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(pos, delta * np.log(np.where(pos, delta, 1.0)), 0.0).sum()
    return pl, context, float(ent)


def theta_grad_hess(rankings, lengths, delta_k, theta, barrier_weight):
    """Gradient and Hessian (V, V) of the barrier-augmented minimization
    objective for one (variable, subgroup) support vector."""
    rankings = np.asarray(rankings, dtype=np.int64)
    delta_k = np.asarray(delta_k, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    T, max_n = rankings.shape
    V = theta.shape[0]
    valid = rankings >= 0
    safe = np.where(valid, rankings, 0)
    onehot = np.zeros((T, max_n, V))
    ii, nn = np.nonzero(valid)
    onehot[ii, nn, safe[ii, nn]] = 1.0
    csum = np.cumsum(onehot, axis=1)
    prefix = np.concatenate([np.zeros((T, 1, V)), csum[:, :-1, :]], axis=1)
    prefix *= valid[:, :, None]
    denom = 1.0 - prefix @ theta
    dk = np.where(valid, delta_k, 0.0)
    direct = np.einsum("tn,tnv->v", dk, onehot)
    grad = -direct / theta
    grad -= np.einsum("tn,tnv->v", dk / denom, prefix)
    grad -= barrier_weight / theta
    hess = -np.einsum("tn,tnv,tnu->vu", dk / denom**2, prefix, prefix)
    hess[np.diag_indices(V)] += (direct + barrier_weight) / theta**2
    return grad, hess


def theta_objective(rankings, lengths, delta_k, theta, barrier_weight):
    """Barrier-augmented minimization objective for one support vector;
    +inf outside the feasible region."""
    rankings = np.asarray(rankings, dtype=np.int64)
    delta_k = np.asarray(delta_k, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta <= 0.0):
        return np.inf
    T, max_n = rankings.shape
    valid = rankings >= 0
    safe = np.where(valid, rankings, 0)
    th = np.where(valid, theta[safe], 0.0)
    csum = np.cumsum(th, axis=1)
    prefix = np.concatenate([np.zeros((T, 1)), csum[:, :-1]], axis=1)
    denom = 1.0 - prefix
    if np.any(valid & (denom <= DENOM_TOL)):
        return np.inf
    dk = np.where(valid, delta_k, 0.0)
    logterm = np.where(valid, np.log(np.where(valid, th, 1.0)) - np.log(np.where(valid, denom, 1.0)), 0.0)
    return float(-(dk * logterm).sum() - barrier_weight * np.log(theta).sum())
