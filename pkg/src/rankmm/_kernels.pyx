# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-variable kernels; contracts match rankmm._kernels_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

DENOM_TOL = 1e-14
cdef double _DENOM_TOL = 1e-14

BACKEND = "cython"

# Same shift-then-asymptotic-series recipe (and the same coefficients, in
# the same accumulation order) as rankmm.special, so both backends agree
# to the last few ulps.
cdef double _HALF_LOG_TWO_PI = 0.9189385332046727

cdef double[8] _LG_C
_LG_C[0] = 1.0 / 12.0
_LG_C[1] = -1.0 / 360.0
_LG_C[2] = 1.0 / 1260.0
_LG_C[3] = -1.0 / 1680.0
_LG_C[4] = 1.0 / 1188.0
_LG_C[5] = -691.0 / 360360.0
_LG_C[6] = 1.0 / 156.0
_LG_C[7] = -3617.0 / 122400.0

cdef double[7] _DG_C
_DG_C[0] = 1.0 / 12.0
_DG_C[1] = -1.0 / 120.0
_DG_C[2] = 1.0 / 252.0
_DG_C[3] = -1.0 / 240.0
_DG_C[4] = 1.0 / 132.0
_DG_C[5] = -691.0 / 32760.0
_DG_C[6] = 1.0 / 12.0


cdef inline double _lgamma(double x) nogil:
    cdef double z = x, shift = 0.0, inv2, series, term
    cdef int j
    while z < 8.0:
        shift += log(z)
        z += 1.0
    inv2 = 1.0 / (z * z)
    series = 0.0
    term = 1.0 / z
    for j in range(8):
        series += _LG_C[j] * term
        term *= inv2
    return (z - 0.5) * log(z) - z + _HALF_LOG_TWO_PI + series - shift


cdef inline double _digamma(double x) nogil:
    cdef double z = x, shift = 0.0, inv2, series, term
    cdef int j
    while z < 8.0:
        shift += 1.0 / z
        z += 1.0
    inv2 = 1.0 / (z * z)
    series = 0.0
    term = inv2
    for j in range(7):
        series += _DG_C[j] * term
        term *= inv2
    return log(z) - 0.5 / z - series - shift


def dirichlet_terms(phi, alpha):
    """Membership scores plus the phi/alpha block of the bound."""
    cdef double[:, :] pv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef double[:] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t T = pv.shape[0], K = pv.shape[1]
    e_arr = np.empty((T, K), dtype=np.float64)
    cdef double[:, :] ev = e_arr
    cdef Py_ssize_t i, k
    cdef double row, dg_row, total = 0.0, const_part, asum = 0.0, e, p
    for k in range(K):
        if av[k] <= 0.0 or not av[k] == av[k]:
            raise ValueError("dirichlet_terms requires strictly positive alpha")
        asum += av[k]
    const_part = _lgamma(asum)
    for k in range(K):
        const_part -= _lgamma(av[k])
    total = T * const_part
    for i in range(T):
        row = 0.0
        for k in range(K):
            p = pv[i, k]
            if p <= 0.0 or not p == p:
                raise ValueError("dirichlet_terms requires strictly positive phi")
            row += p
        dg_row = _digamma(row)
        total -= _lgamma(row)
        for k in range(K):
            p = pv[i, k]
            e = _digamma(p) - dg_row
            ev[i, k] = e
            total += (av[k] - p) * e + _lgamma(p)
    return e_arr, total


def pl_log_table(rankings, lengths, theta):
    """Per-slot selection log probabilities for every subgroup."""
    cdef cnp.int64_t[:, :] rk = np.ascontiguousarray(rankings, dtype=np.int64)
    cdef cnp.int64_t[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t T = rk.shape[0], max_n = rk.shape[1], K = th.shape[0]
    out_arr = np.zeros((T, max_n, K), dtype=np.float64)
    cdef double[:, :, :] out = out_arr
    cdef Py_ssize_t i, n, k, a
    cdef double consumed, w, denom
    for i in range(T):
        for k in range(K):
            consumed = 0.0
            for n in range(ln[i]):
                a = rk[i, n]
                w = th[k, a]
                denom = 1.0 - consumed
                if w > 0.0 and denom > _DENOM_TOL:
                    out[i, n, k] = log(w) - log(denom)
                else:
                    out[i, n, k] = -INFINITY
                consumed += w
    return out_arr


def delta_sweep(L, lengths, E):
    """Closed-form update of every delta row given membership scores E."""
    cdef double[:, :, :] lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef cnp.int64_t[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :] ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef Py_ssize_t T = lv.shape[0], max_n = lv.shape[1], K = lv.shape[2]
    delta_arr = np.zeros((T, max_n, K), dtype=np.float64)
    sums_arr = np.zeros((T, K), dtype=np.float64)
    cdef double[:, :, :] delta = delta_arr
    cdef double[:, :] sums = sums_arr
    cdef Py_ssize_t i, n, k
    cdef double m, tot, x
    for i in range(T):
        for n in range(ln[i]):
            m = -INFINITY
            for k in range(K):
                x = lv[i, n, k] + ev[i, k]
                if x > m:
                    m = x
            if m == -INFINITY:
                raise ValueError(
                    "all subgroups assign zero mass to an observed selection"
                )
            tot = 0.0
            for k in range(K):
                x = lv[i, n, k] + ev[i, k]
                if x == -INFINITY:
                    delta[i, n, k] = 0.0
                else:
                    delta[i, n, k] = exp(x - m)
                tot += delta[i, n, k]
            for k in range(K):
                delta[i, n, k] /= tot
                sums[i, k] += delta[i, n, k]
    return delta_arr, sums_arr


def delta_terms(delta, L, lengths, E):
    """(pl, context, entropy) pieces of the bound; 0 ln 0 = 0."""
    cdef double[:, :, :] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef double[:, :, :] lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef cnp.int64_t[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :] ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef Py_ssize_t T = dv.shape[0], K = dv.shape[2]
    cdef Py_ssize_t i, n, k
    cdef double pl = 0.0, context = 0.0, entropy = 0.0, d
    for i in range(T):
        for n in range(ln[i]):
            for k in range(K):
                d = dv[i, n, k]
                if d > 0.0:
                    pl += d * lv[i, n, k]
                    context += d * ev[i, k]
                    entropy -= d * log(d)
    return pl, context, entropy


def theta_grad_hess(rankings, lengths, delta_k, theta, double barrier_weight):
    """Gradient and Hessian of the barrier-augmented minimization objective."""
    cdef cnp.int64_t[:, :] rk = np.ascontiguousarray(rankings, dtype=np.int64)
    cdef cnp.int64_t[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :] dk = np.ascontiguousarray(delta_k, dtype=np.float64)
    cdef double[:] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t T = rk.shape[0], V = th.shape[0]
    grad_arr = np.zeros(V, dtype=np.float64)
    hess_arr = np.zeros((V, V), dtype=np.float64)
    direct_arr = np.zeros(V, dtype=np.float64)
    cdef double[:] grad = grad_arr
    cdef double[:, :] hess = hess_arr
    cdef double[:] direct = direct_arr
    prefix_arr = np.zeros(V, dtype=np.intp)
    cdef cnp.intp_t[:] pfx = prefix_arr
    cdef Py_ssize_t i, n, v, u, a, npfx
    cdef double consumed, denom, d, r, q
    for i in range(T):
        npfx = 0
        consumed = 0.0
        for n in range(ln[i]):
            a = rk[i, n]
            denom = 1.0 - consumed
            d = dk[i, n]
            direct[a] += d
            r = d / denom
            q = r / denom
            for v in range(npfx):
                grad[pfx[v]] -= r
                for u in range(npfx):
                    hess[pfx[v], pfx[u]] -= q
            pfx[npfx] = a
            npfx += 1
            consumed += th[a]
    for v in range(V):
        grad[v] -= (direct[v] + barrier_weight) / th[v]
        hess[v, v] += (direct[v] + barrier_weight) / (th[v] * th[v])
    return grad_arr, hess_arr


def theta_objective(rankings, lengths, delta_k, theta, double barrier_weight):
    """Barrier-augmented minimization objective; +inf if infeasible."""
    cdef cnp.int64_t[:, :] rk = np.ascontiguousarray(rankings, dtype=np.int64)
    cdef cnp.int64_t[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :] dk = np.ascontiguousarray(delta_k, dtype=np.float64)
    cdef double[:] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t T = rk.shape[0], V = th.shape[0]
    cdef Py_ssize_t i, n, v
    cdef double total = 0.0, consumed, denom
    for v in range(V):
        if th[v] <= 0.0:
            return INFINITY
        total -= barrier_weight * log(th[v])
    for i in range(T):
        consumed = 0.0
        for n in range(ln[i]):
            denom = 1.0 - consumed
            if denom <= _DENOM_TOL:
                return INFINITY
            total -= dk[i, n] * (log(th[rk[i, n]]) - log(denom))
            consumed += th[rk[i, n]]
    return total
