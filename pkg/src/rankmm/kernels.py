"""Backend dispatch for the hot per-variable kernels.

The compiled Cython module is used when available; set the environment
variable ``RANKMM_PURE_PYTHON=1`` (or anything non-empty) to force the
NumPy fallback.  Both backends implement identical contracts and agree to
floating-point roundoff; see tests/test_kernels.py.
"""
from __future__ import annotations

import os

if os.environ.get("RANKMM_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
DENOM_TOL = _impl.DENOM_TOL

dirichlet_terms = _impl.dirichlet_terms
pl_log_table = _impl.pl_log_table
delta_sweep = _impl.delta_sweep
delta_terms = _impl.delta_terms
theta_grad_hess = _impl.theta_grad_hess
theta_objective = _impl.theta_objective
