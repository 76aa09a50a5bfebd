"""Timing comparison of the compiled and pure NumPy kernel backends.

Run as a script:

    python benchmarks/bench_kernels.py [--t 2000] [--reps 20]

Times every kernel on a synthetic workload shaped like the fitting hot
path (T individuals, two variables, K=3), plus one full E-step sweep loop
through the public driver with each backend forced in a subprocess.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _workload(t, rng):
    from rankmm.model import ModelParams, generate_dataset

    theta1 = np.array(
        [
            [0.70, 0.12, 0.06, 0.04, 0.03, 0.03, 0.02],
            [0.02, 0.03, 0.03, 0.04, 0.06, 0.12, 0.70],
            [0.04, 0.03, 0.70, 0.03, 0.12, 0.04, 0.04],
        ]
    )
    theta2 = np.array(
        [
            [0.72, 0.14, 0.08, 0.04, 0.02],
            [0.02, 0.04, 0.08, 0.14, 0.72],
            [0.06, 0.72, 0.08, 0.08, 0.06],
        ]
    )
    truth = ModelParams(np.array([0.10, 0.07, 0.05]), [theta1, theta2]).validate()
    data, _, _ = generate_dataset(truth, t, [7, 5], rng)
    return truth, data


def _time(fn, reps):
    best = np.inf
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(t, reps):
    from rankmm import kernels
    from rankmm import _kernels_py as pure

    rng = np.random.default_rng(0)
    truth, data = _workload(t, rng)
    theta = truth.theta[0]
    rankings, lengths = data.rankings[0], data.lengths[0]
    k = truth.K
    phi = rng.uniform(0.1, 5.0, (t, k))
    table = pure.pl_log_table(rankings, lengths, theta)
    e_scores, _ = pure.dirichlet_terms(phi, truth.alpha)
    delta, _ = pure.delta_sweep(table, lengths, e_scores)
    delta_k = np.ascontiguousarray(delta[:, :, 0])

    cases = {
        "pl_log_table": lambda m: lambda: m.pl_log_table(rankings, lengths, theta),
        "delta_sweep": lambda m: lambda: m.delta_sweep(table, lengths, e_scores),
        "delta_terms": lambda m: lambda: m.delta_terms(delta, table, lengths, e_scores),
        "dirichlet_terms": lambda m: lambda: m.dirichlet_terms(phi, truth.alpha),
        "theta_grad_hess": lambda m: lambda: m.theta_grad_hess(
            rankings, lengths, delta_k, theta[0], 1e-3
        ),
        "theta_objective": lambda m: lambda: m.theta_objective(
            rankings, lengths, delta_k, theta[0], 1e-3
        ),
    }
    backends = [("python", pure)]
    if kernels.BACKEND == "cython":
        backends.append(("cython", kernels))
    else:
        print("note: compiled backend unavailable; timing the fallback only")

    print(f"kernel timings, T={t}, best of {reps} (ms):")
    header = f"{'kernel':<18}" + "".join(f"{name:>12}" for name, _ in backends)
    print(header + ("     speedup" if len(backends) == 2 else ""))
    for case, make in cases.items():
        times = [_time(make(mod), reps) * 1e3 for _, mod in backends]
        row = f"{case:<18}" + "".join(f"{ms:12.3f}" for ms in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)


def bench_estep(t):
    """One full E-step per backend, each in a fresh subprocess so the
    dispatch picks the right module."""
    here = os.path.dirname(os.path.abspath(__file__))
    code = (
        f"import numpy as np, time, sys; sys.path.insert(0, {here!r})\n"
        "from bench_kernels import _workload\n"
        "from rankmm.estep import run_estep\n"
        "from rankmm.model import VariationalParams\n"
        "from rankmm import kernels\n"
        f"truth, data = _workload({t}, np.random.default_rng(0))\n"
        "var = VariationalParams.uniform_init(data, truth.K)\n"
        "start = time.perf_counter()\n"
        "res = run_estep(data, truth, var)\n"
        "dt = time.perf_counter() - start\n"
        "print('%8s: %9.1f ms, %d sweeps, elbo %.6f'\n"
        "      % (kernels.BACKEND, dt * 1e3, res.iters, res.elbo))\n"
    )
    print(f"\nfull E-step to tolerance, T={t}:", flush=True)
    for env_val in ("", "1"):
        env = dict(os.environ, RANKMM_PURE_PYTHON=env_val)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--t", type=int, default=2000, help="individuals")
    parser.add_argument("--reps", type=int, default=20, help="repetitions per kernel")
    args = parser.parse_args()
    bench_kernels(args.t, args.reps)
    bench_estep(args.t)


if __name__ == "__main__":
    main()
