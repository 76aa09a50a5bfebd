"""Command-line interface.

Subcommands: ``fit``, ``select-k``, ``bootstrap``, ``simulate``, ``gof``,
``report``.  Every run writes a JSON document that embeds a manifest
(config echo, seed, version, dataset digest, convergence flags), so the
output is reproducible bit-for-bit from the command line alone; wall-clock
time goes to stderr to keep the files byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import __version__
from .dataio import (
    DataError,
    RunManifest,
    dataset_digest,
    load_dataset,
    load_results,
    save_results,
)
from .driver import (
    FitConfig,
    bootstrap_ci,
    fit,
    goodness_of_fit,
    report_summaries,
    select_k,
)
from .estep import run_estep
from .model import (
    FixedSubgroupSpec,
    ModelParams,
    RankDataset,
    VariationalParams,
    generate_dataset,
)
from .mstep import BarrierSchedule

__all__ = ["main", "build_parser"]


def _add_data_args(p):
    p.add_argument("--data", required=True, help="long-format CSV of rank records")
    p.add_argument("--schema", required=True, help="JSON schema for the variables")


def _add_fit_args(p):
    p.add_argument("--k", type=int, required=True, help="number of subgroups")
    p.add_argument("--fixed-uniform", action="store_true",
                   help="append a fixed uniform-noise subgroup")
    p.add_argument("--fixed-presentation", action="store_true",
                   help="append a fixed presentation-ordered subgroup")
    p.add_argument("--sharpness", type=float, default=0.01,
                   help="decay of the presentation-ordered support vector")
    p.add_argument("--init", choices=("random", "seeded", "two_step"),
                   default="seeded", help="initialization strategy")
    p.add_argument("--restarts", type=int, default=1,
                   help="independent restarts; the best final bound wins")
    p.add_argument("--outer-tol", type=float, default=1e-8)
    p.add_argument("--estep-tol", type=float, default=1e-6)
    p.add_argument("--max-outer-iters", type=int, default=200)
    p.add_argument("--b0", type=float, default=10.0,
                   help="base of the barrier continuation schedule")
    p.add_argument("--barrier-stages", type=int, default=4)
    p.add_argument("--dirichlet-a", type=float, default=1.0,
                   help="concentration of random support-vector draws")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankmm",
        description="mixed-membership Plackett-Luce models for partial rankings",
    )
    parser.add_argument("--version", action="version", version=f"rankmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and write the results document")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select-k", help="held-out-bound selection of the subgroup count")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--k-range", default=None,
                   help="comma-separated candidate counts (default: 1..k)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bootstrap", help="empirical bootstrap intervals around a fit")
    _add_data_args(p)
    p.add_argument("--fit", required=True, help="results document from `rankmm fit`")
    p.add_argument("--bootstrap-b", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--outer-tol", type=float, default=1e-6)
    p.add_argument("--estep-tol", type=float, default=1e-6)
    p.add_argument("--max-outer-iters", type=int, default=120)
    p.add_argument("--b0", type=float, default=100.0)
    p.add_argument("--barrier-stages", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset from saved parameters")
    p.add_argument("--params", required=True,
                   help="fit results document or bare parameter JSON")
    p.add_argument("--schema", default=None,
                   help="optional schema; its variable ids name the output columns")
    p.add_argument("--t", type=int, required=True, help="number of individuals")
    p.add_argument("--n", default=None,
                   help="comma-separated rank levels per variable (default: full)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path for the simulated records")

    p = sub.add_parser("gof", help="first-choice goodness-of-fit simulation table")
    _add_data_args(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--s", type=int, default=1000, help="number of simulated datasets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="CSV of first-choice counts; simulation_index 0 is observed")

    p = sub.add_parser("report", help="summary tables from a results document")
    p.add_argument("--fit", required=True)
    p.add_argument("--conditional", default=None,
                   help="comma-separated subgroups for conditional memberships")
    p.add_argument("--out", required=True)
    return parser


def _fixed_specs(args):
    specs = []
    if args.fixed_uniform:
        specs.append(FixedSubgroupSpec("uniform"))
    if args.fixed_presentation:
        specs.append(FixedSubgroupSpec("presentation_ordered", args.sharpness))
    return tuple(specs)


def _fit_config(args, k=None, seed=None) -> FitConfig:
    return FitConfig(
        K=k if k is not None else args.k,
        fixed_subgroups=_fixed_specs(args),
        outer_tol=args.outer_tol,
        estep_tol=args.estep_tol,
        max_outer_iters=args.max_outer_iters,
        seed=seed if seed is not None else args.seed,
        init=args.init,
        dirichlet_a=args.dirichlet_a,
        barrier=BarrierSchedule(args.b0, args.barrier_stages),
    )


def _config_echo(args, skip=("data", "schema", "out", "fit", "params", "jobs")) -> dict:
    # jobs is excluded: parallel and serial runs reduce identically, so the
    # result file must not depend on it
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and k != "command"}


def _params_to_doc(params: ModelParams) -> dict:
    return {
        "alpha": params.alpha,
        "theta": [t for t in params.theta],
        "fixed_mask": params.fixed_mask.astype(int),
    }


def _params_from_doc(doc: dict) -> ModelParams:
    if "params" in doc:
        doc = doc["params"]
    return ModelParams(
        np.asarray(doc["alpha"], dtype=np.float64),
        [np.asarray(t, dtype=np.float64) for t in doc["theta"]],
        np.asarray(doc.get("fixed_mask", np.zeros(len(doc["alpha"]))), dtype=bool),
    ).validate()


def _spawned_seed(root: int, *key) -> int:
    return int(np.random.SeedSequence(root, spawn_key=tuple(key)).generate_state(1)[0])


def _best_restart(data: RankDataset, args):
    best = None
    for r in range(args.restarts):
        cfg = _fit_config(args, seed=_spawned_seed(args.seed, r))
        result = fit(data, cfg)
        if best is None or result.elbo > best.elbo:
            best = result
    return best


def _membership_block(result) -> dict:
    memberships = result.var.phi / result.var.phi.sum(axis=1, keepdims=True)
    return {
        "mean": memberships.mean(axis=0),
        "modal_counts": np.bincount(
            memberships.argmax(axis=1), minlength=result.params.K
        ),
        "phi": result.var.phi,
    }


def _cmd_fit(args) -> int:
    data, load_report = load_dataset(args.data, args.schema)
    result = _best_restart(data, args)
    summaries = report_summaries(result)
    manifest = RunManifest(
        command="fit",
        config=_config_echo(args),
        seed=args.seed,
        version=__version__,
        dataset_digest=dataset_digest(data),
        convergence={
            "converged": bool(result.converged),
            "iters": int(result.iters),
            "alpha_converged": bool(result.diagnostics.get("alpha_converged", True)),
        },
    )
    save_results(
        {
            "params": _params_to_doc(result.params),
            "relative_frequencies": summaries["relative_frequencies"],
            "support_ratios": summaries["support_ratios"],
            "elbo_trace": result.elbo_trace,
            "elbo": result.elbo,
            "memberships": _membership_block(result),
            "load_report": {k: v for k, v in load_report.items() if k != "dropped_ids"},
            "manifest": manifest.to_dict(),
        },
        args.out,
    )
    return 0


def _cmd_select_k(args) -> int:
    data, _ = load_dataset(args.data, args.schema)
    if args.k_range:
        k_range = [int(s) for s in args.k_range.split(",")]
    else:
        k_range = list(range(1, args.k + 1))
    cfg = _fit_config(args, k=max(k_range))
    best_k, table = select_k(
        data, k_range, args.restarts, args.split_seed, cfg, n_jobs=args.jobs
    )
    manifest = RunManifest(
        command="select-k",
        config=_config_echo(args),
        seed=args.seed,
        version=__version__,
        dataset_digest=dataset_digest(data),
    )
    save_results(
        {
            "best_k": best_k,
            "held_out_elbo": {str(k): v for k, v in table},
            "manifest": manifest.to_dict(),
        },
        args.out,
    )
    return 0


def _cmd_bootstrap(args) -> int:
    data, _ = load_dataset(args.data, args.schema)
    fit_doc = load_results(args.fit)
    params = _params_from_doc(fit_doc)
    es = run_estep(
        data, params, VariationalParams.uniform_init(data, params.K), args.estep_tol
    )
    from .driver import FitResult

    fitted = FitResult(params, es.var, np.asarray([es.elbo]), True, es.iters)
    cfg = FitConfig(
        K=params.K,
        outer_tol=args.outer_tol,
        estep_tol=args.estep_tol,
        max_outer_iters=args.max_outer_iters,
        seed=args.seed,
        init="provided",
        init_params=params,
        barrier=BarrierSchedule(args.b0, args.barrier_stages),
    )
    boot = bootstrap_ci(data, fitted, args.bootstrap_b, args.level, cfg, n_jobs=args.jobs)
    manifest = RunManifest(
        command="bootstrap",
        config=_config_echo(args),
        seed=args.seed,
        version=__version__,
        dataset_digest=dataset_digest(data),
        convergence={"n_replicates": boot.n_replicates, "n_failed": boot.n_failed},
    )
    save_results(
        {
            "level": boot.level,
            "alpha": {"point": boot.alpha_point, "low": boot.alpha_low, "high": boot.alpha_high},
            "relative_frequencies": {
                "point": boot.rel_freq_point,
                "low": boot.rel_freq_low,
                "high": boot.rel_freq_high,
            },
            "theta": {
                "point": boot.theta_point,
                "low": boot.theta_low,
                "high": boot.theta_high,
            },
            "manifest": manifest.to_dict(),
        },
        args.out,
    )
    return 0


def _cmd_simulate(args) -> int:
    params = _params_from_doc(load_results(args.params))
    if args.n:
        levels = [int(s) for s in args.n.split(",")]
    else:
        levels = list(params.n_alternatives)
    names = [f"v{j}" for j in range(params.J)]
    if args.schema:
        from .dataio import load_schema

        schema = load_schema(args.schema)
        declared = tuple(entry["n_alternatives"] for entry in schema)
        if declared != params.n_alternatives:
            raise DataError(
                f"schema alternative counts {declared} do not match the "
                f"parameters {params.n_alternatives}"
            )
        names = [entry["id"] for entry in schema]
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    data, _, _ = generate_dataset(params, args.t, levels, rng)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("individual_id,variable_id,rank_level,alternative\n")
        for i in range(data.T):
            for j in range(data.J):
                for n in range(int(data.lengths[j][i])):
                    fh.write(
                        f"i{i:06d},{names[j]},{n + 1},{int(data.rankings[j][i, n]) + 1}\n"
                    )
    return 0


def _cmd_gof(args) -> int:
    data, _ = load_dataset(args.data, args.schema)
    params = _params_from_doc(load_results(args.fit))
    from .driver import FitResult

    fitted = FitResult(
        params,
        VariationalParams.uniform_init(data, params.K),
        np.asarray([0.0]),
        True,
        0,
    )
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    gof = goodness_of_fit(fitted, data, args.s, rng)
    names = data.variable_ids or [f"v{j}" for j in range(data.J)]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("variable,alternative,simulation_index,first_choice_count\n")
        for j in range(data.J):
            for v in range(data.n_alternatives[j]):
                fh.write(f"{names[j]},{v + 1},0,{int(gof.observed_counts[j, v])}\n")
                for s in range(args.s):
                    fh.write(f"{names[j]},{v + 1},{s + 1},{int(gof.sim_counts[s, j, v])}\n")
    return 0


def _cmd_report(args) -> int:
    doc = load_results(args.fit)
    params = _params_from_doc(doc)
    phi = np.asarray(doc["memberships"]["phi"], dtype=np.float64)
    from .driver import FitResult

    dummy_data_free = VariationalParams(phi, [np.zeros((phi.shape[0], 1, params.K))])
    fitted = FitResult(params, dummy_data_free, np.asarray(doc["elbo_trace"]), True, 0)
    keep = [int(s) for s in args.conditional.split(",")] if args.conditional else None
    summaries = report_summaries(fitted, conditional_keep=keep)
    out = {k: v for k, v in summaries.items() if k != "memberships"}
    out["membership_mean"] = summaries["memberships"].mean(axis=0)
    save_results(out, args.out)
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "select-k": _cmd_select_k,
    "bootstrap": _cmd_bootstrap,
    "simulate": _cmd_simulate,
    "gof": _cmd_gof,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        status = _COMMANDS[args.command](args)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"rankmm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(
        f"rankmm {args.command}: done in {time.perf_counter() - start:.2f}s",
        file=sys.stderr,
    )
    return status


if __name__ == "__main__":
    sys.exit(main())
