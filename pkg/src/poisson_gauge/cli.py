"""Command-line entry point: one subcommand per pipeline stage plus the benchmark.

Stages hand off through JSON files::

    structure -> weights -> gauge -> solve -> residual

Exit codes: 0 success, 2 usage error, 3 validation failure, 4 numeric fault,
5 I/O failure. Relative output paths are resolved against
``$POISSON_GAUGE_OUTDIR`` when it is set.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .chain import ChainValidationError, Mrp, Sampler, load_chain, validate
from .gauge import EpisodeCapExceeded, GaugeMap, PhaseWeights, estimate_weights, exact_weights, required_m
from .oracle import ConvergenceError, exact_solve, quotient_diagnostics
from .solver import DEFAULT_SCHEDULE, SaConfig, StepSchedule, estimate_residual, gain_profile, oracle_variance, projected_sa
from .structure import (
    ChainStructure,
    analyze_structure,
    budget_ceil,
    exact_support_graph,
    learn_support_graph,
    min_positive_probability,
    required_k,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
OUTDIR_ENV = "POISSON_GAUGE_OUTDIR"
COMMANDS = ("validate", "structure", "weights", "gauge", "solve", "residual", "oracle", "bench", "plan")


class UsageError(Exception):
    pass


def _out_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(OUTDIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        _out_path(path).write_text(text)


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _seed(args) -> int:
    return args.stage_seed if getattr(args, "stage_seed", None) is not None else args.seed


def _chain(args) -> Mrp:
    return load_chain(args.chain, args.tol)


def _structure_for(mrp: Mrp, args) -> ChainStructure:
    if getattr(args, "structure", None):
        return ChainStructure.from_json(_read_json(args.structure))
    if getattr(args, "K", None):
        return analyze_structure(learn_support_graph(mrp, args.K, Sampler(_seed(args))))
    return analyze_structure(exact_support_graph(mrp.P))


def _weights_for(mrp: Mrp, st: ChainStructure, args) -> PhaseWeights:
    if getattr(args, "M", None):
        return estimate_weights(mrp, st, args.M, Sampler(_seed(args)), threads=args.threads)
    return exact_weights(mrp.P, st)


# -- subcommands ---------------------------------------------------------------------------------


def cmd_validate(args) -> int:
    with open(args.chain) as fh:
        mrp = Mrp.from_json(json.load(fh))
    report = validate(mrp, args.tol)
    _write_json({"ok": report.ok, "issues": report.issues}, args.out)
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_structure(args) -> int:
    mrp = _chain(args)
    if args.K:
        graph = learn_support_graph(mrp, args.K, Sampler(_seed(args)))
    else:
        graph = exact_support_graph(mrp.P)
    st = analyze_structure(graph)
    obj = st.to_json()
    obj["source"] = {"K": args.K, "seed": _seed(args)} if args.K else "exact"
    _write_json(obj, args.out)
    return EXIT_OK


def cmd_weights(args) -> int:
    mrp = _chain(args)
    st = _structure_for(mrp, args)
    _write_json(_weights_for(mrp, st, args).to_json(), args.out)
    return EXIT_OK


def cmd_gauge(args) -> int:
    _write_json(GaugeMap(PhaseWeights.from_json(_read_json(args.weights))).to_json(), args.out)
    return EXIT_OK


def _gauge_for_solve(mrp: Mrp, args) -> GaugeMap:
    if args.gauge_file:
        return GaugeMap.from_json(_read_json(args.gauge_file))
    if args.gauge == "exact":
        st = analyze_structure(exact_support_graph(mrp.P))
        return GaugeMap(exact_weights(mrp.P, st))
    st = analyze_structure(learn_support_graph(mrp, args.K, Sampler(_seed(args))))
    return GaugeMap(estimate_weights(mrp, st, args.M, Sampler(_seed(args)), threads=args.threads))


def cmd_solve(args) -> int:
    mrp = _chain(args)
    gauge = _gauge_for_solve(mrp, args)
    seed = _seed(args)
    cfg = SaConfig(args.schedule, args.T, min(args.log_every, max(args.T, 1)), seed)
    reference = None
    if gauge.weights.kind == "exact":
        reference = exact_solve(mrp, gauge).v_star
    monitor = (lambda t, v: float(np.max(np.abs(v - reference)))) if reference is not None else None
    v, trace = projected_sa(mrp, gauge, cfg, monitor=monitor)
    res = estimate_residual(mrp, v, gauge, args.J, Sampler(seed), iteration=args.T)
    out = {
        "v_T": v.tolist(),
        "theta": res.theta.tolist(),
        "g_hat": res.g_hat.tolist(),
        "gain_profile": gain_profile(res, gauge.weights, gauge.structure).tolist(),
        "anchors": list(gauge.anchors),
        "J": args.J,
        "T": args.T,
        "seed": seed,
        "schedule": str(args.schedule),
        "gauge": gauge.weights.kind,
        "sigma_sq": oracle_variance(mrp, v),
    }
    _write_json(out, args.out)
    if args.trace:
        with open(_out_path(args.trace), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "sup_norm", "err_v_star"])
            for t, sup, err in trace.rows():
                w.writerow([t, f"{sup:.17g}", "" if err is None else f"{err:.17g}"])
    return EXIT_OK


def cmd_residual(args) -> int:
    mrp = _chain(args)
    gauge = GaugeMap.from_json(_read_json(args.gauge_file))
    v = np.asarray(_read_json(args.solution)["v_T"], dtype=np.float64)
    res = estimate_residual(mrp, v, gauge, args.J, Sampler(_seed(args)))
    obj = res.to_json()
    obj["gain_profile"] = gain_profile(res, gauge.weights, gauge.structure).tolist()
    obj["anchors"] = list(gauge.anchors)
    _write_json(obj, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    mrp = _chain(args)
    if args.gauge_file:
        gauge = GaugeMap.from_json(_read_json(args.gauge_file))
        if gauge.weights.kind != "exact":
            raise UsageError("oracle needs an exact gauge")
    else:
        gauge = GaugeMap(exact_weights(mrp.P, analyze_structure(exact_support_graph(mrp.P))))
    sol = exact_solve(mrp, gauge)
    diag = quotient_diagnostics(mrp, gauge)
    _write_json({"solution": sol.to_json(), "diagnostics": diag.to_json(), "anchors": list(gauge.anchors)}, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.action == "summarize":
        if not args.curves:
            raise UsageError("bench summarize requires --curves")
        rows = bench.summarize(bench.read_curves(args.curves))
        bench.write_summary(rows, _out_path(args.out or "summary.csv"))
        return EXIT_OK
    names = [s.name for s in bench.suite()] if args.instance == "all" else [args.instance]
    seeds = tuple(args.seeds) if args.seeds else (_seed(args),)
    td = args.T if args.T is not None else (4000 if args.scale > 1 else 12000)
    cfg = bench.ExperimentConfig(td_iterations=td, log_every=args.log_every, K=args.K, M=args.M, J=args.J,
                                 seeds=seeds, schedule=args.schedule)
    curves = []
    for name in names:
        spec = bench.suite_spec(name).scaled(args.scale)
        curves.extend(bench.run_experiment(spec, cfg, threads=args.threads))
    bench.write_curves(curves, _out_path(args.out or "curves.csv"))
    return EXIT_OK


def cmd_plan(args) -> int:
    h_abs = None
    if args.chain:
        mrp = _chain(args)
        st = analyze_structure(exact_support_graph(mrp.P))
        gauge = GaugeMap(exact_weights(mrp.P, st))
        h_abs = quotient_diagnostics(mrp, gauge).h_abs
        fill = {"n": mrp.n, "p_min": min_positive_probability(mrp.P), "t_count": len(st.transient), "N": st.N}
        for k, v in fill.items():
            if getattr(args, k) is None:
                setattr(args, k, v)
    for flag, dest in (("--n", "n"), ("--p-min", "p_min"), ("--t-count", "t_count"), ("--N", "N"),
                       ("--eps", "eps"), ("--delta", "delta")):
        if getattr(args, dest) is None:
            raise UsageError(f"missing required flag {flag}")
    K = required_k(args.p_min, args.n, args.delta)
    eps_b = args.eps / (3 * args.N)
    M = required_m(eps_b, args.t_count, args.N, args.delta) if args.t_count > 0 else 0
    T = budget_ceil(1.0 / args.eps ** 2)
    total = args.n * K + args.n * T
    if h_abs is not None:
        total += args.t_count * M * h_abs
    _write_json({
        "K": K, "M": M, "T": T, "eps_b": eps_b, "h_abs": h_abs,
        "absorption_term_included": h_abs is not None, "expected_queries": total,
        "inputs": {"n": args.n, "p_min": args.p_min, "t_count": args.t_count, "N": args.N,
                   "eps": args.eps, "delta": args.delta},
    }, args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------------


def _seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _schedule(text: str) -> StepSchedule:
    try:
        return StepSchedule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="poisson-gauge",
        description="Gauge-fixed Poisson equation solver for multichain and periodic Markov reward processes.",
        epilog=f"Exit codes: 0 ok, 2 usage, 3 validation, 4 numeric fault, 5 I/O. "
               f"Relative outputs go under ${OUTDIR_ENV} when set.",
    )
    p.add_argument("--seed", type=int, default=0, help="global seed from which all random streams derive (default 0)")
    p.add_argument("--threads", type=_positive, default=1, help="worker threads; results do not depend on it")
    p.add_argument("--tol", type=float, default=1e-9, help="row-sum tolerance for chain validation")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, chain=True, out_help="output path (stdout when omitted)"):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        if chain:
            sp.add_argument("--chain", required=True, help="chain JSON file {n, P, r, R}")
        sp.add_argument("--out", default=None, help=out_help)
        sp.add_argument("--seed", dest="stage_seed", metavar="SEED", type=int, default=None, help="override the global seed")
        return sp

    add("validate", cmd_validate, "check that a chain file is a valid Markov reward process")

    sp = add("structure", cmd_structure, "recurrent classes, periods, cyclic sets, and anchors")
    sp.add_argument("--K", type=_non_negative, default=None, help="samples per state; exact support when omitted")

    sp = add("weights", cmd_weights, "phase-offset absorption weights (exact or Monte Carlo)")
    sp.add_argument("--structure", help="structure JSON; recomputed from the chain when omitted")
    sp.add_argument("--K", type=_positive, default=None, help="learn the structure with K samples per state")
    sp.add_argument("--M", type=_positive, default=None, help="episodes per transient state; exact solve when omitted")

    sp = add("gauge", cmd_gauge, "build the anchor gauge map from a weights file", chain=False)
    sp.add_argument("--weights", required=True, help="weights JSON")

    sp = add("solve", cmd_solve, "projected stochastic approximation plus residual estimate")
    sp.add_argument("--gauge", choices=["exact", "estimated"], default="exact", help="gauge source (default exact)")
    sp.add_argument("--gauge-file", help="gauge JSON; overrides --gauge")
    sp.add_argument("--K", type=_positive, default=150, help="structure samples per state for --gauge estimated")
    sp.add_argument("--M", type=_positive, default=4000, help="absorption episodes for --gauge estimated")
    sp.add_argument("--T", type=_non_negative, default=12000, help="iterations (default 12000)")
    sp.add_argument("--log-every", type=_positive, default=120, help="trace period (default 120)")
    sp.add_argument("--schedule", type=_schedule, default=DEFAULT_SCHEDULE,
                    help="poly:alpha,gamma,offset or inv:alpha,t0 (default poly:1,0.65,500)")
    sp.add_argument("--J", type=_positive, default=220, help="samples per anchor for the residual (default 220)")
    sp.add_argument("--trace", help="CSV path for the iterate trace")

    sp = add("residual", cmd_residual, "estimate residual coordinates at the anchors for a solved iterate")
    sp.add_argument("--gauge-file", required=True, help="gauge JSON")
    sp.add_argument("--solution", required=True, help="solve output JSON (reads v_T)")
    sp.add_argument("--J", type=_positive, default=220, help="samples per anchor (default 220)")

    sp = add("oracle", cmd_oracle, "exact solution and quotient diagnostics")
    sp.add_argument("--gauge-file", help="exact gauge JSON; built from the chain when omitted")

    sp = add("bench", cmd_bench, "run the benchmark suite or summarize curves", chain=False,
             out_help="output CSV (default curves.csv, or summary.csv for summarize)")
    sp.add_argument("action", nargs="?", choices=["run", "summarize"], default="run",
                    help="run the suite (default) or summarize a curves CSV")
    sp.add_argument("--instance", default="all", choices=["all"] + [s.name for s in bench.suite()],
                    help="benchmark chain or all six (default all)")
    sp.add_argument("--scale", type=_positive, default=1, help="divide phase sizes by this factor; >1 uses T=4000")
    sp.add_argument("--seeds", type=_seeds, default=None, help="comma-separated seeds (default: the global seed)")
    sp.add_argument("--T", type=_non_negative, default=None, help="TD iterations (default 12000, or 4000 when scaled)")
    sp.add_argument("--log-every", type=_positive, default=120, help="curve logging period (default 120)")
    sp.add_argument("--K", type=_positive, default=150, help="structure samples per state (default 150)")
    sp.add_argument("--M", type=_positive, default=4000, help="absorption episodes per transient state (default 4000)")
    sp.add_argument("--J", type=_positive, default=220, help="residual samples per anchor (default 220)")
    sp.add_argument("--schedule", type=_schedule, default=DEFAULT_SCHEDULE,
                    help="step schedule, as for solve (default poly:1,0.65,500)")
    sp.add_argument("--curves", help="curves CSV to summarize")

    sp = add("plan", cmd_plan, "sample budgets K, M, T and the expected query count", chain=False)
    sp.add_argument("--chain", help="chain JSON; supplies H_abs and any missing flag")
    sp.add_argument("--n", type=_positive, help="number of states")
    sp.add_argument("--p-min", type=float, help="smallest positive transition probability")
    sp.add_argument("--t-count", type=_non_negative, help="number of transient states")
    sp.add_argument("--N", type=_positive, help="number of anchors (sum of periods)")
    sp.add_argument("--eps", type=float, help="target accuracy")
    sp.add_argument("--delta", type=float, default=0.05, help="failure probability (default 0.05)")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    stage = args.command
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChainValidationError, KeyError) as exc:
        print(f"error [{stage}]: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error [{stage}]: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (np.linalg.LinAlgError, FloatingPointError, ConvergenceError, EpisodeCapExceeded,
            bench.StageError, ValueError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
