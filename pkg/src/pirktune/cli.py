"""Command-line interface.

Subcommands cover the full workflow (tune), single-variant code emission
(codegen), autotuning-strategy comparison on measured runtimes
(strategy-eval) and store inspection (db export).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import codegen, documents, pipeline, predict
from .errors import CodegenError, MeasurementError, PirktuneError
from .store import PredictionStore

EXIT_CODE_HELP = """exit codes:
  0  success
  2  command-line usage error
  3  description document malformed
  4  scenario validation failed
  5  code generation failed
  6  model evaluation failed
  7  prediction store I/O failed
  8  measurement input missing or inconsistent
  9  interpreter runtime error
  1  any other failure
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pirktune",
        description="Offline autotuning for parallel explicit ODE solver variants.",
        epilog=EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_args(p: argparse.ArgumentParser, with_sizes: bool = True) -> None:
        p.add_argument("--machine", required=True, help="machine description YAML")
        p.add_argument("--method", action="append", required=True,
                       help="ODE method YAML (repeatable)")
        p.add_argument("--ivp", action="append", required=True,
                       help="IVP YAML (repeatable)")
        p.add_argument("--templates-dir", required=True,
                       help="directory of kernel template YAMLs")
        p.add_argument("--skeletons-dir", required=True,
                       help="directory of implementation skeleton YAMLs")
        if with_sizes:
            p.add_argument("--n", type=int, help="fixed ODE system size")
            p.add_argument("--n-max", type=int,
                           help="upper bound for working-set sampling")
        p.add_argument("--cores", default="1",
                       help="comma-separated core counts, e.g. 1,2,4,8")
        p.add_argument("--deviation", type=float, default=5.0,
                       help="selection deviation in percent (default 5)")

    tune = sub.add_parser("tune", help="run the full tuning workflow")
    add_scenario_args(tune)
    tune.add_argument("--store", help="prediction store path "
                      "(default $PIRKTUNE_STORE or <out-dir>/predictions.db)")
    tune.add_argument("--out-dir", help="directory for reports and generated code")
    tune.add_argument("--barrier-bench",
                      help="CSV (tau,seconds) of barrier benchmark samples")
    tune.add_argument("--seed", type=int, default=0,
                      help="recorded in the report for reproducibility")

    gen = sub.add_parser("codegen", help="emit specialized code for one variant")
    add_scenario_args(gen, with_sizes=False)
    gen.add_argument("--n", type=int, required=True, help="fixed ODE system size")
    gen.add_argument("--variant", required=True, help="implementation variant id")
    gen.add_argument("--out-dir", help="write <variant>.c here instead of stdout")

    ev = sub.add_parser("strategy-eval",
                        help="compare autotuning strategies against measurements")
    ev.add_argument("--measurements", required=True,
                    help="CSV with header variant,tau,n,seconds")
    ev.add_argument("--report", required=True,
                    help="machine-readable report from a tune run")
    ev.add_argument("--deviation", type=float, nargs="*", default=[5.0, 10.0],
                    help="preselection deviations in percent (default: 5 10)")
    ev.add_argument("--random-k", type=int, default=20,
                    help="sample size of the random strategy (default 20)")
    ev.add_argument("--seed", type=int, default=0, help="random strategy seed")
    ev.add_argument("--out", help="write the comparison as JSON here")

    db = sub.add_parser("db", help="prediction store inspection")
    db_sub = db.add_subparsers(dest="db_command", required=True)
    export = db_sub.add_parser("export", help="dump the store as CSV")
    export.add_argument("--store", required=True)
    export.add_argument("--out", required=True, help="CSV output path")

    return parser


def _load_scenario(args, n: int | None, n_max: int | None) -> documents.ValidatedScenario:
    taus = [int(t) for t in str(args.cores).split(",") if t.strip()]
    scenario = documents.TuningScenario(
        machine=documents.load_machine(args.machine),
        methods=[documents.load_method(p) for p in args.method],
        ivps=[documents.load_ivp(p) for p in args.ivp],
        templates=[documents.load_template(p)
                   for p in sorted(Path(args.templates_dir).glob("*.yml"))],
        skeletons=[documents.load_skeleton(p)
                   for p in sorted(Path(args.skeletons_dir).glob("*.yml"))],
        taus=taus,
        deviation=args.deviation,
        n=n,
        n_max=n_max,
    )
    return documents.validate_scenario(scenario)


def _store_path(args) -> str:
    if getattr(args, "store", None):
        return args.store
    env = os.environ.get("PIRKTUNE_STORE")
    if env:
        return env
    if getattr(args, "out_dir", None):
        return str(Path(args.out_dir) / "predictions.db")
    return "pirktune-predictions.db"


def _cmd_tune(args) -> int:
    scenario = _load_scenario(args, args.n, args.n_max)
    comm_samples = None
    if args.barrier_bench:
        comm_samples = predict.load_barrier_benchmark(args.barrier_bench)
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    with PredictionStore(_store_path(args)) as store:
        report = pipeline.run_tune(scenario, store, out_dir, comm_samples)
    if out_dir is not None:
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "report.txt").write_text(report.to_text())
        print(f"report written to {out_dir / 'report.json'}")
    else:
        print(report.to_text(), end="")
    print(f"cycle-model evaluations this run: {report.ecm_evaluations}",
          file=sys.stderr)
    return 0


def _cmd_codegen(args) -> int:
    scenario = _load_scenario(args, args.n, None)
    variants = codegen.enumerate_variants(scenario.skeletons, scenario.templates)
    by_id = {v.variant_id: v for v in variants}
    if args.variant not in by_id:
        near = codegen.suggest_nearest(args.variant, by_id)
        hint = f"; closest match: {near}" if near else ""
        raise CodegenError(f"unknown variant id {args.variant!r}{hint}")
    variant = by_id[args.variant]
    skeleton = next(s for s in scenario.skeletons if s.name == variant.skeleton_name)
    method = scenario.methods[0]
    ivp = scenario.ivps[0]
    text = codegen.generate_variant_code(
        variant, method, ivp, args.n, scenario.templates, skeleton
    )
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{variant.variant_id}.c"
        path.write_text(text)
        print(f"wrote {path}")
    else:
        print(text, end="")
    return 0


def _cmd_strategy_eval(args) -> int:
    measured = predict.load_measurements(args.measurements)
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    total = doc["variants_total"]

    comparisons = []
    for result in doc["results"]:
        tau, n = result["tau"], result["n"]
        ranking = result["ranking"]
        local = {
            variant: seconds
            for (variant, mtau, mn), seconds in measured.items()
            if mtau == tau and mn == n
        }
        missing = [row["variant"] for row in ranking if row["variant"] not in local]
        if missing:
            raise MeasurementError(
                f"measurements missing for tau={tau} n={n}: {missing[:5]} "
                f"({len(missing)} total)"
            )
        preds = [
            predict.VariantPrediction(
                variant_id=row["variant"], tau=tau, n=n, theta=row["theta"],
                kernel_phis=(), t_com=row["t_com"], barriers=row["barriers"],
            )
            for row in ranking
        ]
        t_best = min(local.values())
        t_run_all = sum(local.values())
        rows = []
        strategies: list[tuple[str, tuple[str, ...]]] = [
            ("BestVariant", ()),
            ("RunAll", ()),
        ]
        for deviation in args.deviation:
            selection = predict.rank_and_select(preds, deviation)
            strategies.append(
                (f"OffsitePreselect{deviation:g}", selection.selected)
            )
        strategies.append(("RandomSelect", ()))
        for name, selected in strategies:
            chosen, t_at = predict.run_strategy(
                name if not name.startswith("OffsitePreselect") else "OffsitePreselect",
                local, selected, k=args.random_k, seed=args.seed,
            )
            t_step = local[chosen]
            loss = (t_step - t_best) / t_best * 100.0
            if name.startswith("OffsitePreselect"):
                subset = list(selected)
                overhead = predict.tuning_overhead([local[v] for v in subset], t_best)
            elif name == "RunAll":
                subset = [row["variant"] for row in ranking]
                overhead = predict.tuning_overhead(list(local.values()), t_best)
            elif name == "RandomSelect":
                subset = []  # sampled inside run_strategy; size is random-k
                overhead = None
            else:
                subset = [chosen]
                overhead = 0.0
            gain = predict.performance_gain(t_run_all, t_at)
            rows.append({
                "strategy": name,
                "chosen": chosen,
                "t_step": t_step,
                "performance_loss_pct": loss,
                "subset_size": len(subset) if subset else (
                    min(args.random_k, total) if name == "RandomSelect" else 1),
                "tuning_overhead_pct": overhead,
                "performance_gain_pct": gain,
                "t_strategy": t_at,
            })
        comparisons.append({"tau": tau, "n": n, "strategies": rows})

    _print_strategy_table(comparisons)
    if args.out:
        payload = {
            "schema": 1,
            "seed": args.seed,
            "random_k": args.random_k,
            "comparisons": comparisons,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def _print_strategy_table(comparisons: list[dict]) -> None:
    for comp in comparisons:
        print(f"== tau {comp['tau']}, n {comp['n']}")
        header = (f"{'strategy':<22} {'chosen':<42} {'t_step [s]':>12} "
                  f"{'loss':>6} {'|L|':>4} {'overhead':>9} {'gain':>7}")
        print(header)
        for row in comp["strategies"]:
            loss = "--" if row["performance_loss_pct"] == 0 else (
                f"{row['performance_loss_pct']:.0f}%")
            overhead = ("-" if row["tuning_overhead_pct"] is None
                        else f"{row['tuning_overhead_pct']:.0f}%")
            print(
                f"{row['strategy']:<22} {row['chosen']:<42} "
                f"{row['t_step']:>12.6e} {loss:>6} {row['subset_size']:>4} "
                f"{overhead:>9} {row['performance_gain_pct']:>6.1f}%"
            )


def _cmd_db_export(args) -> int:
    with PredictionStore(args.store) as store:
        rows = store.export_csv(args.out)
    print(f"exported {rows} prediction rows to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "tune":
            return _cmd_tune(args)
        if args.command == "codegen":
            return _cmd_codegen(args)
        if args.command == "strategy-eval":
            return _cmd_strategy_eval(args)
        if args.command == "db":
            return _cmd_db_export(args)
        parser.error(f"unknown command {args.command!r}")
    except PirktuneError as exc:
        print(f"pirktune: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
