"""Command line entry point: ``fdi-alloc {run,sweep,presets,oracle}``.

Exit codes: 0 success, 2 invalid config, 3 divergence, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import PRESETS, ConfigError, ScenarioConfig, build_scenario, dump_config, parse_text, with_override
from .graph import algebraic_connectivity
from .problem import KKTError, solve_kkt
from .sim import compute_metrics, run_scenario, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("fdi_alloc")


def _raw_from_args(args) -> dict:
    if args.config:
        path = Path(args.config)
        raw = parse_text(path.read_text(), str(path))
        if args.preset:
            raw = {**raw, "preset": args.preset}
    elif args.preset:
        raw = {"preset": args.preset}
    else:
        raise ConfigError("", "give --preset or --config")
    if getattr(args, "stride", None) is not None:
        raw.setdefault("sim", {})
        raw["sim"] = {**raw["sim"], "record_stride": args.stride}
    return raw


def oracle_summary(sc: ScenarioConfig) -> dict:
    sol = solve_kkt(sc.problem, bracket=sc.kkt_bracket)
    return {
        "method": sol.method,
        "x_star": sol.x_star.tolist(),
        "lambda_star": sol.lambda_star.tolist(),
        "marginal_cost": sol.mu.tolist(),
        "total_demand": sc.problem.demands.sum(axis=0).tolist(),
        "algebraic_connectivity": algebraic_connectivity(sc.graph),
    }


def execute(sc: ScenarioConfig, out_dir: Path, seed: int | None = None) -> dict:
    """Run one validated scenario and write its artifacts into ``out_dir``."""
    sol = solve_kkt(sc.problem, bracket=sc.kkt_bracket)
    traj = run_scenario(sc.problem, sc.graph, sc.suite, sc.mode, sc.eso, sc.sim, sc.initial)
    metrics = compute_metrics(traj, sol, sc.problem.demands, sc.sim.tail_fraction)
    summary = {
        "name": sc.name,
        "mode": sc.mode,
        "backend": traj.backend,
        "seed": seed,
        "oracle": {"x_star": sol.x_star.tolist(), "lambda_star": sol.lambda_star.tolist()},
        "metrics": metrics.summary(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(traj, out_dir / "trajectory.csv")
    (out_dir / "config.yaml").write_text(dump_config(sc))
    (out_dir / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_run(args) -> int:
    sc = build_scenario(_raw_from_args(args))
    out = Path(args.out or sc.output_dir or Path("runs") / sc.name)
    summary = execute(sc, out, args.seed)
    m = summary["metrics"]
    print(f"{sc.name}: mode={sc.mode} backend={summary['backend']} -> {out}")
    print(f"  tail_sup allocation_error = {m['tail_sup']['allocation_error']:.6g}")
    print(f"  overshoot = {m['overshoot']:.6g}")
    if m["diverged"]:
        print(f"  DIVERGED at t={m['divergence_time']:g}")
        return EXIT_OK if args.allow_divergence else EXIT_DIVERGED
    return EXIT_OK


def _parse_value(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    raise ConfigError("--values", f"not a number: {text!r}")


def _sweep_row(raw: dict, param: str, value, out_dir: str, seed) -> dict:
    sc = build_scenario(with_override(raw, param, value))
    summary = execute(sc, Path(out_dir), seed)
    m = summary["metrics"]
    row = {"param": param, "value": value, "diverged": m["diverged"], "overshoot": m["overshoot"]}
    for k, v in m["tail_sup"].items():
        row[f"tail_sup_{k}"] = v
    row["final_allocation_error"] = m["final"]["allocation_error"]
    return row


def sweep(raw: dict, param: str, values, out: Path, jobs: int = 1, seed=None) -> list[dict]:
    """Independent runs, one per value, each written to its own subdirectory."""
    base = build_scenario(raw).raw
    for v in values:
        build_scenario(with_override(base, param, v))
    dirs = [str(out / f"{param}={v}") for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, [base] * len(values), [param] * len(values), values, dirs,
                                 [seed] * len(values)))
    else:
        rows = [_sweep_row(base, param, v, d, seed) for v, d in zip(values, dirs)]
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_sweep(args) -> int:
    raw = _raw_from_args(args)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values", "no values given")
    name = build_scenario(raw).name
    out = Path(args.out or Path("runs") / f"{name}_sweep_{args.param}")
    rows = sweep(raw, args.param, values, out, args.jobs, args.seed)
    print(f"{'value':>12} {'tail_alloc':>14} {'tail_gamma':>14} {'tail_kappa':>14} diverged")
    for r in rows:
        print(f"{r['value']!s:>12} {r['tail_sup_allocation_error']:>14.6g} "
              f"{r.get('tail_sup_observer_gamma_error', float('nan')):>14.6g} "
              f"{r.get('tail_sup_observer_kappa_error', float('nan')):>14.6g} {r['diverged']}")
    print(f"summary -> {out / 'sweep.csv'}")
    if any(r["diverged"] for r in rows) and not args.allow_divergence:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, (desc, _) in PRESETS.items():
        print(f"{name:22s} {desc}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    sc = build_scenario(_raw_from_args(args))
    print(json.dumps(oracle_summary(sc), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdi-alloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="YAML scenario file (may itself name a preset)")

    def run_args(p):
        p.add_argument("--out", help="output directory")
        p.add_argument("--allow-divergence", action="store_true")
        p.add_argument("--stride", type=int, help="override sim.record_stride")
        p.add_argument("--seed", type=int, help="reserved; the dynamics are deterministic")

    p = sub.add_parser("run", help="run one scenario")
    scenario_args(p)
    run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one scenario per parameter value")
    scenario_args(p)
    run_args(p)
    p.add_argument("--param", required=True, help="w0, dt, attack_amplitude, attack_scale or a dotted path")
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("presets", help="list built-in scenarios")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("oracle", help="print the KKT optimum of a scenario")
    scenario_args(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KKTError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
