"""Run every built-in preset and write its trajectory, metrics and config echo.

    python scripts/reproduce_figures.py --out runs/figures

Each preset lands in ``<out>/<preset>/``; a summary table is printed at the end.
"""
import argparse
from pathlib import Path

from fdi_alloc.cli import execute
from fdi_alloc.config import PRESETS, preset_config


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/figures")
    parser.add_argument("--only", nargs="*", choices=sorted(PRESETS), help="subset of presets")
    args = parser.parse_args(argv)

    rows = []
    for name in args.only or PRESETS:
        summary = execute(preset_config(name), Path(args.out) / name)
        m = summary["metrics"]
        rows.append((name, summary["mode"], m["tail_sup"]["allocation_error"], m["overshoot"], m["diverged"]))

    print(f"{'preset':22s} {'mode':20s} {'tail_alloc_err':>14s} {'overshoot':>10s} diverged")
    for name, mode, tail, over, div in rows:
        print(f"{name:22s} {mode:20s} {tail:14.5g} {over:10.4g} {div}")


if __name__ == "__main__":
    main()
