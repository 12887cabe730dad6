"""Observer bandwidth sweep: tail errors against w0 for both ESO variants.

    python scripts/w0_sweep.py --values 25,50,100,200 --jobs 4

Writes one sweep directory per variant and prints the error ratios between
consecutive bandwidths (about 2 for allocation and disturbance estimates,
about 4 for the state estimate when w0 doubles).
"""
import argparse
from pathlib import Path

from fdi_alloc.cli import sweep

METRICS = ("allocation_error", "observer_gamma_error", "observer_kappa_error")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--values", default="25,50,100,200")
    parser.add_argument("--out", default="runs/w0_sweep")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    values = [float(v) for v in args.values.split(",")]

    for preset in ("fig4_linear_eso", "fig5_nonlinear_eso"):
        rows = sweep({"preset": preset}, "w0", values, Path(args.out) / preset, jobs=args.jobs)
        print(preset)
        print(f"  {'w0':>8s}" + "".join(f"{m:>24s}" for m in METRICS))
        prev = None
        for r in rows:
            tails = [r[f"tail_sup_{m}"] for m in METRICS]
            line = f"  {r['value']:8g}" + "".join(f"{t:24.4g}" for t in tails)
            if prev is not None:
                line += "   ratios " + " ".join(f"{a / b:.2f}" for a, b in zip(prev, tails))
            print(line)
            prev = tails


if __name__ == "__main__":
    main()
