"""Run one or more bundled (or on-disk) trial plans and write their CSV outputs.

    python scripts/run_experiment.py hist_nf table1 --out results --threads 4
    python scripts/run_experiment.py fig_svd1 --trials 100
"""
import argparse
import dataclasses
import time
from pathlib import Path

from emimaging.experiments import run_plan, write_outputs
from emimaging.scene import load_plan


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("plans", nargs="+", help="plan names or JSON paths")
    ap.add_argument("--out", default="results", help="output root (one subdirectory per plan)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--trials", type=int, help="override the plan's trial count")
    args = ap.parse_args(argv)

    for name in args.plans:
        plan = load_plan(name)
        if args.trials:
            plan = dataclasses.replace(plan, trials=args.trials)
        out = Path(args.out) / plan.name
        t0 = time.perf_counter()
        res = run_plan(plan, out, args.threads)
        files = write_outputs(res, out)
        print(f"{plan.name}: {len(files)} files in {out} ({time.perf_counter() - t0:.1f}s)")
        for row in res.table[:12]:
            print("   ", {k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()})


if __name__ == "__main__":
    main()
