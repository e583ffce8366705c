"""Run the two quartic-well rate experiments and print the fitted exponents.

Usage: python3 scripts/run_rate.py [--n-paths N] [--t-max T] [--workers W] [--out DIR]
"""

import argparse
import json
from pathlib import Path

from cooldown_sde.cli import EXIT_ERROR, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(name: str, args) -> int:
    out = Path(args.out) / name
    argv = ["run", "--config", str(CONFIGS / f"{name}.ini"), "--out", str(out), "--seed", str(args.seed),
            "--set", f"n_paths={args.n_paths}", "--set", f"t_max={args.t_max}"]
    if args.workers:
        argv += ["--workers", str(args.workers)]
    status = main(argv)
    if status != EXIT_ERROR:
        est = json.loads((out / "estimate.json").read_text())
        print(f"{name}: exponent {est['exponent']:.3f} (se {est['stderr']:.3f}), "
              f"predicted {est['predicted_exponent']:.3f}, {'pass' if est['pass'] else 'fail'}")
        main(["plot-data", "--out", str(out)])
    return status


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-paths", type=int, default=2000)
    p.add_argument("--t-max", type=float, default=1e4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="runs")
    a = p.parse_args()
    statuses = [run(n, a) for n in ("rate_noise_limited", "rate_deterministic_limited")]
    raise SystemExit(max(statuses))
