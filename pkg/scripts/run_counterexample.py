"""Run the rotating-drift ring ensemble and print radial convergence and winding increments.

Usage: python3 scripts/run_counterexample.py [--n-paths N] [--t-max T] [--workers W] [--out DIR]
"""

import argparse
import json
from pathlib import Path

from cooldown_sde.cli import EXIT_ERROR, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-paths", type=int, default=500)
    p.add_argument("--t-max", type=float, default=1e3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="runs/counterexample")
    a = p.parse_args()
    argv = ["run", "--config", str(CONFIGS / "counterexample.ini"), "--out", a.out, "--seed", str(a.seed),
            "--set", f"n_paths={a.n_paths}", "--set", f"t_max={a.t_max}"]
    if a.workers:
        argv += ["--workers", str(a.workers)]
    status = main(argv)
    if status != EXIT_ERROR:
        rep = json.loads((Path(a.out) / "counterexample.json").read_text())
        print(json.dumps(rep, indent=2))
        main(["plot-data", "--out", a.out])
    raise SystemExit(status)
