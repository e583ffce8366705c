"""Evaluate the closed-form and Monte Carlo oracle suite and print one line per check.

Usage: python3 scripts/run_oracles.py [--mc-paths N] [--seed S]
"""

import argparse

from cooldown_sde.oracles import oracle_suite

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mc-paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    checks = oracle_suite(seed=a.seed, mc_paths=a.mc_paths)
    for c in checks:
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name}: expected {c.expected:.6g}, actual {c.actual:.6g}, "
              f"tolerance {c.tolerance:.3g}")
    raise SystemExit(0 if all(c.passed for c in checks) else 2)
