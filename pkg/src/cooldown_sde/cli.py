"""Command-line entry point: ``python -m cooldown_sde <subcommand>``.

Precedence, lowest to highest: built-in defaults, the ``--config`` file,
``--set key=value`` overrides (in order), then the dedicated flags ``--seed``
and ``--out``. The worker count comes from ``--workers``, else the
``COOLDOWN_SDE_WORKERS`` environment variable, else 1; it never changes results.

Exit status: 0 when the run passes its acceptance check, 2 when it completes
but fails the check, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .engine import DiffusivitySpec, DriftSpec, NonFiniteState, simulate
from .experiments import (
    EnsembleResult, Moments, counterexample_suite, dropout_probability_check, rate_experiment, resolve_workers,
    run_ensemble, write_json, write_text,
)
from .monitors import event_report
from .oracles import oracle_suite
from .potentials import potential_from_id

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class MissingInput(FileNotFoundError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cooldown_sde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True):
        p.add_argument("--config", help="INI file or a previous run's manifest.json")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one entry (section.key or key); repeatable")
        if seed:
            p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int, help="worker processes (default: $COOLDOWN_SDE_WORKERS or 1)")
        if out:
            p.add_argument("--out", help="output directory")

    common(sub.add_parser("run", help="run the configured experiment"))
    common(sub.add_parser("oracle-check", help="evaluate the oracle suite"))
    p = sub.add_parser("plot-data", help="write plot-ready files for a finished run")
    p.add_argument("--out", required=True, help="run directory holding the outputs")
    common(sub.add_parser("validate-config", help="parse, validate and print the resolved config"),
           seed=True, out=True)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value
    if pairs:
        cfg = cfg.with_overrides(pairs)
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["experiment.seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        flags["experiment.out"] = args.out
    return cfg.with_overrides(flags) if flags else cfg


def _manifest(cfg: ExperimentConfig, outputs: list[str], status: str, workers: int) -> dict:
    return {
        "package": "cooldown_sde",
        "version": __version__,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": sorted(outputs),
        "status": status,
        "workers": workers,
    }


def execute(cfg: ExperimentConfig, workers: int | None = None) -> tuple[int, list[str]]:
    """Run ``cfg`` and write its outputs into ``cfg.out``; returns (exit status, written files)."""
    workers = resolve_workers(workers)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    def emit(name, payload):
        if isinstance(payload, str):
            write_text(out / name, payload)
        else:
            write_json(out / name, payload)
        written.append(name)

    if cfg.kind == "oracle-check":
        checks = oracle_suite(seed=cfg.seed, mc_paths=cfg.mc_paths)
        emit("oracle_report.json", [c.to_json() for c in checks])
        ok = all(c.passed for c in checks)
    elif cfg.kind == "simulate":
        pot = potential_from_id(cfg.potential)
        traj = simulate(cfg.sim_config(), DriftSpec(cfg.drift), DiffusivitySpec(cfg.schedule_obj, cfg.spatial),
                        pot, cfg.rule())
        emit("trajectory.csv", traj.to_csv())
        emit("event_report.json", event_report(traj).to_json())
        ok = True
    elif cfg.kind == "rate":
        ens = cfg.ensemble()
        res = rate_experiment(ens, cfg.resolved_theta(), cfg.resolved_sigma(), cfg.tolerance, workers)
        emit("moments.csv", res.moments.to_csv())
        emit("estimate.json", res.to_json())
        ok = res.passed
    elif cfg.kind == "counterexample":
        ens = cfg.ensemble()
        result = run_ensemble(ens, workers)
        rep = counterexample_suite(ens, result=result)
        emit("counterexample.json", rep.to_json())
        emit("winding.csv", winding_table(result))
        ok = rep.radial_ok and rep.winding_ok
    else:
        ens = cfg.ensemble()
        result = run_ensemble(ens, workers)
        chk = dropout_probability_check(ens, cfg.resolved_theta(), cfg.resolved_sigma(), cfg.rho, cfg.c_bound,
                                        result=result)
        rate = rate_experiment(ens, cfg.resolved_theta(), cfg.resolved_sigma(), cfg.tolerance, result=result)
        emit("moments.csv", rate.moments.to_csv())
        emit("dropout.json", chk.to_json())
        ok = chk.passed
    status = "pass" if ok else "fail"
    write_json(out / "manifest.json", _manifest(cfg, written + ["manifest.json"], status, workers))
    written.append("manifest.json")
    return (EXIT_OK if ok else EXIT_FAIL), written


def winding_table(result: EnsembleResult) -> str:
    """Ensemble mean and standard error of the unwound angle at each checkpoint."""
    b = result.batch
    phi = b.phi[~b.failed]
    n = phi.shape[0]
    mean = phi.mean(axis=0)
    se = phi.std(axis=0, ddof=1) / math.sqrt(n)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "phi_mean", "phi_stderr"])
    for row in zip(b.times, mean, se):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def emit_plot_data(run_dir) -> list[str]:
    """Write whitespace-separated two-column files for plotting a finished run.

    ``plot_moments.dat`` holds ``log(t+1), log(mean)``; ``plot_reference.dat`` holds a
    line of slope ``-predicted`` through the first point of the fit window;
    ``plot_winding.dat`` holds ``log(t+1), mean unwound angle`` for ring runs.
    """
    run_dir = Path(run_dir)
    written = []
    moments_path = run_dir / "moments.csv"
    winding_path = run_dir / "winding.csv"
    if not moments_path.exists() and not winding_path.exists():
        raise MissingInput(f"no moments.csv or winding.csv in {run_dir}")
    if moments_path.exists():
        mom = Moments.from_csv(moments_path.read_text(encoding="utf-8"))
        keep = (mom.times > 0) & (mom.mean > 0)
        if not keep.any():
            raise MissingInput(f"{moments_path} has no positive moments to plot")
        x = np.log(mom.times[keep] + 1.0)
        y = np.log(mom.mean[keep])
        _write_columns(run_dir / "plot_moments.dat", x, y, "log(t+1) log(mean)")
        written.append("plot_moments.dat")
        est_path = run_dir / "estimate.json"
        if est_path.exists():
            est = json.loads(est_path.read_text(encoding="utf-8"))
            slope = -float(est["predicted_exponent"])
            lo = float(est["window"][0])
            i0 = int(np.argmin(np.abs(mom.times[keep] - lo)))
            ref = y[i0] + slope * (x - x[i0])
            _write_columns(run_dir / "plot_reference.dat", x, ref, f"log(t+1) reference slope {slope!r}")
            written.append("plot_reference.dat")
    if winding_path.exists():
        rows = list(csv.reader(io.StringIO(winding_path.read_text(encoding="utf-8"))))[1:]
        if not rows:
            raise MissingInput(f"{winding_path} is empty")
        arr = np.array([[float(v) for v in r] for r in rows])
        keep = arr[:, 0] > 0
        _write_columns(run_dir / "plot_winding.dat", np.log(arr[keep, 0] + 1.0), arr[keep, 1],
                       "log(t+1) mean_phi")
        written.append("plot_winding.dat")
    return written


def _write_columns(path, x, y, header: str):
    lines = [f"# {header}"] + [f"{a!r} {b!r}" for a, b in zip(map(float, x), map(float, y))]
    write_text(path, "\n".join(lines) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            for name in emit_plot_data(args.out):
                print(os.path.join(args.out, name))
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "validate-config":
            sys.stdout.write(cfg.to_ini())
            return EXIT_OK
        if args.command == "oracle-check":
            cfg = cfg.with_overrides({"experiment.kind": "oracle-check"})
        status, written = execute(cfg, args.workers)
        for name in written:
            print(os.path.join(cfg.out, name))
        print("pass" if status == EXIT_OK else "fail", file=sys.stderr)
        return status
    except (ConfigError, MissingInput, NonFiniteState) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
