"""Monte Carlo ensembles, survival-restricted moments, rate fits and the ring suite."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .engine import DiffusivitySpec, DriftSpec, EscapeProbe, SimConfig, TrajectoryBatch, simulate_batch
from .fitting import NonPositiveMoment, RateEstimate, fit_rate
from .monitors import EventReport, StoppingRule, event_report
from .oracles import phi_kappa
from .potentials import Potential, potential_from_id
from .schedules import parse_schedule, predicted_exponent

__all__ = [
    "EnsembleConfig", "EnsembleResult", "Moments", "NonPositiveMoment", "RateEstimate", "RateResult",
    "CounterexampleReport", "DropoutCheck", "run_ensemble", "restricted_moment", "fit_rate",
    "rate_experiment", "counterexample_suite", "dropout_probability_check", "default_rate_rule",
    "rate_config", "counterexample_config", "resolve_workers", "escape_probe", "with_seed",
    "write_json", "write_text",
]

WORKERS_ENV = "COOLDOWN_SDE_WORKERS"


@dataclass(frozen=True)
class EnsembleConfig:
    """``n_paths`` trajectories of one configuration, paths ``0 .. n_paths - 1``.

    Paths are simulated in fixed chunks of ``chunk_size``; the chunking (not the
    worker count) decides which paths share a vectorized batch, so results do not
    depend on how many workers execute the chunks.
    """

    n_paths: int
    sim: SimConfig
    potential: str = "even_power:2:1"
    drift: str = "gradient_flow"
    schedule: str = "poly:1:1.2"
    spatial: str = "identity"
    rule: StoppingRule | None = None
    probe: EscapeProbe | None = None
    chunk_size: int = 1000

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("an ensemble needs at least 2 paths")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        # resolve eagerly so catalog misses fail before any work starts
        self.resolve()

    def resolve(self) -> tuple[Potential, DriftSpec, DiffusivitySpec]:
        return (
            potential_from_id(self.potential),
            DriftSpec(self.drift),
            DiffusivitySpec(parse_schedule(self.schedule), self.spatial),
        )

    @property
    def seed(self) -> int:
        return self.sim.seed


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    batch: TrajectoryBatch

    @property
    def n_failed(self) -> int:
        return int(self.batch.failed.sum())

    def __iter__(self):
        """Yield ``(Trajectory, EventReport)`` pairs in path order."""
        for i in range(len(self.batch)):
            traj = self.batch.trajectory(i)
            yield traj, event_report(traj)

    def reports(self) -> list[EventReport]:
        return [rep for _, rep in self]


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def _run_chunk(args) -> TrajectoryBatch:
    cfg, lo, hi = args
    pot, drift, diff = cfg.resolve()
    return simulate_batch(cfg.sim, drift, diff, pot, cfg.rule, paths=np.arange(lo, hi), probe=cfg.probe)


def run_ensemble(cfg: EnsembleConfig, workers: int | None = None) -> EnsembleResult:
    """Simulate all paths; per-path failures are recorded in the batch, never raised."""
    workers = resolve_workers(workers)
    chunks = [(cfg, lo, min(lo + cfg.chunk_size, cfg.n_paths)) for lo in range(0, cfg.n_paths, cfg.chunk_size)]
    if workers == 1 or len(chunks) == 1:
        parts = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            # map preserves chunk order, so aggregation is schedule independent
            parts = list(pool.map(_run_chunk, chunks))
    return EnsembleResult(cfg, TrajectoryBatch.concat(parts))


@dataclass(frozen=True)
class Moments:
    """Per-checkpoint ``E[1{T > t} (F(X_t) - level + w_t)]`` with Monte Carlo errors."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    survival: np.ndarray
    n_alive: np.ndarray
    n_paths: int
    n_failed: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean", "stderr", "survival", "n_alive"])
        for row in zip(self.times, self.mean, self.stderr, self.survival, self.n_alive):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])),
                        int(row[4])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Moments":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2 or rows[0] != ["t", "mean", "stderr", "survival", "n_alive"]:
            raise ValueError("moments table is empty or has the wrong header")
        arr = np.array([[float(v) for v in r] for r in rows[1:]])
        n_alive = arr[:, 4].astype(int)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], n_alive, int(n_alive[0]), 0)


def restricted_moment(batch: TrajectoryBatch, level: float, w=None) -> Moments:
    """Mean over paths of ``1{alive} (F - level + w_t)`` at each checkpoint.

    Dropped-out paths contribute 0 from their trigger time on. Paths that blew up
    are excluded from the ensemble altogether and reported in ``n_failed``.
    ``w`` is None (zero), a callable of time, or an array over checkpoints.
    """
    times = batch.times
    keep = ~batch.failed
    n = int(keep.sum())
    if w is None:
        wt = np.zeros(len(times))
    elif callable(w):
        wt = np.asarray(w(times), dtype=float) * np.ones(len(times))
    else:
        wt = np.asarray(w, dtype=float)
    alive = batch.alive[keep]
    vals = np.where(alive, batch.F[keep] - level + wt[None, :], 0.0)
    if n == 0:
        z = np.zeros(len(times))
        return Moments(times, z, z, z, np.zeros(len(times), dtype=int), 0, int(batch.failed.sum()))
    mean = vals.mean(axis=0)
    stderr = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(times))
    n_alive = alive.sum(axis=0)
    return Moments(times, mean, stderr, n_alive / n, n_alive, n, int(batch.failed.sum()))


def default_rate_rule(sigma: float, scale: float, theta: float = 0.75, level: float = 0.0,
                      c_w: float = 0.0) -> StoppingRule:
    """Exit from the radius-3 ball, alignment below 1/2, diffusivity above twice the
    schedule and the lower-dropout barrier; only the barrier can fire on the quartic well.

    Without noise (``scale == 0``) the diffusivity cap would read ``0 >= 0`` and is left out.
    """
    enabled = {"exit", "alignment", "lower_dropout"} | ({"diffusivity"} if scale > 0 else set())
    return StoppingRule(radius=3.0, rho=0.5, c_beta=2.0 * scale, sigma=sigma, level=level, theta=theta,
                        c_w=c_w, enabled=frozenset(enabled))


def rate_config(sigma: float, n_paths: int = 2000, t_max: float = 1e4, scale: float = 1.0, p: int = 2,
                x0: float = 1.0, seed: int = 0, c_w: float = 0.0, probe: EscapeProbe | None = None,
                **sim_kw) -> EnsembleConfig:
    theta = 1.0 - 1.0 / (2 * p)
    sim = SimConfig(x0=(x0,), t_max=t_max, seed=seed, **sim_kw)
    return EnsembleConfig(
        n_paths=n_paths, sim=sim, potential=f"even_power:{p}:1", drift="gradient_flow",
        schedule=f"poly:{scale!r}:{sigma!r}" if scale > 0 else "zero",
        rule=default_rate_rule(sigma, scale, theta, 0.0, c_w), probe=probe,
    )


@dataclass(frozen=True)
class RateResult:
    moments: Moments
    estimate: RateEstimate
    predicted: float
    tolerance: float
    theta: float
    sigma: float

    @property
    def passed(self) -> bool:
        return self.estimate.within(self.predicted, self.tolerance)

    def to_json(self) -> dict:
        return {
            "exponent": self.estimate.exponent,
            "stderr": self.estimate.stderr,
            "window": list(self.estimate.window),
            "predicted_exponent": self.predicted,
            "tolerance": self.tolerance,
            "theta": self.theta,
            "sigma": self.sigma,
            "survival_final": float(self.moments.survival[-1]),
            "n_paths": self.moments.n_paths,
            "n_failed": self.moments.n_failed,
            "pass": self.passed,
        }


def rate_experiment(cfg: EnsembleConfig, theta: float, sigma: float, tolerance: float = 0.25,
                    workers: int | None = None, result: EnsembleResult | None = None) -> RateResult:
    """Fit the decay of the survival-restricted moment and compare with ``min(sigma/theta, 1/(2 theta - 1))``."""
    res = run_ensemble(cfg, workers) if result is None else result
    rule = cfg.rule
    level = 0.0 if rule is None else rule.level
    w = None if rule is None or rule.c_w == 0.0 else rule.barrier
    mom = restricted_moment(res.batch, level, w)
    est = fit_rate(mom.times, mom.mean, mean_se=mom.stderr, survival=mom.survival)
    return RateResult(mom, est, predicted_exponent(theta, sigma), tolerance, theta, sigma)


# ring counterexample

WINDING_DECADES = ((125.0, 250.0), (250.0, 500.0), (500.0, 1000.0))
ANNULUS = (2.0 / 3.0, 2.0)


def counterexample_config(n_paths: int = 500, t_max: float = 1e3, seed: int = 0, x0=(1.5, 0.0),
                          schedule: str = "poly:1:1", h_bound: float = 2.0, **sim_kw) -> EnsembleConfig:
    extra = tuple(sorted({t for d in WINDING_DECADES for t in d if t <= t_max}))
    sim = SimConfig(x0=tuple(x0), t_max=t_max, seed=seed, h_bound=h_bound, extra_checkpoints=extra, **sim_kw)
    return EnsembleConfig(n_paths=n_paths, sim=sim, potential="ring", drift="ring_counterexample",
                          schedule=schedule, spatial="mollifier")


@dataclass(frozen=True)
class WindingIncrement:
    t0: float
    t1: float
    mean: float
    stderr: float


@dataclass(frozen=True)
class CounterexampleReport:
    radial_fraction: float
    radial_tol: float
    winding: tuple[WindingIncrement, ...]
    # paired differences of consecutive decade increments, as (mean, stderr)
    trend: tuple[tuple[float, float], ...]
    noise_energy_max: float
    noise_cap: float
    annulus_exit_fraction: float
    n_paths: int
    n_failed: int
    min_increment: float = 0.15

    @property
    def winding_ok(self) -> bool:
        means_ok = all(w.mean >= self.min_increment for w in self.winding)
        trend_ok = all(m >= -3.0 * se for m, se in self.trend)
        return means_ok and trend_ok

    @property
    def radial_ok(self) -> bool:
        return self.radial_fraction >= 0.95 and self.noise_energy_max <= self.noise_cap

    def to_json(self) -> dict:
        return {
            "radial_fraction": self.radial_fraction,
            "radial_tol": self.radial_tol,
            "winding_increments": [
                {"t0": w.t0, "t1": w.t1, "mean": w.mean, "stderr": w.stderr} for w in self.winding
            ],
            "winding_trend": [{"mean": m, "stderr": se} for m, se in self.trend],
            "noise_energy_max": self.noise_energy_max,
            "noise_cap": self.noise_cap,
            "annulus_exit_fraction": self.annulus_exit_fraction,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
            "pass": {"radial": self.radial_ok, "winding": self.winding_ok},
        }


def counterexample_suite(cfg: EnsembleConfig, workers: int | None = None, radial_tol: float = 0.05,
                         decades=None, result: EnsembleResult | None = None) -> CounterexampleReport:
    """Radial convergence, winding increments and noise energy of a ring ensemble.

    ``decades`` defaults to the standard winding windows that fit inside ``t_max``.
    """
    if decades is None:
        decades = tuple(d for d in WINDING_DECADES if d[1] <= cfg.sim.t_max)
        if not decades:
            raise ValueError(f"t_max {cfg.sim.t_max} is shorter than the first winding window {WINDING_DECADES[0]}")
    if cfg.drift != "ring_counterexample" or potential_from_id(cfg.potential).dimension != 2:
        raise ValueError("the counterexample suite needs the planar ring dynamics")
    res = run_ensemble(cfg, workers) if result is None else result
    b = res.batch
    ok = ~b.failed
    n = int(ok.sum())
    radius = np.linalg.norm(b.terminal[ok], axis=1)
    radial_fraction = float(np.mean(np.abs(radius - 1.0) < radial_tol))

    def at(t):
        hit = np.nonzero(np.isclose(b.times, t, rtol=1e-12, atol=0.0))[0]
        if hit.size == 0:
            raise ValueError(f"time {t} is not a checkpoint")
        return b.phi[ok, hit[0]]

    incs = [at(t1) - at(t0) for t0, t1 in decades]
    winding = tuple(
        WindingIncrement(float(t0), float(t1), float(d.mean()), float(d.std(ddof=1) / math.sqrt(n)))
        for (t0, t1), d in zip(decades, incs)
    )
    trend = tuple(
        (float((b2 - b1).mean()), float((b2 - b1).std(ddof=1) / math.sqrt(n))) for b1, b2 in zip(incs, incs[1:])
    )
    _, _, diff = cfg.resolve()
    d = 2
    # |phi| <= 1, so the noise energy is capped by d * int_0^inf sigma^2
    cap = d * diff.schedule.squared_tail_integral(0.0)
    lo, hi = ANNULUS
    exited = (b.watch_min_radius[ok] < lo) | (b.watch_max_radius[ok] > hi)
    return CounterexampleReport(
        radial_fraction=radial_fraction,
        radial_tol=radial_tol,
        winding=winding,
        trend=trend,
        noise_energy_max=float(b.I_noise[ok, -1].max()),
        noise_cap=float(cap),
        annulus_exit_fraction=float(exited.mean()),
        n_paths=len(b),
        n_failed=res.n_failed,
    )


# lower-dropout escape probability against the phi bound


@dataclass(frozen=True)
class DropoutRow:
    t1: float
    empirical: float
    stderr: float
    kappa_arg: float
    bound: float
    n_crossed: int

    @property
    def passed(self) -> bool:
        return self.bound >= self.empirical - 3.0 * self.stderr


@dataclass(frozen=True)
class DropoutCheck:
    rows: tuple[DropoutRow, ...]
    theta: float
    sigma: float
    n_paths: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_json(self) -> dict:
        return {
            "theta": self.theta,
            "sigma": self.sigma,
            "n_paths": self.n_paths,
            "rows": [
                {"t1": r.t1, "empirical": r.empirical, "stderr": r.stderr, "kappa_arg": r.kappa_arg,
                 "bound": r.bound, "n_crossed": r.n_crossed, "pass": r.passed}
                for r in self.rows
            ],
            "pass": self.passed,
        }


def escape_probe(theta: float, t1s, level: float = 0.0) -> EscapeProbe:
    return EscapeProbe(level=level, exponent=1.0 / (2.0 * theta - 1.0), t1=tuple(float(t) for t in t1s))


def dropout_probability_check(cfg: EnsembleConfig, theta: float, sigma: float, rho: float = 0.5,
                              c_bound: float = 6.0, workers: int | None = None,
                              result: EnsembleResult | None = None) -> DropoutCheck:
    """Empirical probability that a path, after first dipping below ``level - (T'+1)^(-1/(2 theta - 1))``
    at some ``T' >= t1``, later rises by at least ``(T'+1)^(-1/(2 theta - 1))``; compared with
    ``phi(rho / (2 C) (t1+1)^(2 sigma - 1/(2 theta - 1)))``."""
    if cfg.probe is None:
        raise ValueError("the ensemble config needs an EscapeProbe")
    res = run_ensemble(cfg, workers) if result is None else result
    esc = res.batch.escape
    ok = ~res.batch.failed
    n = int(ok.sum())
    q = 1.0 / (2.0 * theta - 1.0)
    rows = []
    for j, t1 in enumerate(cfg.probe.t1):
        crossed = esc["crossed"][ok, j]
        rise = esc["F_max"][ok, j] - esc["F_cross"][ok, j]
        escaped = crossed & (rise >= (esc["time"][ok, j] + 1.0) ** (-q))
        p = float(escaped.mean())
        se = math.sqrt(p * (1 - p) / n)
        arg = rho / (2.0 * c_bound) * (t1 + 1.0) ** (2.0 * sigma - q)
        rows.append(DropoutRow(float(t1), p, se, arg, phi_kappa(arg).value, int(crossed.sum())))
    return DropoutCheck(tuple(rows), theta, sigma, n)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def with_seed(cfg: EnsembleConfig, seed: int) -> EnsembleConfig:
    return replace(cfg, sim=replace(cfg.sim, seed=seed))
