"""Euler-Maruyama simulation of ``dX = alpha dt + beta dW`` with running path integrals.

Paths are advanced in lockstep on a time grid that depends only on the
configuration, and every path draws from its own stream, so a batch of
paths gives bit-identical per-path results however the ensemble is split.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .monitors import CLAUSES, DropoutRecord, StoppingRule, clause_name, ratio_from
from .potentials import Potential, mollifier_radial, ort, rowdot
from .schedules import Schedule
from .streams import PathStreams, path_generator, normals

DRIFT_MODES = ("gradient_flow", "ring_counterexample", "zero")
SPATIAL_FACTORS = ("identity", "mollifier")
MIN_STEP = 1e-12
_ALPHA_TINY2 = 1e-28


class NonFiniteState(FloatingPointError):
    """The state left the floating-point range (blow-up)."""


class StepUnderflow(ValueError):
    """The step policy would force steps below ``MIN_STEP``."""


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriftSpec:
    mode: str = "gradient_flow"

    def __post_init__(self):
        if self.mode not in DRIFT_MODES:
            raise ValueError(f"unknown drift mode {self.mode!r}")

    def __call__(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        if self.mode == "gradient_flow":
            return -f
        if self.mode == "zero":
            return np.zeros_like(x)
        r = np.sqrt(rowdot(x, x))
        return -f + ort(x) * np.abs(r - 1.0)[:, None]


@dataclass(frozen=True)
class DiffusivitySpec:
    """``beta_t = sigma_t * phi(X_t) * I_d`` with ``phi`` the identity factor 1 or the mollifier."""

    schedule: Schedule
    spatial: str = "identity"

    def __post_init__(self):
        if self.spatial not in SPATIAL_FACTORS:
            raise ValueError(f"unknown spatial factor {self.spatial!r}")

    @property
    def silent(self) -> bool:
        return self.schedule.kind == "zero" or self.schedule.scale == 0.0

    def sigma(self, t: float) -> float:
        return self.schedule.eval(max(t, self.schedule.t_min))

    def sigma_grid(self, times) -> np.ndarray:
        t = np.maximum(np.asarray(times, dtype=float), self.schedule.t_min)
        return np.asarray(self.schedule.eval(t), dtype=float) * np.ones_like(t)

    def scale(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.scale_at(x, self.sigma(t))

    def scale_at(self, x: np.ndarray, s: float) -> np.ndarray:
        """``|beta| = s * phi(x)`` per row, given the schedule value ``s``."""
        if self.spatial == "identity":
            return np.full(x.shape[0], s)
        if x.shape[1] != 2:
            raise ValueError("the mollifier factor is defined on the plane only")
        return s * mollifier_radial(np.sqrt(rowdot(x, x)))


@dataclass(frozen=True)
class SimConfig:
    """Step policy ``dt = min(dt0 + dt_growth * t, dt_cap, eta_stab / h_bound)``.

    Checkpoints: ``t = 0``, ``n_checkpoints`` log-spaced times on ``[1, t_max]``,
    the tail-window start ``window * t_max`` and any ``extra_checkpoints``.
    ``checkpoints``, when given, replaces the log grid (``0`` and ``t_max`` are kept).
    """

    x0: tuple[float, ...]
    t_max: float
    dt0: float = 1e-3
    dt_growth: float = 1e-4
    dt_cap: float = 0.1
    eta_stab: float = 0.1
    h_bound: float = 1.0
    seed: int = 0
    path_index: int = 0
    n_checkpoints: int = 64
    extra_checkpoints: tuple[float, ...] = ()
    checkpoints: tuple[float, ...] | None = None
    window: float = 0.5
    watch_from: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not all(math.isfinite(v) for v in self.x0):
            raise ValueError("x0 must be finite")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if min(self.dt0, self.dt_cap, self.eta_stab, self.h_bound) <= 0 or self.dt_growth < 0:
            raise ValueError("step parameters must be positive")
        if not 0.0 <= self.window <= 1.0:
            raise ValueError("window must lie in [0, 1]")
        if self.eta_stab / self.h_bound < MIN_STEP:
            raise StepUnderflow(f"stability cap {self.eta_stab / self.h_bound:g} is below {MIN_STEP:g}")

    def step_size(self, t: float) -> float:
        return min(self.dt0 + self.dt_growth * t, self.dt_cap, self.eta_stab / self.h_bound)

    def checkpoint_times(self) -> np.ndarray:
        if self.checkpoints is not None:
            base = np.asarray(self.checkpoints, dtype=float)
        elif self.t_max > 1.0:
            base = np.logspace(0.0, math.log10(self.t_max), self.n_checkpoints)
        else:
            base = np.linspace(0.0, self.t_max, self.n_checkpoints)
        pts = np.concatenate([[0.0, self.t_max, self.window * self.t_max], base, self.extra_checkpoints])
        pts = pts[(pts >= 0.0) & (pts <= self.t_max)]
        # snap values that logspace lands within roundoff of t_max
        pts = np.where(np.isclose(pts, self.t_max, rtol=1e-12, atol=0.0), self.t_max, pts)
        return np.unique(pts)

    def time_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """All step times and a boolean mask marking checkpoints."""
        cks = self.checkpoint_times()
        times = [0.0]
        is_ck = [True]
        t = 0.0
        for target in cks[1:]:
            while t < target:
                dt = self.step_size(t)
                if t + dt >= target:
                    t = target
                elif target - (t + dt) < 0.25 * dt:
                    # avoid a sliver step before the checkpoint
                    t = t + 0.5 * (target - t)
                else:
                    t = t + dt
                times.append(t)
                is_ck.append(t == target)
        return np.asarray(times), np.asarray(is_ck)


@dataclass(frozen=True)
class EscapeProbe:
    """Tracks, for each activation time ``t1``, the first grid time ``T' >= t1`` with
    ``F - level < -(T'+1)^-exponent`` and the running maximum of ``F`` afterwards."""

    level: float
    exponent: float
    t1: tuple[float, ...]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    F: np.ndarray
    grad_norm: np.ndarray
    I_val: np.ndarray
    I_noise: np.ndarray
    I_trace: np.ndarray
    I_wind: np.ndarray | None
    phi: np.ndarray | None
    alive: np.ndarray
    terminal: np.ndarray
    dropout: DropoutRecord
    tail: dict
    failed: bool = False

    def to_csv(self, fh=None) -> str:
        """Checkpoint table: ``t, x_1..x_d, F, |f|, I_val, I_noise, I_trace, I_wind, Phi``."""
        d = self.states.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *[f"x_{i + 1}" for i in range(d)], "F", "|f|", "I_val", "I_noise", "I_trace",
                    "I_wind", "Phi"])
        for k, t in enumerate(self.times):
            wind = "" if self.I_wind is None else _fmt(self.I_wind[k])
            phi = "" if self.phi is None else _fmt(self.phi[k])
            w.writerow([_fmt(t), *[_fmt(v) for v in self.states[k]], _fmt(self.F[k]), _fmt(self.grad_norm[k]),
                        _fmt(self.I_val[k]), _fmt(self.I_noise[k]), _fmt(self.I_trace[k]), wind, phi])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _fmt(v) -> str:
    return repr(float(v))


@dataclass
class TrajectoryBatch:
    """Checkpointed output of many paths; arrays carry the path axis first."""

    paths: np.ndarray
    times: np.ndarray
    states: np.ndarray
    F: np.ndarray
    grad_norm: np.ndarray
    I_val: np.ndarray
    I_noise: np.ndarray
    I_trace: np.ndarray
    I_wind: np.ndarray | None
    phi: np.ndarray | None
    alive: np.ndarray
    terminal: np.ndarray
    dropout_time: np.ndarray
    dropout_code: np.ndarray
    dropout_state: np.ndarray
    failed: np.ndarray
    fail_time: np.ndarray
    tail: dict
    watch_min_radius: np.ndarray
    watch_max_radius: np.ndarray
    escape: dict | None = None

    def __len__(self):
        return len(self.paths)

    def trajectory(self, i: int) -> Trajectory:
        triggered = bool(np.isfinite(self.dropout_time[i]))
        record = DropoutRecord(
            triggered=triggered,
            time=float(self.dropout_time[i]) if triggered else math.inf,
            clause=clause_name(int(self.dropout_code[i])),
            state=tuple(map(float, self.dropout_state[i])) if triggered else None,
        )
        return Trajectory(
            times=self.times,
            states=self.states[i],
            F=self.F[i],
            grad_norm=self.grad_norm[i],
            I_val=self.I_val[i],
            I_noise=self.I_noise[i],
            I_trace=self.I_trace[i],
            I_wind=None if self.I_wind is None else self.I_wind[i],
            phi=None if self.phi is None else self.phi[i],
            alive=self.alive[i],
            terminal=self.terminal[i],
            dropout=record,
            tail={k: v[i] for k, v in self.tail.items()},
            failed=bool(self.failed[i]),
        )

    @classmethod
    def concat(cls, parts: list["TrajectoryBatch"]) -> "TrajectoryBatch":
        first = parts[0]
        kw = {}
        for name in first.__dataclass_fields__:
            vals = [getattr(p, name) for p in parts]
            if name == "times":
                kw[name] = first.times
            elif vals[0] is None:
                kw[name] = None
            elif isinstance(vals[0], dict):
                kw[name] = {k: np.concatenate([v[k] for v in vals]) for k in vals[0]}
            else:
                kw[name] = np.concatenate(vals)
        return cls(**kw)


def step_em(state, t: float, dt: float, drift: DriftSpec, diff: DiffusivitySpec, noise, pot: Potential) -> np.ndarray:
    """One Euler-Maruyama step from a single state."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    x = np.asarray(state, dtype=float)[None, :]
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"nonfinite state {state}")
    alpha = drift(x, pot.gradient(x))
    scale = diff.scale(x, t)
    out = x + alpha * dt + (scale * math.sqrt(dt))[:, None] * np.asarray(noise, dtype=float)[None, :]
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"step from {state} produced {out[0]}")
    return out[0]


def _check_inputs(config: SimConfig, drift: DriftSpec, diff: DiffusivitySpec, pot: Potential):
    d = pot.dimension
    if len(config.x0) != d:
        raise ValueError(f"x0 has dimension {len(config.x0)}, potential has {d}")
    if drift.mode == "ring_counterexample":
        if d != 2:
            raise ValueError("the ring drift needs d = 2")
        if all(v == 0.0 for v in config.x0):
            raise ValueError("the ring dynamics must start away from the origin")
    if diff.spatial == "mollifier" and d != 2:
        raise ValueError("the mollifier factor needs d = 2")


# blown-up paths are detected and frozen; their intermediate overflow is expected
@np.errstate(over="ignore", invalid="ignore")
def simulate_batch(config: SimConfig, drift: DriftSpec, diff: DiffusivitySpec, pot: Potential,
                   rule: StoppingRule | None = None, paths=None, probe: EscapeProbe | None = None) -> TrajectoryBatch:
    """Simulate the given path indices (default: ``config.path_index``) in lockstep."""
    _check_inputs(config, drift, diff, pot)
    paths = np.atleast_1d(np.asarray([config.path_index] if paths is None else paths, dtype=np.int64))
    n, d = len(paths), pot.dimension
    planar = d == 2
    grid, is_ck = config.time_grid()
    ck_times = grid[is_ck]
    m = len(ck_times)
    last = len(grid) - 1

    x = np.tile(np.asarray(config.x0, dtype=float), (n, 1))
    alive = np.ones(n, dtype=bool)
    all_alive = True
    failed = np.zeros(n, dtype=bool)
    fail_time = np.full(n, np.inf)

    rec = {
        "states": np.empty((n, m, d)),
        "F": np.empty((n, m)),
        "grad_norm": np.empty((n, m)),
        "I_val": np.empty((n, m)),
        "I_noise": np.empty((n, m)),
        "I_trace": np.empty((n, m)),
        "alive": np.empty((n, m), dtype=bool),
    }
    if planar:
        rec["I_wind"] = np.empty((n, m))
        rec["phi"] = np.empty((n, m))
    I_val = np.zeros(n)
    I_noise = np.zeros(n)
    I_trace = np.zeros(n)
    I_wind = np.zeros(n)
    phi = np.zeros(n)

    tail = {
        "alignment_min": np.full(n, np.inf),
        "ratio_fa_min": np.full(n, np.inf),
        "beta_max": np.zeros(n),
        "alpha_max": np.zeros(n),
        "F_min": np.full(n, np.inf),
        "radius_max": np.zeros(n),
    }
    watch_min = np.full(n, np.inf)
    watch_max = np.zeros(n)
    drop_t = np.full(n, np.inf)
    drop_code = np.zeros(n, dtype=np.int8)
    drop_state = np.full((n, d), np.nan)

    if probe is not None:
        n_t1 = len(probe.t1)
        esc_crossed = np.zeros((n, n_t1), dtype=bool)
        esc_time = np.full((n, n_t1), np.inf)
        esc_F = np.full((n, n_t1), np.nan)
        esc_max = np.full((n, n_t1), -np.inf)

    streams = None if diff.silent else PathStreams(config.seed, paths, d)
    t_window = config.window * config.t_max
    dim = float(d)
    ck = 0

    sig = diff.sigma_grid(grid)
    identity = diff.spatial == "identity"
    for k in range(last + 1):
        t = grid[k]
        F = pot.value(x)
        f = pot.gradient(x)
        alpha = drift(x, f)
        scale = np.full(n, sig[k]) if identity else diff.scale_at(x, sig[k])
        half_tr = 0.5 * scale * scale * pot.hessian_trace(x)
        f2 = rowdot(f, f)
        fa = rowdot(f, alpha)
        r2 = rowdot(x, x)

        if rule is not None and t >= rule.t0:
            alpha2 = f2 if drift.mode == "gradient_flow" else rowdot(alpha, alpha)
            codes = rule.codes_from(t, r2, F, f2, -fa, alpha2, scale, half_tr)
            newly = alive & (codes > 0)
            if newly.any():
                drop_t[newly] = t
                drop_code[newly] = codes[newly]
                drop_state[newly] = x[newly]
                alive &= ~newly
                all_alive = False

        if is_ck[k]:
            rec["states"][:, ck] = x
            rec["F"][:, ck] = F
            rec["grad_norm"][:, ck] = np.sqrt(f2)
            rec["I_val"][:, ck] = I_val
            rec["I_noise"][:, ck] = I_noise
            rec["I_trace"][:, ck] = I_trace
            rec["alive"][:, ck] = alive
            if planar:
                rec["I_wind"][:, ck] = I_wind
                rec["phi"][:, ck] = phi
            ck += 1

        if planar or t >= config.watch_from or t >= t_window:
            r = np.sqrt(r2)
        if t >= config.watch_from:
            rr = r if all_alive else np.where(alive, r, np.nan)
            watch_min = np.fmin(watch_min, rr)
            watch_max = np.fmax(watch_max, rr)
        if t >= t_window:
            alpha2 = f2 if drift.mode == "gradient_flow" else rowdot(alpha, alpha)
            _update_tail(tail, alive, all_alive, F, f2, -fa, alpha2, scale, r)
        if probe is not None:
            _update_probe(probe, t, F, alive, esc_crossed, esc_time, esc_F, esc_max)

        if k == last:
            break
        dt = grid[k + 1] - t
        if all_alive:
            I_val += fa * dt
            I_noise += dim * dt * scale * scale
            I_trace += half_tr * dt
            if planar:
                I_wind += np.abs(r - 1.0) * dt
        else:
            a = alive * dt
            I_val += a * fa
            I_noise += a * dim * scale * scale
            I_trace += a * half_tr
            if planar:
                I_wind += a * np.abs(r - 1.0)

        if streams is None:
            x_new = x + alpha * dt
        else:
            x_new = x + alpha * dt + (scale * math.sqrt(dt))[:, None] * streams.next()

        # one reduction detects any nonfinite entry; rows are inspected only then
        if not math.isfinite(x_new.sum()):
            bad = alive & ~np.all(np.isfinite(x_new), axis=1)
            if bad.any():
                failed |= bad
                fail_time[bad] = grid[k + 1]
                alive &= ~bad
                all_alive = False

        if planar:
            cross = x[:, 0] * x_new[:, 1] - x[:, 1] * x_new[:, 0]
            dot = x[:, 0] * x_new[:, 0] + x[:, 1] * x_new[:, 1]
            dphi = np.arctan2(cross, dot)
            phi += dphi if all_alive else np.where(alive, dphi, 0.0)

        x = x_new if all_alive else np.where(alive[:, None], x_new, x)

    escape = None
    if probe is not None:
        escape = {"crossed": esc_crossed, "time": esc_time, "F_cross": esc_F, "F_max": esc_max}
    return TrajectoryBatch(
        paths=paths,
        times=ck_times,
        states=rec["states"],
        F=rec["F"],
        grad_norm=rec["grad_norm"],
        I_val=rec["I_val"],
        I_noise=rec["I_noise"],
        I_trace=rec["I_trace"],
        I_wind=rec.get("I_wind"),
        phi=rec.get("phi"),
        alive=rec["alive"],
        terminal=x.copy(),
        dropout_time=drop_t,
        dropout_code=drop_code,
        dropout_state=drop_state,
        failed=failed,
        fail_time=fail_time,
        tail=tail,
        watch_min_radius=watch_min,
        watch_max_radius=watch_max,
        escape=escape,
    )


def _update_tail(tail, alive, all_alive, F, f2, inner, alpha2, scale, r):
    ratio_fa = np.full(len(F), np.inf)
    np.divide(np.sqrt(f2), np.sqrt(alpha2), out=ratio_fa, where=alpha2 >= _ALPHA_TINY2)
    stats = {
        "alignment_min": (ratio_from(inner, f2), np.fmin),
        "ratio_fa_min": (ratio_fa, np.fmin),
        "beta_max": (scale, np.fmax),
        "alpha_max": (np.sqrt(alpha2), np.fmax),
        "F_min": (F, np.fmin),
        "radius_max": (r, np.fmax),
    }
    for key, (vals, op) in stats.items():
        if not all_alive:
            vals = np.where(alive, vals, np.nan)
        tail[key] = op(tail[key], vals)


def _update_probe(probe, t, F, alive, crossed, when, F_cross, F_max):
    below = F - probe.level < -((t + 1.0) ** (-probe.exponent))
    for j, t1 in enumerate(probe.t1):
        if t < t1:
            continue
        # running max first: the crossing step itself seeds it with F(T')
        active = alive & crossed[:, j]
        F_max[:, j] = np.where(active, np.maximum(F_max[:, j], F), F_max[:, j])
        new = alive & ~crossed[:, j] & below
        if new.any():
            crossed[new, j] = True
            when[new, j] = t
            F_cross[new, j] = F[new]
            F_max[new, j] = F[new]


def simulate(config: SimConfig, drift: DriftSpec, diff: DiffusivitySpec, pot: Potential,
             rule: StoppingRule | None = None) -> Trajectory:
    """Simulate one path (``config.path_index``); raises :class:`NonFiniteState` on blow-up."""
    batch = simulate_batch(config, drift, diff, pot, rule)
    if batch.failed[0]:
        raise NonFiniteState(f"path {config.path_index} blew up at t = {batch.fail_time[0]:g}")
    return batch.trajectory(0)


# Time change of the decaying-noise Ornstein-Uhlenbeck process dZ = -2Z ds + (s+1)^-1 dB.

_QUAD_RTOL = 1e-10


def _quad(fn, a, b):
    val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=_QUAD_RTOL, limit=200)
    if not err <= _QUAD_RTOL * abs(val) + 1e-300:
        raise QuadratureError(f"quadrature on [{a}, {b}] only reached error {err:g} for value {val:g}")
    return val


def scaled_clock_increment(s0: float, s1: float) -> float:
    """``exp(-4 s1) (g(s1) - g(s0))``: the exact transition variance of Z from s0 to s1.

    Computed as ``int_{s0}^{s1} (u+1)^-2 exp(-4 (s1 - u)) du``, which never overflows;
    mass below ``s1 - 20`` is under ``exp(-80)`` of the total and is dropped.
    """
    if s1 < s0:
        raise ValueError("need s1 >= s0")
    if s1 == s0:
        return 0.0
    a = max(s0, s1 - 20.0)
    return _quad(lambda u: math.exp(-4.0 * (s1 - u)) / (u + 1.0) ** 2, a, s1)


def log_time_change(s: float) -> float:
    """``log g(s)`` with ``g(s) = int_0^s (u+1)^-2 exp(4u) du``."""
    if s <= 0:
        return -math.inf
    return 4.0 * s + math.log(scaled_clock_increment(0.0, s))


def time_change(s: float) -> float:
    lg = log_time_change(s)
    return math.exp(lg) if lg < 709.0 else math.inf


def simulate_radial_exact(t_start: float, z0: float, times, seed: int, n_paths: int = 1,
                          first_path: int = 0) -> np.ndarray:
    """Exact samples of ``Z`` at ``times`` (all ``>= t_start``) given ``Z_{t_start} = z0``.

    Uses the Brownian time-change representation ``Z_s = exp(-2s) B(g_s)``; returns
    an ``(n_paths, len(times))`` array. Each path uses its own stream.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < t_start or np.any(np.diff(times) < 0):
        raise ValueError("times must be nondecreasing and start at or after t_start")
    knots = np.concatenate([[t_start], times])
    decay = np.exp(-2.0 * np.diff(knots))
    sd = np.sqrt([scaled_clock_increment(a, b) for a, b in zip(knots[:-1], knots[1:])])
    gens = [path_generator(seed, first_path + i) for i in range(n_paths)]
    noise = np.stack([normals(g, len(times)) for g in gens]) if n_paths else np.empty((0, len(times)))
    out = np.empty((n_paths, len(times)))
    z = np.full(n_paths, float(z0))
    for j in range(len(times)):
        z = decay[j] * z + sd[j] * noise[:, j]
        out[:, j] = z
    return out


__all__ = [
    "CLAUSES", "DRIFT_MODES", "SPATIAL_FACTORS", "DriftSpec", "DiffusivitySpec", "SimConfig", "EscapeProbe",
    "Trajectory", "TrajectoryBatch", "NonFiniteState", "StepUnderflow", "QuadratureError", "step_em",
    "simulate", "simulate_batch", "scaled_clock_increment", "time_change", "log_time_change",
    "simulate_radial_exact",
]
