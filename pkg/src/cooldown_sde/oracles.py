"""Closed-form, series and exact-simulation reference values.

None of these reuse the Euler-Maruyama engine, so they serve as independent
checks on its output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .engine import scaled_clock_increment, simulate_radial_exact
from .fitting import RateEstimate, fit_rate
from .potentials import CriticalLevel, Potential
from .streams import PathStreams, normals, path_generator, uniforms_open

KAPPA_HALF_NORMAL = math.sqrt(2.0 / math.pi)
_RESOLVED = 1e-18


class NonDecaying(RuntimeError):
    """The noise-free flow does not approach the requested level (wrong basin)."""


@dataclass(frozen=True)
class SeriesBound:
    kappa: float
    value: float
    truncation: int
    tail_bound: float


def phi_kappa(kappa: float, tol: float = 1e-12) -> SeriesBound:
    """``1/k^2 + sum_{n>=0} 2^(n+1) / (2^n + k)^2`` with a certified geometric tail.

    Once ``2^n >= k`` each term is at most ``2^(1-n)``, so the terms from ``N`` on
    sum to at most ``2^(2-N)``. Summation stops when that bound drops below
    ``min(1e-10 * value, tol)``.
    """
    if not kappa > 0:
        raise ValueError(f"phi_kappa needs kappa > 0, got {kappa}")
    terms = [1.0 / kappa**2]
    n = 0
    while True:
        terms.append(2.0 ** (n + 1) / (2.0**n + kappa) ** 2)
        n += 1
        tail = 2.0 ** (2 - n)
        if 2.0**n >= kappa and tail < min(1e-10 * math.fsum(terms), tol):
            break
    return SeriesBound(kappa=float(kappa), value=math.fsum(terms), truncation=n, tail_bound=tail)


def bm_drift_overshoot_tail(kappa: float) -> float:
    """``P(sup_t (W_t - t) >= kappa) = exp(-2 kappa)`` for standard Brownian motion."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    return math.exp(-2.0 * kappa)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n: int


def bm_overshoot_mc(kappa: float, n_paths: int = 100_000, horizon: float = 50.0, dt: float = 0.05,
                    seed: int = 0, chunk: int = 10_000) -> MCEstimate:
    """Monte Carlo estimate of ``P(sup_{t <= horizon} (W_t - t) >= kappa)``.

    Within each step the maximum of the Brownian bridge between the endpoints is
    drawn exactly, ``(a + b + sqrt((b - a)^2 - 2 dt log U)) / 2``, so there is no
    discretization bias; only the horizon truncates (by ``exp(-2 kappa)`` times a
    vanishing factor for horizon 50).
    """
    n_steps = int(math.ceil(horizon / dt))
    hits = 0
    for c, start in enumerate(range(0, n_paths, chunk)):
        m = min(chunk, n_paths - start)
        gen = path_generator(seed, c)
        y = np.zeros(m)
        hit = np.zeros(m, dtype=bool)
        sq = math.sqrt(dt)
        for _ in range(n_steps):
            z = normals(gen, m)
            u = uniforms_open(gen, m)
            y_new = y - dt + sq * z
            top = 0.5 * (y + y_new + np.sqrt((y_new - y) ** 2 - 2.0 * dt * np.log(u)))
            hit |= top >= kappa
            y = y_new
        hits += int(hit.sum())
    p = hits / n_paths
    return MCEstimate(p, math.sqrt(max(p * (1 - p), 1.0 / n_paths) / n_paths), n_paths)


def half_normal_constant() -> float:
    """``E|N(0,1)| = sqrt(2/pi)``."""
    return KAPPA_HALF_NORMAL


def half_normal_quadrature() -> float:
    val, _ = integrate.quad(lambda x: abs(x) * math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi),
                            -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)
    return val


@dataclass(frozen=True)
class WindingGrowth:
    u: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    variance: np.ndarray
    slope: float
    slope_se: float
    fit_range: tuple[float, float]

    @property
    def target(self) -> float:
        return 0.5 * KAPPA_HALF_NORMAL


def winding_integral_growth(t: float, horizon: float, n_paths: int, seed: int = 0, dt: float = 0.25,
                            fit_range: tuple[float, float] = (10.0, 1e3), n_out: int = 41) -> WindingGrowth:
    """Estimate ``E int_t^u |Z_s| ds`` for the decaying-noise OU process started at 0.

    ``Z`` is sampled exactly on a uniform grid of spacing ``dt`` and integrated with the
    trapezoid rule; in expectation the rule only sees the smooth map ``s -> E|Z_s|``,
    so the coarse grid adds variance but essentially no bias. The slope of the mean
    against ``log u`` over ``fit_range`` estimates ``sqrt(2/pi) / 2``.
    """
    if not horizon > t >= 0:
        raise ValueError("need horizon > t >= 0")
    n_steps = int(math.ceil((horizon - t) / dt))
    grid = t + dt * np.arange(1, n_steps + 1)
    grid[-1] = horizon
    z = np.abs(simulate_radial_exact(t, 0.0, grid, seed, n_paths=n_paths))
    z = np.concatenate([np.zeros((n_paths, 1)), z], axis=1)
    knots = np.concatenate([[t], grid])
    cum = integrate.cumulative_trapezoid(z, knots, axis=1, initial=0.0)

    lo, hi = fit_range
    lo, hi = max(lo, t), min(hi, horizon)
    u_out = np.unique(np.concatenate([[t], np.geomspace(max(lo, dt), hi, n_out), [horizon]]))
    idx = np.clip(np.searchsorted(knots, u_out), 0, len(knots) - 1)
    u_out = knots[idx]
    vals = cum[:, idx]
    mean = vals.mean(axis=0)
    var = vals.var(axis=0, ddof=1) if n_paths > 1 else np.zeros_like(mean)
    se = np.sqrt(var / n_paths)
    sel = (u_out >= lo) & (u_out <= hi)
    res = stats.linregress(np.log(u_out[sel]), mean[sel])
    return WindingGrowth(u=u_out, mean=mean, stderr=se, variance=var, slope=float(res.slope),
                         slope_se=float(res.stderr), fit_range=(float(lo), float(hi)))


def ou_variance(t: float, s: float) -> float:
    """Exact ``Var(Z_s | Z_t)``, i.e. ``exp(-4 s) (g_s - g_t)``."""
    return scaled_clock_increment(t, s)


def ou_mean(t: float, z0: float, s: float) -> float:
    return math.exp(-2.0 * (s - t)) * z0


def ou_euler(t_start: float, z0: float, times, n_paths: int, seed: int, dt: float = 1e-3,
             first_path: int = 0) -> np.ndarray:
    """Euler-Maruyama samples of ``dZ = -2 Z ds + (s+1)^-1 dB`` at ``times``; ``(n_paths, len(times))``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < t_start or np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing and start at or after t_start")
    streams = PathStreams(seed, np.arange(first_path, first_path + n_paths), 1)
    z = np.full(n_paths, float(z0))
    out = np.empty((n_paths, len(times)))
    s = float(t_start)
    for j, target in enumerate(times):
        while s < target - 1e-12:
            h = min(dt, target - s)
            z = z - 2.0 * z * h + math.sqrt(h) / (s + 1.0) * streams.next()[:, 0]
            s += h
        out[:, j] = z
    return out


def radial_euler(t_start: float, zbar0: float, times, n_paths: int, seed: int, dt: float = 1e-3,
                 scale: float = 1.0) -> np.ndarray:
    """Euler-Maruyama samples of the ring radius equation inside the annulus.

    ``dZbar = (-2 Zbar + c^2 / (2 (Zbar + 1) (s+1)^2)) ds + c (s+1)^-1 dB`` with ``c = scale``
    is the law of ``|X_s| - 1`` for the ring dynamics while the mollifier equals 1.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < t_start or np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing and start at or after t_start")
    streams = PathStreams(seed, np.arange(n_paths), 1)
    z = np.full(n_paths, float(zbar0))
    out = np.empty((n_paths, len(times)))
    s = float(t_start)
    for j, target in enumerate(times):
        while s < target - 1e-12:
            h = min(dt, target - s)
            c = scale / (s + 1.0)
            z = z + (-2.0 * z + 0.5 * c * c / (z + 1.0)) * h + c * math.sqrt(h) * streams.next()[:, 0]
            s += h
        out[:, j] = z
    return out


@dataclass(frozen=True)
class ComparisonGap:
    t: float
    gaps: np.ndarray
    exited: np.ndarray
    bound: float

    @property
    def mean(self) -> float:
        return float(self.gaps.mean())

    @property
    def stderr(self) -> float:
        return float(self.gaps.std(ddof=1) / math.sqrt(len(self.gaps)))


def radial_comparison_gap(t: float, zbar0: float, n_paths: int, seed: int, dt: float = 2e-3,
                          span: float = 30.0) -> ComparisonGap:
    """Pathwise ``int_t^{T_t} |Zbar_s - Z_s| ds`` for the coupled radial pair.

    ``Zbar`` follows the radial equation of the ring dynamics (inside the annulus,
    where the mollifier is 1) and ``Z`` the plain decaying-noise OU process, both
    driven by the same increments and started at ``zbar0``. Integration stops at the
    annulus exit ``Zbar + 1 not in (2/3, 2)`` or at ``t + span``.
    """
    if not -1.0 / 3.0 < zbar0 < 1.0:
        raise ValueError("zbar0 must keep 1 + zbar0 inside (2/3, 2)")
    streams = PathStreams(seed, np.arange(n_paths), 1)
    zb = np.full(n_paths, float(zbar0))
    z = zb.copy()
    gap = np.zeros(n_paths)
    inside = np.ones(n_paths, dtype=bool)
    n_steps = int(math.ceil(span / dt))
    s = float(t)
    for _ in range(n_steps):
        gap += np.where(inside, np.abs(zb - z), 0.0) * dt
        c = 1.0 / (s + 1.0)
        dB = math.sqrt(dt) * streams.next()[:, 0]
        zb = zb + (-2.0 * zb + 0.5 / (zb + 1.0) * c * c) * dt + c * dB
        z = z - 2.0 * z * dt + c * dB
        s += dt
        inside &= (zb > -1.0 / 3.0) & (zb < 1.0)
    return ComparisonGap(t=float(t), gaps=gap, exited=~inside, bound=0.5 / (t + 1.0))


@dataclass(frozen=True)
class DeterministicRate:
    """Noise-free decay of ``F(x_t) - level``: a power-law fit plus an exponential check."""

    estimate: RateEstimate | None
    decay: str  # "power" or "exponential"
    exp_rate: float
    times: np.ndarray
    values: np.ndarray

    @property
    def degenerate(self) -> bool:
        # a power-law exponent is meaningless for exponential decay
        return self.decay == "exponential"

    @property
    def exponent(self) -> float:
        return math.nan if self.estimate is None else self.estimate.exponent


def deterministic_rate(pot: Potential, level: CriticalLevel, x0, horizon: float = 1e4,
                       n_checkpoints: int = 64) -> DeterministicRate:
    """Integrate ``x' = -f(x)`` and fit the decay of ``F(x_t) - level`` over the last two decades."""
    x0 = np.asarray(x0, dtype=float)
    if not bool(level.certificate.contains(x0)):
        raise ValueError("x0 lies outside the certificate region of the level")
    times = np.concatenate([[0.0], np.geomspace(min(1.0, horizon / 100.0), horizon, n_checkpoints)])
    sol = integrate.solve_ivp(lambda _t, y: -pot.gradient(y), (0.0, horizon), x0, method="DOP853",
                              t_eval=times, rtol=1e-12, atol=1e-15)
    if not sol.success:
        raise RuntimeError(f"ODE solver failed: {sol.message}")
    vals = pot.value(sol.y.T) - level.level
    v0 = vals[0]
    if not (vals[-1] < 0.5 * v0 and vals[-1] >= -1e-12):
        raise NonDecaying(
            f"F - level went from {v0:g} to {vals[-1]:g}; the flow does not approach level {level.level:g}"
        )
    # below this the solution is dominated by the absolute solver tolerance
    resolved = (vals > _RESOLVED * v0) & (times > 0)
    semi_all = stats.linregress(times[resolved], np.log(vals[resolved]))
    sel = resolved & (times >= horizon / 100.0)
    if sel.sum() < 8:
        # fell through the resolution floor inside the window: faster than any power
        return DeterministicRate(None, "exponential", float(-semi_all.slope), times, vals)
    est = fit_rate(times[sel], vals[sel])
    loglog_r2 = stats.linregress(np.log(times[sel] + 1.0), np.log(vals[sel])).rvalue ** 2
    semi = stats.linregress(times[sel], np.log(vals[sel]))
    decay = "exponential" if semi.rvalue**2 > loglog_r2 else "power"
    return DeterministicRate(est, decay, float(-semi.slope), times, vals)


def ring_radial_flow(r0: float, t):
    """Exact noise-free radius for the ring landscape from ``r0 >= 1/2``: ``1 + (r0 - 1) e^(-2t)``."""
    if r0 < 0.5:
        raise ValueError("closed form holds on the outer branch r >= 1/2")
    return 1.0 + (r0 - 1.0) * np.exp(-2.0 * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class OracleCheck:
    name: str
    expected: float
    actual: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return {"name": self.name, "expected": self.expected, "actual": self.actual,
                "tolerance": self.tolerance, "pass": self.passed}


def _close(name, expected, actual, tol) -> OracleCheck:
    return OracleCheck(name, float(expected), float(actual), float(tol), bool(abs(actual - expected) <= tol))


def oracle_suite(seed: int = 0, mc_paths: int = 100_000) -> list[OracleCheck]:
    """All closed-form and Monte Carlo oracle checks, in a fixed order."""
    from .potentials import even_power_well, ring_potential

    out = []
    for k in (0.5, 1.0, 2.0, 5.0, 10.0):
        phi = phi_kappa(k).value
        tail = bm_drift_overshoot_tail(k)
        out.append(OracleCheck(f"phi_dominates_overshoot[kappa={k:g}]", tail, phi, 0.0, phi >= tail))
    b = phi_kappa(1.0)
    longer = math.fsum([1.0] + [2.0 ** (n + 1) / (2.0**n + 1.0) ** 2 for n in range(b.truncation + 40)])
    out.append(_close("phi_truncation_stable[kappa=1]", longer, b.value, 1e-10))
    out.append(_close("phi[kappa=1]", 2.693, b.value, 0.01))
    out.append(_close("phi[kappa=10]", 0.28, phi_kappa(10.0).value, 0.01))
    mc = bm_overshoot_mc(1.0, n_paths=mc_paths, seed=seed)
    out.append(_close("bm_overshoot_mc[kappa=1]", math.exp(-2.0), mc.value, 3 * mc.stderr))
    out.append(_close("half_normal_quadrature", half_normal_constant(), half_normal_quadrature(), 1e-10))
    for p, target in ((2, 2.0), (3, 1.5)):
        pot = even_power_well(p, 1)
        rate = deterministic_rate(pot, pot.critical_levels[0], [1.0], horizon=1e4)
        out.append(_close(f"deterministic_rate[even_power:{p}:1]", target, rate.exponent, 0.05))
    ring = ring_potential()
    rr = deterministic_rate(ring, ring.critical_levels[1], [1.05, 0.0], horizon=10.0)
    out.append(OracleCheck("deterministic_rate[ring] exponential", 4.0, rr.exp_rate, 0.05,
                           rr.degenerate and abs(rr.exp_rate - 4.0) <= 0.05))
    wg = winding_integral_growth(0.0, 1e3, 2000, seed=seed)
    out.append(_close("winding_growth_slope", wg.target, wg.slope, 0.05))
    out.append(OracleCheck("winding_integral_variance_le_1", 1.0, float(wg.variance.max()), 0.0,
                           bool(wg.variance.max() <= 1.0)))
    return out
