"""Deterministic cooling laws and the envelope functions that bound moment decay."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

KINDS = ("poly", "log", "const", "zero")

# the logarithmic law sqrt(2c / log(t+1)) blows up at t = 0
LOG_T_MIN = 1.0


@dataclass(frozen=True)
class Schedule:
    """``poly``: ``scale * (t+1)**-exponent``; ``log``: ``sqrt(2*scale / log(t+1))``;
    ``const``: ``scale``; ``zero``: 0."""

    kind: str
    scale: float = 0.0
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.scale < 0 or self.exponent < 0:
            raise ValueError("schedule scale and exponent must be nonnegative")

    @property
    def t_min(self) -> float:
        return LOG_T_MIN if self.kind == "log" else 0.0

    def eval(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise ValueError(f"schedule evaluated at negative time {t}")
        if np.any(t_arr < self.t_min):
            raise ValueError(f"logarithmic schedule needs t >= {self.t_min}, got {t}")
        if self.kind == "poly":
            out = self.scale * (t_arr + 1.0) ** (-self.exponent)
        elif self.kind == "log":
            out = np.sqrt(2.0 * self.scale / np.log(t_arr + 1.0))
        elif self.kind == "const":
            out = np.full_like(t_arr, self.scale)
        else:
            out = np.zeros_like(t_arr)
        return float(out) if np.ndim(out) == 0 else out

    __call__ = eval

    def squared_tail_integral(self, t: float) -> float:
        """``int_t^inf sigma_u^2 du``; ``math.inf`` when not integrable."""
        if t < 0:
            raise ValueError(f"negative time {t}")
        if self.kind == "zero" or self.scale == 0.0:
            return 0.0
        if self.kind == "poly":
            if self.exponent <= 0.5:
                return math.inf
            return self.scale**2 * (t + 1.0) ** (1.0 - 2.0 * self.exponent) / (2.0 * self.exponent - 1.0)
        return math.inf

    def squared_integral(self, t0: float, t1: float) -> float:
        """``int_{t0}^{t1} sigma_u^2 du`` for the closed-form kinds."""
        if self.kind == "poly" and self.exponent != 0.5:
            a = 1.0 - 2.0 * self.exponent
            return self.scale**2 * ((t1 + 1.0) ** a - (t0 + 1.0) ** a) / a
        if self.kind == "poly":
            return self.scale**2 * math.log((t1 + 1.0) / (t0 + 1.0))
        if self.kind == "const":
            return self.scale**2 * (t1 - t0)
        if self.kind == "zero":
            return 0.0
        raise NotImplementedError("no closed form for the logarithmic schedule")

    def ident(self) -> str:
        if self.kind == "poly":
            return f"poly:{self.scale!r}:{self.exponent!r}"
        if self.kind == "log":
            return f"log:{self.scale!r}"
        if self.kind == "const":
            return f"const:{self.scale!r}"
        return "zero"


def parse_schedule(text: str) -> Schedule:
    """Parse ``"poly:C:sigma"``, ``"log:c"``, ``"const:v"`` or ``"zero"``."""
    parts = text.strip().split(":")
    arity = {"poly": 3, "log": 2, "const": 2, "zero": 1}
    if parts[0] not in arity or len(parts) != arity[parts[0]]:
        raise ValueError(f"malformed schedule {text!r}")
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError:
        raise ValueError(f"malformed schedule {text!r}") from None
    if parts[0] == "poly":
        return Schedule("poly", nums[0], nums[1])
    if parts[0] in ("log", "const"):
        return Schedule(parts[0], nums[0])
    return Schedule("zero")


def predicted_exponent(theta: float, sigma: float) -> float:
    """Decay exponent ``min(sigma/theta, 1/(2 theta - 1))`` of the restricted moment."""
    if not 0.5 < theta < 1.0:
        raise ValueError(f"theta must lie in (1/2, 1), got {theta}")
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    return min(sigma / theta, 1.0 / (2.0 * theta - 1.0))


@dataclass(frozen=True)
class EnvelopeParams:
    theta: float
    v_scale: float
    v_exponent: float
    c_w: float = 0.0
    kappa1: float = 1.0
    kappa2: float = 1.0
    eta: float = 1.0
    alpha: float = 1.0
    R: float = 1.0
    rho: float = 1.0

    def v(self, t):
        return self.v_scale * (np.asarray(t, dtype=float) + 1.0) ** (-self.v_exponent)

    def v_dot(self, t):
        t = np.asarray(t, dtype=float)
        return -self.v_exponent * self.v(t) / (t + 1.0)

    def w(self, t):
        return self.c_w * self.v(t)


def phi_R(params: EnvelopeParams, t):
    """Solution of ``Phi' = -eta Phi^(2 theta)`` with ``Phi(0) = R``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("phi_R needs t >= 0")
    q = 2.0 * params.theta - 1.0
    out = params.R * (q * params.eta * params.R**q * t + 1.0) ** (-1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def canonical_envelope(theta: float, schedule: Schedule, **kw) -> EnvelopeParams:
    """The two standard choices of ``v``: deterministic rate when the schedule decays
    at least like ``(t+1)^(-theta/(2 theta - 1))``, noise-limited ``(t+1)^(-sigma/theta)`` otherwise."""
    if schedule.kind not in ("poly", "zero"):
        raise ValueError("canonical envelopes exist for polynomial (or zero) schedules only")
    sigma = schedule.exponent if schedule.kind == "poly" else math.inf
    scale = schedule.scale if schedule.kind == "poly" else 0.0
    if sigma >= theta / (2.0 * theta - 1.0):
        v_exp = 1.0 / (2.0 * theta - 1.0)
    else:
        v_exp = sigma / theta
    return EnvelopeParams(theta=theta, v_scale=1.0, v_exponent=v_exp, kappa1=v_exp,
                          kappa2=scale**2 if scale > 0 else 1.0, **kw)


@dataclass(frozen=True)
class EnvelopeReport:
    decay_violation: float  # max of -v'/v - kappa1 v^(2 theta - 1)
    noise_violation: float  # max of sigma^2 - kappa2 v^(2 theta)
    ok: bool


def default_grid(t_max: float = 1e4, n: int = 512) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-3, math.log10(t_max), n - 1)])


def validate_envelope(params: EnvelopeParams, schedule: Schedule, grid=None, rtol: float = 1e-12) -> EnvelopeReport:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("envelope grid must be nonempty and strictly increasing")
    th = params.theta
    v = params.v(grid)
    lhs1 = -params.v_dot(grid) / v
    rhs1 = params.kappa1 * v ** (2 * th - 1)
    t_eval = np.maximum(grid, schedule.t_min)
    sig2 = np.asarray(schedule.eval(t_eval), dtype=float) ** 2
    rhs2 = params.kappa2 * v ** (2 * th)
    # relative slack absorbs roundoff where the canonical choices hold with equality
    d1 = float(np.max(lhs1 - rhs1 * (1 + rtol)))
    d2 = float(np.max(sig2 - rhs2 * (1 + rtol)))
    return EnvelopeReport(d1, d2, d1 <= 0 and d2 <= 0)


def find_alpha_eta(theta: float, rho: float, L: float, c_w: float, kappa1: float, kappa2: float,
                   margin: float = 0.5) -> tuple[float, float]:
    """Constants (alpha, eta) making the comparison inequality strict for all a, b > 0.

    The inequality is homogeneous of degree ``2 theta``, and ``s^(2theta) + (1-s)^(2theta) <= 1``
    on [0, 1], so it suffices that both coefficients stay below ``rho L^2 2^(1 - 2theta)``.
    Returns ``eta = margin * A`` and the smallest ``alpha >= c_w`` with
    ``(rho L^2 c_w^(2theta) + kappa2 + kappa1 alpha) / alpha^(2theta) <= margin * A``.
    """
    if not 0.5 < theta < 1.0:
        raise ValueError("theta must lie in (1/2, 1)")
    A = rho * L**2 * 2.0 ** (1.0 - 2.0 * theta)
    target = margin * A
    K0 = rho * L**2 * c_w ** (2 * theta) + kappa2

    def excess(alpha):
        return (K0 + kappa1 * alpha) / alpha ** (2 * theta) - target

    hi = max(c_w, 1.0)
    while excess(hi) > 0:
        hi *= 2.0
    lo = max(c_w, 1e-12)
    if excess(lo) <= 0:
        return lo, target
    alpha = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14)
    return alpha * (1 + 1e-9), target


def comparison_holds(theta: float, rho: float, L: float, c_w: float, kappa1: float, kappa2: float,
                     alpha: float, eta: float, n: int = 2001) -> bool:
    """Check the strict inequality on a grid of ``a = s, b = 1 - s`` (homogeneity covers the rest)."""
    s = np.linspace(0.0, 1.0, n)
    a, b = s, 1.0 - s
    lhs = rho * L**2 * 2.0 ** (-(2 * theta - 1)) * (a + b) ** (2 * theta)
    K = (rho * L**2 * c_w ** (2 * theta) + kappa2 + kappa1 * alpha) / alpha ** (2 * theta)
    rhs = eta * a ** (2 * theta) + K * b ** (2 * theta)
    return bool(np.all(lhs > rhs))
