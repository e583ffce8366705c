"""Discretized stopping rules and finite-horizon proxies for the asymptotic events."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .potentials import rowdot

if TYPE_CHECKING:
    from .engine import Trajectory
    from .potentials import Potential

# evaluation order is fixed; codes are 1 + index, 0 means no clause fired
CLAUSES = ("exit", "alignment", "drift_ratio", "grad_bound", "diffusivity", "trace", "lower_dropout")

# 0/0 is read as +infinity
_F_TINY = 1e-14
_INNER_TINY = 1e-28


def clause_name(code: int) -> str | None:
    return None if code == 0 else CLAUSES[code - 1]


def alignment_ratio(f, alpha):
    """``<f, -alpha> / |f|^2`` with the 0/0 convention, batched over the leading axis."""
    f = np.atleast_2d(f)
    alpha = np.atleast_2d(alpha)
    return ratio_from(-rowdot(f, alpha), rowdot(f, f))


def ratio_from(inner, f2):
    """``inner / f2`` reading ``f2 == 0`` (below roundoff) as ``+inf``."""
    out = np.full(np.shape(f2), np.inf)
    ok = ~((f2 < _F_TINY**2) & (inner < _INNER_TINY)) & (f2 > 0)
    np.divide(inner, f2, out=out, where=ok)
    return out


def grad_drift_ratio(f, alpha):
    """``|f| / |alpha|`` with the 0/0 convention."""
    fn = np.linalg.norm(np.atleast_2d(f), axis=-1)
    an = np.linalg.norm(np.atleast_2d(alpha), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = fn / an
    return np.where(an < _F_TINY, np.inf, ratio)


@dataclass(frozen=True)
class StoppingRule:
    """Discrete version of the stopping times used in the rate and convergence arguments.

    ``C`` (``c_bound``) bounds ``|alpha|/|f|``, ``|f|`` and the trace term;
    the diffusivity clause fires when ``|beta_t| >= c_beta (t+1)^-sigma``;
    the lower-dropout clause fires when ``F - level < -c_w (t+1)^(-1/(2 theta - 1))``.
    """

    radius: float = 3.0
    rho: float = 0.5
    c_bound: float = 6.0
    c_beta: float = 2.0
    sigma: float = 1.0
    level: float = 0.0
    theta: float = 0.75
    c_w: float = 0.0
    t0: float = 0.0
    enabled: frozenset = field(default_factory=lambda: frozenset(CLAUSES))

    def __post_init__(self):
        if self.rho <= 0 or self.radius <= 0:
            raise ValueError("StoppingRule needs rho > 0 and radius > 0")
        if self.c_w != 0.0 and not self.theta > 0.5:
            raise ValueError("a lower-dropout barrier (c_w > 0) needs theta > 1/2")
        unknown = set(self.enabled) - set(CLAUSES)
        if unknown:
            raise ValueError(f"unknown clauses {sorted(unknown)}")
        object.__setattr__(self, "enabled", frozenset(self.enabled))

    def barrier(self, t) -> float:
        if self.c_w == 0.0:
            return 0.0
        return self.c_w * (t + 1.0) ** (-1.0 / (2.0 * self.theta - 1.0))

    def codes(self, x, t, F, f, alpha, beta_norm, half_trace) -> np.ndarray:
        """First firing clause per path (as code), batched: ``x, f, alpha`` are ``(n, d)``."""
        return self.codes_from(
            t, rowdot(x, x), F, rowdot(f, f), -rowdot(f, alpha), rowdot(alpha, alpha), beta_norm, half_trace
        )

    def codes_from(self, t, r2, F, f2, inner, alpha2, beta_norm, half_trace) -> np.ndarray:
        """Same as :meth:`codes` from precomputed row quantities.

        ``r2 = |x|^2``, ``f2 = |f|^2``, ``inner = <f, -alpha>``, ``alpha2 = |alpha|^2``.
        """
        n = len(F)
        out = np.zeros(n, dtype=np.int8)
        if t < self.t0:
            return out
        en = self.enabled
        for code, name in enumerate(CLAUSES, start=1):
            if name not in en:
                continue
            if name == "exit":
                hit = r2 > self.radius**2
            elif name == "alignment":
                # ratio <= rho, except 0/0 which reads as +inf
                hit = (inner <= self.rho * f2) & ~((f2 < _F_TINY**2) & (inner < _INNER_TINY))
            elif name == "drift_ratio":
                hit = alpha2 > self.c_bound**2 * f2
            elif name == "grad_bound":
                hit = f2 > self.c_bound**2
            elif name == "diffusivity":
                hit = beta_norm >= self.c_beta * (t + 1.0) ** (-self.sigma)
            elif name == "trace":
                hit = half_trace > self.c_bound * (t + 1.0) ** (-2.0 * self.sigma)
            else:
                hit = F - self.level < -self.barrier(t)
            if hit.any():
                out = np.where((out == 0) & hit, np.int8(code), out)
        return out


def check_rule(rule: StoppingRule, state, t: float, alpha, beta, pot: "Potential") -> str | None:
    """First satisfied enabled clause at a single state, or None. ``beta`` is a d x d' matrix."""
    x = np.asarray(state, dtype=float)[None, :]
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    beta_norm = np.array([np.linalg.norm(beta, 2)])
    half_trace = np.array([0.5 * np.trace(beta.T @ pot.hessian(x[0]) @ beta)])
    code = rule.codes(
        x, t, np.atleast_1d(pot.value(x)), pot.gradient(x), np.asarray(alpha, dtype=float)[None, :],
        beta_norm, half_trace,
    )[0]
    return clause_name(int(code))


@dataclass(frozen=True)
class DropoutRecord:
    triggered: bool
    time: float
    clause: str | None
    state: tuple[float, ...] | None


def locality_series(traj: "Trajectory") -> np.ndarray:
    """Running maximum over checkpoints of ``I_val + I_trace``."""
    return np.maximum.accumulate(traj.I_val + traj.I_trace)


def locality_functional(traj: "Trajectory") -> float:
    return float(locality_series(traj)[-1])


@dataclass(frozen=True)
class EventReport:
    alignment_min: float
    ratio_fa_min: float
    noise_energy: float
    beta_max: float
    alpha_max: float
    F_min: float
    locality_sup: float
    radius_max: float
    dropout_time: float | None
    dropout_clause: str | None

    def to_json(self) -> dict:
        d = asdict(self)
        out = {k: _finite_or_tag(v) for k, v in d.items() if not k.startswith("dropout")}
        out["dropout"] = {"time": _finite_or_tag(self.dropout_time), "clause": self.dropout_clause}
        return out


def _finite_or_tag(v):
    # strict JSON has no infinities; tag them as strings
    if isinstance(v, float) and not np.isfinite(v):
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def event_report(traj: "Trajectory") -> EventReport:
    tail = traj.tail
    return EventReport(
        alignment_min=float(tail["alignment_min"]),
        ratio_fa_min=float(tail["ratio_fa_min"]),
        noise_energy=float(traj.I_noise[-1]),
        beta_max=float(tail["beta_max"]),
        alpha_max=float(tail["alpha_max"]),
        F_min=float(tail["F_min"]),
        locality_sup=locality_functional(traj),
        radius_max=float(tail["radius_max"]),
        dropout_time=traj.dropout.time if traj.dropout.triggered else None,
        dropout_clause=traj.dropout.clause,
    )
