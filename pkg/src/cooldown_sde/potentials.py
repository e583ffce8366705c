"""Lyapunov landscapes with exact derivatives and Lojasiewicz certificates.

All callables accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)`` and return correspondingly shaped outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class LojaCertificate:
    """Claim ``|f(y)| >= L |F(y) - level|**theta`` on a ball or annulus.

    The region is ``inner <= |y - center| <= outer``; a ball has ``inner = 0``.
    """

    theta: float
    L: float
    center: tuple[float, ...]
    outer: float
    inner: float = 0.0

    def __post_init__(self):
        if not 0.5 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [1/2, 1), got {self.theta}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if not 0 <= self.inner <= self.outer:
            raise ValueError("certificate radii must satisfy 0 <= inner <= outer")

    def contains(self, y) -> Array | bool:
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y - np.asarray(self.center), axis=-1)
        return (r >= self.inner) & (r <= self.outer)

    def sample(self, n: int, rng: np.random.Generator) -> Array:
        """Uniform-in-radius samples from the region (capped at radius 10 for global balls)."""
        d = len(self.center)
        outer = min(self.outer, 10.0)
        directions = rng.standard_normal((n, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.uniform(self.inner, outer, size=n)
        return np.asarray(self.center) + radii[:, None] * directions


@dataclass(frozen=True)
class CriticalLevel:
    level: float
    points: tuple[tuple[float, ...], ...]
    certificate: LojaCertificate


@dataclass(frozen=True)
class Potential:
    name: str
    dimension: int
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    hessian: Callable[[Array], Array]
    critical_levels: tuple[CriticalLevel, ...]
    # trace of the Hessian; the engine calls this once per step
    laplacian: Callable[[Array], Array] | None = field(default=None, repr=False)
    # radii where the formula switches branch (finite-difference checks skip them)
    branch_radii: tuple[float, ...] = ()

    def hessian_trace(self, x) -> Array:
        if self.laplacian is not None:
            return self.laplacian(x)
        return np.trace(self.hessian(x), axis1=-2, axis2=-1)

    def lowest_level(self) -> CriticalLevel:
        return min(self.critical_levels, key=lambda c: c.level)


def rowdot(a: Array, b: Array) -> Array:
    """Row-wise inner product of two ``(n, d)`` arrays (fast paths for d = 1, 2)."""
    d = a.shape[1]
    if d == 1:
        return a[:, 0] * b[:, 0]
    if d == 2:
        return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]
    return np.einsum("ij,ij->i", a, b)


def _batched(fn):
    """Lift a batch implementation ``(n, d) -> (n, ...)`` to also accept ``(d,)``."""

    def wrapper(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return fn(x[None, :])[0]
        return fn(x)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def even_power_well(p: int, d: int) -> Potential:
    """``F(x) = |x|^(2p)`` with its single critical level 0 at the origin."""
    if int(p) != p or p < 1:
        raise ValueError(f"even_power_well needs an integer p >= 1, got {p}")
    if int(d) != d or d < 1:
        raise ValueError(f"even_power_well needs a dimension d >= 1, got {d}")
    p, d = int(p), int(d)

    @_batched
    def value(x):
        r2 = rowdot(x, x)
        return r2**p

    @_batched
    def gradient(x):
        r2 = rowdot(x, x)
        return (2 * p * r2 ** (p - 1))[:, None] * x

    @_batched
    def hessian(x):
        r2 = rowdot(x, x)
        eye = np.eye(d)[None, :, :]
        h = (2 * p * r2 ** (p - 1))[:, None, None] * eye
        if p >= 2:
            h = h + (4 * p * (p - 1) * r2 ** (p - 2))[:, None, None] * np.einsum("ij,ik->ijk", x, x)
        return h

    @_batched
    def laplacian(x):
        r2 = rowdot(x, x)
        return r2 ** (p - 1) * (2 * p * d + 4 * p * (p - 1))

    certificate = LojaCertificate(
        theta=1.0 - 1.0 / (2 * p), L=2.0 * p, center=(0.0,) * d, outer=np.inf
    )
    level = CriticalLevel(0.0, ((0.0,) * d,), certificate)
    return Potential(
        name=f"even_power:{p}:{d}",
        dimension=d,
        value=value,
        gradient=gradient,
        hessian=hessian,
        critical_levels=(level,),
        laplacian=laplacian,
    )


def psi(r):
    """Radial profile of the ring landscape."""
    r = np.asarray(r, dtype=float)
    return np.where(r >= 0.5, (1.0 - r) ** 2, 8.0 / 3.0 * r**3 - 3.0 * r**2 + 2.0 / 3.0)


def psi_prime(r):
    r = np.asarray(r, dtype=float)
    return np.where(r >= 0.5, 2.0 * (r - 1.0), 8.0 * r**2 - 6.0 * r)


def psi_second(r):
    r = np.asarray(r, dtype=float)
    return np.where(r >= 0.5, 2.0, 16.0 * r - 6.0)


@_batched
def _ring_value(x):
    return psi(np.sqrt(rowdot(x, x)))


@_batched
def _ring_gradient(x):
    r = np.sqrt(rowdot(x, x))
    outer = r >= 0.5
    safe_r = np.where(outer, r, 1.0)
    # psi'(r)/r, written so the inner branch stays smooth at the origin
    g = np.where(outer, 2.0 - 2.0 / safe_r, 8.0 * r - 6.0)
    return g[:, None] * x


@_batched
def _ring_hessian(x):
    r = np.sqrt(rowdot(x, x))
    outer = r >= 0.5
    safe_r = np.where(r > 0, r, 1.0)
    xx = np.einsum("ij,ik->ijk", x, x)
    eye = np.eye(2)[None, :, :]
    # inner: (8r - 6) I + 8 x x^T / r ; outer: (2 - 2/r) I + 2 x x^T / r^3
    iso = np.where(outer, 2.0 - 2.0 / safe_r, 8.0 * r - 6.0)
    aniso = np.where(outer, 2.0 / safe_r**3, np.where(r > 0, 8.0 / safe_r, 0.0))
    return iso[:, None, None] * eye + aniso[:, None, None] * xx


@_batched
def _ring_laplacian(x):
    r = np.sqrt(rowdot(x, x))
    outer = r >= 0.5
    safe_r = np.where(outer, r, 1.0)
    return np.where(outer, 4.0 - 2.0 / safe_r, 24.0 * r - 12.0)


def _radial_certificate_constant(level: float, inner: float, outer: float, n: int = 20001) -> float:
    """90% of min |psi'| / |psi - level|^(1/2) over a radial grid, skipping 0/0 points."""
    r = np.linspace(inner, outer, n)
    num = np.abs(psi_prime(r))
    den = np.sqrt(np.abs(psi(r) - level))
    mask = den > 1e-12
    return 0.9 * float(np.min(num[mask] / den[mask]))


def ring_potential() -> Potential:
    """Rotationally invariant landscape ``F(x) = psi(|x|)`` on the plane.

    Critical set: the origin (level 2/3, Hessian ``-6 I``) and the unit
    circle (level 0, ``psi''(1) = 2``).
    """
    origin_cert = LojaCertificate(
        theta=0.5,
        L=_radial_certificate_constant(2.0 / 3.0, 0.0, 0.3),
        center=(0.0, 0.0),
        outer=0.3,
    )
    circle_cert = LojaCertificate(
        theta=0.5,
        L=_radial_certificate_constant(0.0, 0.9, 1.1),
        center=(0.0, 0.0),
        outer=1.1,
        inner=0.9,
    )
    angles = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
    circle_points = tuple((float(np.cos(a)), float(np.sin(a))) for a in angles)
    return Potential(
        name="ring",
        dimension=2,
        value=_ring_value,
        gradient=_ring_gradient,
        hessian=_ring_hessian,
        critical_levels=(
            CriticalLevel(2.0 / 3.0, ((0.0, 0.0),), origin_cert),
            CriticalLevel(0.0, circle_points, circle_cert),
        ),
        laplacian=_ring_laplacian,
        branch_radii=(0.5,),
    )


def ort(x) -> Array:
    """Rotate planar vectors by +90 degrees: ``(x1, x2) -> (-x2, x1)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"ort is defined on the plane only, got dimension {x.shape[-1]}")
    return np.stack([-x[..., 1], x[..., 0]], axis=-1)


def _smoothstep(u):
    # quintic: C^2 with zero first and second derivatives at both ends
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def mollifier_radial(r):
    r = np.asarray(r, dtype=float)
    rising = _smoothstep((r - 0.5) * 6.0)
    falling = _smoothstep(3.0 - r)
    return np.where(r <= 2.0, rising, falling)


def mollifier(x) -> Array:
    """Radial C^2 bump: 1 on ``2/3 <= |x| <= 2``, 0 on ``|x| <= 1/2`` and ``|x| >= 3``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"mollifier is defined on the plane only, got dimension {x.shape[-1]}")
    return mollifier_radial(np.linalg.norm(x, axis=-1))


def loja_residual(pot: Potential, level: CriticalLevel, y) -> float | Array:
    """``|f(y)| - L |F(y) - level|**theta``; nonnegative where the certificate holds."""
    cert = level.certificate
    y = np.asarray(y, dtype=float)
    inside = cert.contains(y)
    if not np.all(inside):
        raise ValueError("point(s) outside the certificate region")
    grad_norm = np.linalg.norm(pot.gradient(y), axis=-1)
    return grad_norm - cert.L * np.abs(pot.value(y) - level.level) ** cert.theta


def potential_from_id(ident: str) -> Potential:
    """Resolve ``"even_power:p:d"`` or ``"ring"``."""
    parts = ident.strip().split(":")
    if parts[0] == "ring" and len(parts) == 1:
        return ring_potential()
    if parts[0] == "even_power" and len(parts) == 3:
        try:
            p, d = int(parts[1]), int(parts[2])
        except ValueError:
            raise ValueError(f"malformed potential id {ident!r}") from None
        return even_power_well(p, d)
    raise ValueError(f"unknown potential id {ident!r}")
