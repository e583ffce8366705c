"""Power-law exponent fits shared by the oracles and the ensemble experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

MIN_FIT_POINTS = 8


class NonPositiveMoment(ValueError):
    """A mean inside the fit window is not positive, so its logarithm is undefined."""

    def __init__(self, time: float, value: float):
        super().__init__(f"non-positive moment {value!r} at checkpoint t = {time!r}")
        self.time = time
        self.value = value


@dataclass(frozen=True)
class RateEstimate:
    """Fitted decay ``mean(t) ~ (t+1)^-exponent``.

    ``times``, ``mean``, ``mean_se`` and ``survival`` are per checkpoint;
    ``window`` is the closed interval of checkpoint times used by the fit.
    """

    exponent: float
    stderr: float
    window: tuple[float, float]
    times: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)
    mean_se: np.ndarray = field(repr=False)
    survival: np.ndarray = field(repr=False)
    intercept: float = 0.0
    n_fit: int = 0

    def within(self, target: float, tol: float) -> bool:
        return abs(self.exponent - target) <= tol


def last_decades(times, n_decades: float = 2.0) -> tuple[float, float]:
    """The window ``[t_max / 10^n_decades, t_max]``."""
    t_max = float(np.max(times))
    return t_max / 10.0**n_decades, t_max


def fit_rate(times, means, window=None, mean_se=None, survival=None, n_decades: float = 2.0) -> RateEstimate:
    """OLS of ``log(mean)`` on ``log(t+1)``; the exponent is the negated slope.

    The default window covers the final ``n_decades`` decades of the checkpoint range.
    """
    times = np.asarray(times, dtype=float)
    means = np.asarray(means, dtype=float)
    if times.shape != means.shape or times.ndim != 1:
        raise ValueError("times and means must be 1-d arrays of equal length")
    lo, hi = last_decades(times, n_decades) if window is None else map(float, window)
    sel = (times >= lo * (1 - 1e-12)) & (times <= hi * (1 + 1e-12))
    if sel.sum() < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} checkpoints in [{lo:g}, {hi:g}], got {int(sel.sum())}")
    for t, m in zip(times[sel], means[sel]):
        if not m > 0:
            raise NonPositiveMoment(float(t), float(m))
    x = np.log(times[sel] + 1.0)
    y = np.log(means[sel])
    res = stats.linregress(x, y)
    stderr = float(res.stderr)
    if not math.isfinite(stderr):
        stderr = 0.0
    n = len(times)
    return RateEstimate(
        exponent=float(-res.slope),
        stderr=stderr,
        window=(float(times[sel][0]), float(times[sel][-1])),
        times=times,
        mean=means,
        mean_se=np.zeros(n) if mean_se is None else np.asarray(mean_se, dtype=float),
        survival=np.ones(n) if survival is None else np.asarray(survival, dtype=float),
        intercept=float(res.intercept),
        n_fit=int(sel.sum()),
    )
