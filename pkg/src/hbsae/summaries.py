"""Posterior summaries of indicator draws.

All functions reduce over the last axis, so they work on a single vector of
draws or on a whole ``(..., H)`` array of areas at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InsufficientDrawsError",
    "PosteriorSummary",
    "mean_variance",
    "equal_tail",
    "hpd",
    "coefficient_of_variation",
    "summarize",
]

_TOL = 1e-9


class InsufficientDrawsError(ValueError):
    pass


def mean_variance(draws):
    """Posterior mean and variance; the variance divides by ``H``, not ``H-1``."""
    draws = np.asarray(draws, dtype=float)
    H = draws.shape[-1]
    if H < 2:
        raise InsufficientDrawsError("need at least 2 draws")
    # shift by the first draw so constant input gives exactly zero variance
    ref = draws[..., :1]
    shifted = draws - ref
    off = shifted.mean(axis=-1)
    dev = shifted - off[..., None]
    return ref[..., 0] + off, np.mean(dev * dev, axis=-1)


def _check_level(H: int, level: float):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if H * (1 - level) / 2 < 1 - _TOL:
        raise InsufficientDrawsError(
            f"{H} draws cannot resolve a {level:g} interval "
            f"(need H(1-level)/2 >= 1)")


def equal_tail(draws, level: float = 0.95):
    """Equal-tail interval from order statistics.

    Uses 1-based ranks ``ceil(H(1-level)/2)`` and ``ceil(H(1+level)/2)``.
    """
    s = np.sort(np.asarray(draws, dtype=float), axis=-1)
    H = s.shape[-1]
    _check_level(H, level)
    lo = math.ceil(H * (1 - level) / 2 - _TOL)
    hi = math.ceil(H * (1 + level) / 2 - _TOL)
    return s[..., lo - 1], s[..., hi - 1]


def hpd(draws, level: float = 0.95):
    """Shortest window ``(s[j], s[j+m])`` over sorted draws, ``m = floor(level H)``.

    Ties go to the smallest ``j``.
    """
    s = np.sort(np.asarray(draws, dtype=float), axis=-1)
    H = s.shape[-1]
    _check_level(H, level)
    m = math.floor(level * H + _TOL)
    widths = s[..., m:] - s[..., :H - m]
    j = np.argmin(widths, axis=-1)[..., None]
    return (np.take_along_axis(s, j, axis=-1)[..., 0],
            np.take_along_axis(s, j + m, axis=-1)[..., 0])


def coefficient_of_variation(mean, variance):
    """``sqrt(variance)/mean``; NaN where the mean is not positive."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(variance, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = np.where(mean > 0, sd / np.where(mean > 0, mean, 1.0), np.nan)
    return cv if cv.ndim else float(cv)


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    variance: np.ndarray
    sd: np.ndarray
    cv: np.ndarray
    et_interval: tuple
    hpd_interval: tuple
    level: float

    @property
    def cv_defined(self):
        return np.isfinite(self.cv)


def summarize(draws, level: float = 0.95) -> PosteriorSummary:
    mean, var = mean_variance(draws)
    return PosteriorSummary(mean, var, np.sqrt(var),
                            coefficient_of_variation(mean, var),
                            equal_tail(draws, level), hpd(draws, level), level)
