"""Leave-one-out model checks computed from full-data posterior draws.

Deleting unit ``di`` reweights the full-data draws by ``1/f(Y_di | theta)``,
normalized.  The reweighted draws give the deleted predictive mean and
variance (hence standardized cross-validation residuals) and the
harmonic-mean estimate of the conditional predictive ordinate.
Everything is done with log densities and log-sum-exp.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import ValidatedProblem
from .sampler import ParameterDraws

logger = logging.getLogger(__name__)

__all__ = [
    "UnitDiagnostics",
    "log_density",
    "importance_weights",
    "deleted_moments",
    "cv_residual",
    "cpo",
    "unit_diagnostics",
    "VAR_FLOOR",
]

VAR_FLOOR = 1e-12
_CHUNK_ELEMS = 1 << 22


def log_density(y, x, w, area: int, draws: ParameterDraws) -> np.ndarray:
    """``log f(y | theta_h)`` for each draw; ``f`` is ``N(x'beta + u_d, sigma2/w)``.

    ``y``, ``w`` may be vectors of units (with ``x`` of shape ``(k, p)`` and
    ``area`` an array), giving a ``(k, H)`` result.
    """
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    area = np.atleast_1d(area)
    mean = x @ draws.beta.T + draws.u[:, area].T               # (k, H)
    var = draws.sigma2[None, :] / w[:, None]
    resid = y[:, None] - mean
    out = -0.5 * (np.log(2 * np.pi * var) + resid * resid / var)
    return out[0] if scalar else out


def _weights_from_logf(logf: np.ndarray):
    """Normalized reciprocal-density weights and the log of sum(1/f)."""
    lse = logsumexp(-logf, axis=-1, keepdims=True)
    bad = ~np.isfinite(lse[..., 0])
    v = np.exp(-logf - lse)
    if np.any(bad):
        logger.warning("%d unit(s) with non-finite density sums; weights set "
                       "uniform", int(bad.sum()))
        v[bad] = 1.0 / logf.shape[-1]
    return v, lse[..., 0], bad


def importance_weights(y, x, w, area: int, draws: ParameterDraws) -> np.ndarray:
    """Leave-one-out weights ``v_h = (1/f_h) / sum_k (1/f_k)``."""
    logf = log_density(y, x, w, area, draws)
    return _weights_from_logf(np.atleast_2d(logf))[0][0]


def deleted_moments(x, w, area: int, draws: ParameterDraws, weights):
    """Deleted predictive mean and variance of one unit.

    Returns ``(mean, variance, clamped)``; ``clamped`` is True when Monte
    Carlo noise made the variance fall below ``VAR_FLOOR``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(weights, dtype=float)
    mu = draws.beta @ x + draws.u[:, area]
    mean = float(v @ mu)
    second = float(v @ (draws.sigma2 / w + mu * mu))
    var = second - mean * mean
    if var < VAR_FLOOR:
        return mean, VAR_FLOOR, True
    return mean, var, False


def cv_residual(y: float, mean: float, variance: float) -> float:
    if variance <= 0:
        raise ValueError("deleted variance must be positive")
    return (y - mean) / np.sqrt(variance)


def cpo(y, x, w, area: int, draws: ParameterDraws) -> float:
    """Harmonic mean of ``f(y | theta_h)`` over draws."""
    logf = np.atleast_1d(log_density(y, x, w, area, draws))
    return float(np.exp(np.log(logf.size) - logsumexp(-logf)))


@dataclass(frozen=True)
class UnitDiagnostics:
    residual: np.ndarray
    cpo: np.ndarray
    deleted_mean: np.ndarray
    deleted_var: np.ndarray
    var_clamped: np.ndarray
    underflow: np.ndarray

    def extreme(self, threshold: float = 0.014) -> np.ndarray:
        return self.cpo < threshold

    def flags(self, low: float = 0.025, extreme: float = 0.014) -> list[str]:
        out = []
        for i in range(self.cpo.size):
            tags = []
            if self.cpo[i] < extreme:
                tags.append("extreme")
            elif self.cpo[i] < low:
                tags.append("low_cpo")
            if self.var_clamped[i]:
                tags.append("var_clamped")
            if self.underflow[i]:
                tags.append("underflow")
            out.append(";".join(tags))
        return out


def unit_diagnostics(problem: ValidatedProblem, draws: ParameterDraws) -> UnitDiagnostics:
    """Cross-validation residuals and CPOs for every sampled unit."""
    n, H = problem.n, len(draws)
    res = {k: np.empty(n) for k in ("r", "cpo", "mean", "var")}
    clamped = np.zeros(n, dtype=bool)
    under = np.zeros(n, dtype=bool)
    step = max(1, _CHUNK_ELEMS // H)
    for i0 in range(0, n, step):
        sl = slice(i0, min(i0 + step, n))
        area = problem.unit_area[sl]
        x, w, y = problem.X[sl], problem.w[sl], problem.y[sl]
        logf = log_density(y, x, w, area, draws)
        v, lse, bad = _weights_from_logf(logf)
        mu = x @ draws.beta.T + draws.u[:, area].T                # (k, H)
        mean = np.sum(v * mu, axis=1)
        second = np.sum(v * (draws.sigma2[None, :] / w[:, None] + mu * mu), axis=1)
        var = second - mean * mean
        low = var < VAR_FLOOR
        var = np.where(low, VAR_FLOOR, var)
        res["mean"][sl], res["var"][sl] = mean, var
        res["r"][sl] = (y - mean) / np.sqrt(var)
        res["cpo"][sl] = np.exp(np.log(H) - lse)
        clamped[sl], under[sl] = low, bad
    return UnitDiagnostics(res["r"], res["cpo"], res["mean"], res["var"],
                           clamped, under)
