"""Data model, validation and closed-form per-rho posterior quantities.

The heteroscedastic nested-error model on the transformed welfare scale is

    Y_di | u_d, beta, sigma2 ~ N(x_di' beta + u_d, sigma2 / w_di)
    u_d | rho, sigma2        ~ N(0, sigma2 * rho / (1 - rho))

with the flat/Jeffreys prior ``1/sigma2`` on ``(beta, sigma2)`` and a uniform
prior on ``rho`` over ``[epsilon, 1 - epsilon]``.  Conditionally on ``rho``
everything is conjugate; this module evaluates the conditional quantities
(shrinkage factors, ``Q``, ``p``, ``beta_hat``, ``gamma``) and the
unnormalized log posterior of ``rho``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

__all__ = [
    "ProblemValidationError",
    "SurveySample",
    "CensusFrame",
    "TransformSpec",
    "ValidatedProblem",
    "GridPoint",
    "GridBatch",
    "RhoGrid",
    "ShiftSelection",
    "validate_problem",
    "area_weighted_means",
    "grid_batch",
    "grid_point",
    "grid_masses",
    "build_rho_grid",
    "apply_transform",
    "invert_transform",
    "select_shift",
    "shrunk_residuals",
]

# keeps the batched residual matrix (grid points x units) below ~32 MB
_GRID_CHUNK_ELEMS = 1 << 22


class ProblemValidationError(ValueError):
    """Input that cannot define a proper posterior or a consistent population.

    ``code`` is a stable machine-readable tag (``"rank_deficient"``,
    ``"area_size_mismatch"``, ``"nonpositive_weight"``, ``"transform_domain"``,
    ``"unknown_area"``, ``"too_few_units"``, ``"shape"``).
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# input containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurveySample:
    """Unit-level survey records.

    ``X`` must already contain the intercept column if one is wanted.
    """

    area: np.ndarray
    welfare: np.ndarray
    X: np.ndarray
    het_weight: np.ndarray | None = None
    survey_weight: np.ndarray | None = None

    def __post_init__(self):
        area = np.asarray(self.area).astype(np.int64).ravel()
        welfare = np.asarray(self.welfare, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = area.size
        w = (np.ones(n) if self.het_weight is None
             else np.asarray(self.het_weight, dtype=float).ravel())
        sw = (np.ones(n) if self.survey_weight is None
              else np.asarray(self.survey_weight, dtype=float).ravel())
        if not (welfare.size == n == X.shape[0] == w.size == sw.size):
            raise ProblemValidationError(
                "shape", "sample columns have inconsistent lengths")
        object.__setattr__(self, "area", area)
        object.__setattr__(self, "welfare", welfare)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "het_weight", w)
        object.__setattr__(self, "survey_weight", sw)

    @property
    def n(self) -> int:
        return self.area.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def drop(self, index: int) -> "SurveySample":
        keep = np.ones(self.n, dtype=bool)
        keep[index] = False
        return SurveySample(self.area[keep], self.welfare[keep], self.X[keep],
                            self.het_weight[keep], self.survey_weight[keep])


@dataclass(frozen=True)
class CensusFrame:
    """Out-of-sample population units, aggregated into rows with counts.

    ``area_sizes`` maps area label to ``N_d``.  When omitted it is derived
    as sample size plus census count, which makes every area's population
    consistent by construction.
    """

    area: np.ndarray
    X: np.ndarray
    count: np.ndarray
    het_weight: np.ndarray | None = None
    area_sizes: dict | None = None

    def __post_init__(self):
        area = np.asarray(self.area).astype(np.int64).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(area.size, -1)
        count = np.asarray(self.count)
        if count.size and (np.any(count != np.round(count)) or np.any(count < 1)):
            raise ProblemValidationError(
                "shape", "census counts must be positive integers")
        count = count.astype(np.int64).ravel()
        w = (np.ones(area.size) if self.het_weight is None
             else np.asarray(self.het_weight, dtype=float).ravel())
        if not (X.shape[0] == area.size == count.size == w.size):
            raise ProblemValidationError(
                "shape", "census columns have inconsistent lengths")
        object.__setattr__(self, "area", area)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "het_weight", w)
        if self.area_sizes is not None:
            object.__setattr__(self, "area_sizes",
                               {int(k): int(v) for k, v in self.area_sizes.items()})

    @classmethod
    def from_units(cls, area, X, het_weight=None, area_sizes=None) -> "CensusFrame":
        """Aggregate unit-level rows sharing (area, x, w) into counted rows."""
        area = np.asarray(area).astype(np.int64).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        w = (np.ones(area.size) if het_weight is None
             else np.asarray(het_weight, dtype=float).ravel())
        if area.size == 0:
            return cls(area, X.reshape(0, X.shape[1]), np.zeros(0, np.int64),
                       w, area_sizes)
        keys = np.column_stack([area.astype(float), w, X])
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        return cls(uniq[:, 0].astype(np.int64), uniq[:, 2:], counts,
                   uniq[:, 1], area_sizes)


@dataclass(frozen=True)
class TransformSpec:
    """Welfare-to-model-scale transformation: identity or ``log(E + c)``."""

    kind: str = "identity"
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "logshift"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")

    def apply(self, welfare):
        return apply_transform(welfare, self)

    def invert(self, y):
        return invert_transform(y, self)

    def __str__(self):
        return "identity" if self.kind == "identity" else f"logshift:{self.shift:.17g}"


def apply_transform(welfare, transform: TransformSpec):
    """Map welfare to the model scale."""
    e = np.asarray(welfare, dtype=float)
    if transform.kind == "identity":
        return e
    arg = e + transform.shift
    if np.any(arg <= 0):
        raise ProblemValidationError(
            "transform_domain",
            f"welfare + c must be positive for log-shift with c={transform.shift}")
    return np.log(arg)


def invert_transform(y, transform: TransformSpec):
    """Map model-scale values back to welfare."""
    y = np.asarray(y, dtype=float)
    if transform.kind == "identity":
        return y
    return np.exp(y) - transform.shift


# ---------------------------------------------------------------------------
# validated problem
# ---------------------------------------------------------------------------

def area_weighted_means(X_d, y_d, w_d):
    """Weighted means of covariates and responses within one sampled area.

    Returns
    -------
    xbar : ndarray, shape (p,)
    ybar : float
    wdot : float
        Sum of the heteroscedasticity weights.
    """
    X_d = np.atleast_2d(np.asarray(X_d, dtype=float))
    y_d = np.asarray(y_d, dtype=float).ravel()
    w_d = np.asarray(w_d, dtype=float).ravel()
    if y_d.size == 0:
        raise ValueError("area has no sampled units; it belongs to the "
                         "nonsampled set")
    wdot = float(w_d.sum())
    return (w_d @ X_d) / wdot, float(w_d @ y_d) / wdot, wdot


@dataclass(frozen=True, eq=False)
class ValidatedProblem:
    """Sample on the model scale plus census structure, ready for fitting.

    Areas are kept in ascending label order; ``sampled_idx`` lists the
    positions of the ``D_star`` areas with ``n_d > 0``.
    """

    transform: TransformSpec
    areas: np.ndarray            # (D,) labels
    n_d: np.ndarray              # (D,)
    N_d: np.ndarray              # (D,)
    unit_area: np.ndarray        # (n,) area position of each sampled unit
    y: np.ndarray                # (n,) transformed responses
    welfare: np.ndarray          # (n,) original welfare
    X: np.ndarray                # (n, p)
    w: np.ndarray                # (n,)
    survey_weight: np.ndarray    # (n,)
    sampled_idx: np.ndarray      # (D_star,)
    xbar: np.ndarray             # (D_star, p)
    ybar: np.ndarray             # (D_star,)
    wdot: np.ndarray             # (D_star,)
    census_area: np.ndarray      # (rows,) area position
    census_X: np.ndarray
    census_w: np.ndarray
    census_count: np.ndarray
    # within-area centred quantities, reused at every rho
    within_xx: np.ndarray = field(repr=False)
    within_xy: np.ndarray = field(repr=False)
    yc: np.ndarray = field(repr=False)
    Xc: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def D(self) -> int:
        return self.areas.size

    @property
    def D_star(self) -> int:
        return self.sampled_idx.size

    @property
    def sampled(self) -> np.ndarray:
        mask = np.zeros(self.D, dtype=bool)
        mask[self.sampled_idx] = True
        return mask

    def area_position(self, label: int) -> int:
        pos = np.searchsorted(self.areas, label)
        if pos >= self.D or self.areas[pos] != label:
            raise KeyError(label)
        return int(pos)


def validate_problem(sample: SurveySample, census: CensusFrame,
                     transform: TransformSpec | None = None) -> ValidatedProblem:
    """Check the inputs and precompute everything the sampler needs.

    Raises
    ------
    ProblemValidationError
        On non-positive weights, transformation domain violations, unknown
        areas, inconsistent area sizes, too few units, or a design matrix
        without full column rank (the posterior would be improper).
    """
    transform = transform or TransformSpec()
    n, p = sample.n, sample.p
    if n == 0:
        raise ProblemValidationError("too_few_units", "sample is empty")
    if census.X.shape[0] and census.X.shape[1] != p:
        raise ProblemValidationError(
            "shape", f"census has {census.X.shape[1]} covariates, sample has {p}")
    if np.any(sample.het_weight <= 0) or np.any(census.het_weight <= 0):
        raise ProblemValidationError(
            "nonpositive_weight", "heteroscedasticity weights must be positive")
    if np.any(sample.survey_weight <= 0):
        raise ProblemValidationError(
            "nonpositive_weight", "survey weights must be positive")
    if not (np.all(np.isfinite(sample.X)) and np.all(np.isfinite(sample.welfare))):
        raise ProblemValidationError("shape", "sample contains non-finite values")
    if n < p + 1:
        raise ProblemValidationError(
            "too_few_units", f"need at least p + 1 = {p + 1} sampled units, got {n}")
    y = apply_transform(sample.welfare, transform)

    known = set(census.area.tolist())
    if census.area_sizes is not None:
        known |= set(census.area_sizes)
    missing = sorted(set(sample.area.tolist()) - known)
    if missing:
        raise ProblemValidationError(
            "unknown_area",
            f"sample areas absent from census: {', '.join(map(str, missing))}")
    areas = np.array(sorted(known), dtype=np.int64)
    D = areas.size
    unit_area = np.searchsorted(areas, sample.area)
    census_area = np.searchsorted(areas, census.area)
    n_d = np.bincount(unit_area, minlength=D)
    counted = np.bincount(census_area, weights=census.count, minlength=D).astype(np.int64)
    if census.area_sizes is None:
        N_d = n_d + counted
    else:
        N_d = np.array([census.area_sizes.get(int(a), -1) for a in areas])
        bad = np.flatnonzero(N_d != n_d + counted)
        if bad.size:
            a = areas[bad[0]]
            raise ProblemValidationError(
                "area_size_mismatch",
                f"area {a}: census count {counted[bad[0]]} + sample size "
                f"{n_d[bad[0]]} != N_d {N_d[bad[0]]}")

    if np.linalg.matrix_rank(sample.X) < p:
        raise ProblemValidationError(
            "rank_deficient",
            "stacked sample design matrix X does not have full column rank; "
            "the posterior is improper (design rank condition fails)")

    sampled_idx = np.flatnonzero(n_d > 0)
    w = sample.het_weight
    wdot_all = np.bincount(unit_area, weights=w, minlength=D)
    xbar_all = np.zeros((D, p))
    for j in range(p):
        xbar_all[:, j] = np.bincount(unit_area, weights=w * sample.X[:, j],
                                     minlength=D)
    ybar_all = np.bincount(unit_area, weights=w * y, minlength=D)
    wdot = wdot_all[sampled_idx]
    xbar = xbar_all[sampled_idx] / wdot[:, None]
    ybar = ybar_all[sampled_idx] / wdot
    xbar_all[sampled_idx] = xbar
    ybar_all[sampled_idx] = ybar
    Xc = sample.X - xbar_all[unit_area]
    yc = y - ybar_all[unit_area]
    return ValidatedProblem(
        transform=transform, areas=areas, n_d=n_d, N_d=N_d,
        unit_area=unit_area, y=y, welfare=sample.welfare, X=sample.X, w=w,
        survey_weight=sample.survey_weight, sampled_idx=sampled_idx,
        xbar=xbar, ybar=ybar, wdot=wdot,
        census_area=census_area, census_X=census.X.reshape(-1, p),
        census_w=census.het_weight, census_count=census.count,
        within_xx=(Xc * w[:, None]).T @ Xc, within_xy=(Xc * w[:, None]).T @ yc,
        yc=yc, Xc=Xc)


# ---------------------------------------------------------------------------
# per-rho quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    rho: float
    lambda_d: np.ndarray
    Q: np.ndarray
    p_vec: np.ndarray
    beta_hat: np.ndarray
    gamma: float
    log_det_Q: float
    log_kernel: float
    chol: np.ndarray


@dataclass(frozen=True)
class GridBatch:
    """Conditional posterior quantities for a vector of rho values.

    Leading axis indexes rho.  ``chol`` is the lower Cholesky factor of Q.
    """

    rho: np.ndarray
    lambda_d: np.ndarray
    Q: np.ndarray
    p_vec: np.ndarray
    beta_hat: np.ndarray
    gamma: np.ndarray
    log_det_Q: np.ndarray
    log_kernel: np.ndarray
    chol: np.ndarray

    def __len__(self):
        return self.rho.size

    def point(self, k: int) -> GridPoint:
        return GridPoint(float(self.rho[k]), self.lambda_d[k], self.Q[k],
                         self.p_vec[k], self.beta_hat[k], float(self.gamma[k]),
                         float(self.log_det_Q[k]), float(self.log_kernel[k]),
                         self.chol[k])

    def subset(self, keep) -> "GridBatch":
        return GridBatch(*(getattr(self, f)[keep] for f in
                           ("rho", "lambda_d", "Q", "p_vec", "beta_hat", "gamma",
                            "log_det_Q", "log_kernel", "chol")))

    @staticmethod
    def concat(parts: Sequence["GridBatch"]) -> "GridBatch":
        return GridBatch(*(np.concatenate([getattr(b, f) for b in parts])
                           for f in ("rho", "lambda_d", "Q", "p_vec", "beta_hat",
                                     "gamma", "log_det_Q", "log_kernel", "chol")))


def _grid_chunk(problem: ValidatedProblem, rho: np.ndarray) -> GridBatch:
    odds = (1.0 - rho) / rho                                   # (K,)
    wdot = problem.wdot
    lam = wdot / (wdot + odds[:, None])                        # (K, D*)
    log_lam = -np.log1p(odds[:, None] / wdot)
    between = odds[:, None] * lam
    xbar, ybar = problem.xbar, problem.ybar
    Q = problem.within_xx + np.einsum("kd,di,dj->kij", between, xbar, xbar)
    pv = problem.within_xy + np.einsum("kd,di,d->ki", between, xbar, ybar)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    chol = np.linalg.cholesky(Q)
    beta = np.linalg.solve(Q, pv[..., None])[..., 0]
    resid = problem.yc[None, :] - beta @ problem.Xc.T          # (K, n)
    gamma = (resid * resid) @ problem.w
    gap = ybar[None, :] - beta @ xbar.T                        # (K, D*)
    gamma = gamma + odds * np.sum(lam * gap * gap, axis=1)
    log_det = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=1)
    n, p, d_star = problem.n, problem.p, problem.D_star
    log_kernel = (0.5 * d_star * np.log(odds) - 0.5 * log_det
                  - 0.5 * (n - p) * np.log(gamma) + 0.5 * log_lam.sum(axis=1))
    return GridBatch(rho, lam, Q, pv, beta, gamma, log_det, log_kernel, chol)


def grid_batch(problem: ValidatedProblem, rho) -> GridBatch:
    """Evaluate the conditional posterior quantities at each value of ``rho``.

    Points where ``Q`` is numerically not positive definite are dropped with
    a logged diagnostic; under a full-rank design this does not happen.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any((rho <= 0) | (rho >= 1)):
        raise ValueError("rho must lie strictly inside (0, 1)")
    step = max(1, _GRID_CHUNK_ELEMS // max(problem.n, 1))
    parts = []
    for start in range(0, rho.size, step):
        chunk = rho[start:start + step]
        try:
            parts.append(_grid_chunk(problem, chunk))
        except np.linalg.LinAlgError:
            for r in chunk:
                try:
                    parts.append(_grid_chunk(problem, np.array([r])))
                except np.linalg.LinAlgError:
                    logger.warning("Q(rho) not positive definite at rho=%.6g; "
                                   "grid point rejected", r)
    if not parts:
        raise ProblemValidationError("rank_deficient",
                                     "Q(rho) singular at every requested rho")
    return parts[0] if len(parts) == 1 else GridBatch.concat(parts)


def grid_point(problem: ValidatedProblem, rho: float) -> GridPoint:
    batch = grid_batch(problem, [rho])
    if len(batch) == 0:
        raise ProblemValidationError("rank_deficient", f"Q singular at rho={rho}")
    return batch.point(0)


def grid_masses(log_kernel) -> np.ndarray:
    """Normalize log-kernel values into probabilities (max-shifted)."""
    log_kernel = np.asarray(log_kernel, dtype=float)
    top = np.max(log_kernel)
    assert np.isfinite(top), "posterior kernel of rho is not finite anywhere"
    weights = np.exp(log_kernel - top)
    return weights / weights.sum()


@dataclass(frozen=True)
class RhoGrid:
    """Discretized posterior of rho on the midpoints ``(r - 0.5) / R``."""

    R: int
    epsilon: float
    rho: np.ndarray
    log_kernel: np.ndarray
    masses: np.ndarray
    batch: GridBatch | None = None

    @property
    def points(self) -> list[GridPoint]:
        if self.batch is None:
            raise AttributeError("grid was built without per-point quantities")
        return [self.batch.point(k) for k in range(len(self.batch))]

    def mode(self) -> float:
        return float(self.rho[np.argmax(self.masses)])

    def log_normalizer(self) -> float:
        return float(logsumexp(self.log_kernel))


def build_rho_grid(problem: ValidatedProblem, R: int = 1000,
                   epsilon: float = 1e-4) -> RhoGrid:
    """Tabulate the posterior of rho on ``rho_r = (r - 0.5)/R, r = 1..R-1``.

    Grid points falling outside the prior support ``[epsilon, 1 - epsilon]``
    get no mass and are omitted.
    """
    if R < 10:
        raise ValueError("R must be at least 10")
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    rho = (np.arange(1, R) - 0.5) / R
    rho = rho[(rho >= epsilon) & (rho <= 1 - epsilon)]
    if rho.size == 0:
        raise ValueError("no grid point inside [epsilon, 1 - epsilon]")
    batch = grid_batch(problem, rho)
    return RhoGrid(R, epsilon, batch.rho, batch.log_kernel,
                   grid_masses(batch.log_kernel), batch)


# ---------------------------------------------------------------------------
# shift selection for the log transformation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftSelection:
    shift: float
    candidates: np.ndarray
    skewness: np.ndarray
    modal_rho: np.ndarray


def shrunk_residuals(problem: ValidatedProblem, rho: float) -> np.ndarray:
    """Residuals ``Y - x'beta_hat - u_hat_d`` at a plug-in value of rho."""
    gp = grid_point(problem, rho)
    u_hat = np.zeros(problem.D)
    u_hat[problem.sampled_idx] = gp.lambda_d * (
        problem.ybar - problem.xbar @ gp.beta_hat)
    return problem.y - problem.X @ gp.beta_hat - u_hat[problem.unit_area]


def _skewness(r: np.ndarray) -> float:
    c = r - r.mean()
    m2 = np.mean(c * c)
    if m2 == 0:
        return 0.0
    return float(np.mean(c ** 3) / m2 ** 1.5)


def select_shift(sample: SurveySample, census: CensusFrame, candidates,
                 R: int = 1000, epsilon: float = 1e-4) -> ShiftSelection:
    """Choose the log-shift ``c`` whose model residuals are least skewed.

    For each candidate the model is fitted at the posterior mode of rho on
    the grid; residuals subtract the fitted regression and the shrunk area
    effects.  Ties go to the smaller shift.
    """
    cands = np.sort(np.unique(np.asarray(candidates, dtype=float).ravel()))
    if cands.size == 0:
        raise ValueError("candidate grid of shifts is empty")
    if np.any(sample.welfare.min() + cands <= 0):
        raise ProblemValidationError(
            "transform_domain", "every candidate c must keep welfare + c > 0")
    skews, modes = [], []
    for c in cands:
        problem = validate_problem(sample, census, TransformSpec("logshift", c))
        mode = build_rho_grid(problem, R, epsilon).mode()
        modes.append(mode)
        skews.append(_skewness(shrunk_residuals(problem, mode)))
    skews = np.asarray(skews)
    best = int(np.argmin(np.abs(skews)))    # argmin keeps the first (smallest c)
    return ShiftSelection(float(cands[best]), cands, skews, np.asarray(modes))
