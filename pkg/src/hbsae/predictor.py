"""Census completion and per-draw indicator evaluation.

For every parameter draw the out-of-sample units of each area are generated
from the predictive normal law, mapped back to welfare and combined with the
observed sample to give one posterior draw of the area indicator.  FGT
indicators are accumulated row-chunk by row-chunk so a census never has to
be held in memory at unit level.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import RhoGrid, ValidatedProblem
from .sampler import BLOCK, ParameterDraws, draw_parameters
from .streams import SeededStream

__all__ = [
    "IndicatorSpec",
    "IndicatorDraws",
    "fgt_terms",
    "fgt_for_draw",
    "complete_area",
    "hb_draws",
    "fast_hb_draws",
]

# max number of generated units held at once per area
_CHUNK_ELEMS = 1 << 20


@dataclass(frozen=True)
class IndicatorSpec:
    """An area parameter: an FGT measure or a custom function of welfare.

    A custom ``func`` receives the complete welfare vector of one area
    (sample units first) and returns a float.
    """

    name: str
    alpha: float | None = None
    z: float | None = None
    func: Callable[[np.ndarray], float] | None = None

    def __post_init__(self):
        if self.func is None:
            if self.alpha is None or self.z is None:
                raise ValueError("FGT indicator needs alpha and z")
            if self.alpha < 0:
                raise ValueError("alpha must be non-negative")
            if self.z <= 0:
                raise ValueError("poverty line z must be positive")

    @classmethod
    def fgt(cls, alpha: float, z: float, name: str | None = None) -> "IndicatorSpec":
        return cls(name or f"F{alpha:g}", float(alpha), float(z))

    @classmethod
    def custom(cls, func, name: str) -> "IndicatorSpec":
        return cls(name, func=func)

    @property
    def kind(self) -> str:
        return "custom" if self.func is not None else "fgt"


@dataclass(frozen=True)
class IndicatorDraws:
    """Posterior draws of each indicator: ``values[k, d, h]``."""

    names: tuple
    areas: np.ndarray
    n_d: np.ndarray
    N_d: np.ndarray
    values: np.ndarray

    def get(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]


def fgt_terms(welfare, alpha: float, z: float) -> np.ndarray:
    """Unit contributions ``((z - e)/z)^alpha * 1{e < z}``; 0**0 counts as 1."""
    e = np.asarray(welfare, dtype=float)
    poor = e < z
    if alpha == 0:
        return poor.astype(float)
    gap = np.where(poor, (z - e) / z, 0.0)
    return gap ** alpha


def fgt_for_draw(sample_welfare, generated_welfare, alpha: float, z: float) -> float:
    """FGT value of one area from its sample and one set of generated units."""
    s = np.asarray(sample_welfare, dtype=float).ravel()
    g = np.asarray(generated_welfare, dtype=float).ravel()
    N = s.size + g.size
    return float((fgt_terms(s, alpha, z).sum() + fgt_terms(g, alpha, z).sum()) / N)


def _area_rows(problem: ValidatedProblem) -> list[np.ndarray]:
    order = np.argsort(problem.census_area, kind="stable")
    bounds = np.searchsorted(problem.census_area[order], np.arange(problem.D + 1))
    return [order[bounds[d]:bounds[d + 1]] for d in range(problem.D)]


def _generated_chunks(problem: ValidatedProblem, draws: ParameterDraws, d: int,
                      rows: np.ndarray, stream: SeededStream):
    """Yield ``(h0, Y)`` with ``Y`` the model-scale out-of-sample units of
    area ``d`` for draws ``h0 .. h0 + len(Y) - 1``."""
    counts = problem.census_count[rows]
    M = int(counts.sum())
    if M == 0:
        return
    Xr = problem.census_X[rows]
    inv_w = 1.0 / problem.census_w[rows]
    label = int(problem.areas[d])
    step = max(1, _CHUNK_ELEMS // M)
    H = len(draws)
    for b, start in enumerate(range(0, H, BLOCK)):
        stop = min(start + BLOCK, H)
        gen = stream.child("complete", label, b).generator()
        for h0 in range(start, stop, step):
            h1 = min(h0 + step, stop)
            mu = draws.beta[h0:h1] @ Xr.T + draws.u[h0:h1, d:d + 1]
            sd = np.sqrt(draws.sigma2[h0:h1, None] * inv_w[None, :])
            z = gen.standard_normal((h1 - h0, M))
            if counts.size != M:
                mu = np.repeat(mu, counts, axis=1)
                sd = np.repeat(sd, counts, axis=1)
            yield h0, mu + sd * z


def complete_area(problem: ValidatedProblem, draws: ParameterDraws, area: int,
                  stream: SeededStream) -> np.ndarray:
    """Generated out-of-sample welfare of one area, shape ``(H, N_d - n_d)``.

    ``area`` is the position of the area (0-based, ascending label order).
    Materializes everything; :func:`hb_draws` streams the same variates.
    """
    rows = _area_rows(problem)[area]
    M = int(problem.census_count[rows].sum())
    out = np.empty((len(draws), M))
    for h0, y in _generated_chunks(problem, draws, area, rows, stream):
        out[h0:h0 + y.shape[0]] = problem.transform.invert(y)
    return out


def _area_sample(problem: ValidatedProblem, d: int) -> np.ndarray:
    return problem.welfare[problem.unit_area == d]


def _area_hb(problem, draws, specs, d, rows, stream) -> np.ndarray:
    H = len(draws)
    sample = _area_sample(problem, d)
    N = int(problem.N_d[d])
    out = np.empty((len(specs), H))
    base = np.array([fgt_terms(sample, s.alpha, s.z).sum() if s.kind == "fgt"
                     else 0.0 for s in specs])
    if N == sample.size:
        for k, s in enumerate(specs):
            out[k] = base[k] / N if s.kind == "fgt" else s.func(sample)
        return out
    for h0, y in _generated_chunks(problem, draws, d, rows, stream):
        e = problem.transform.invert(y)
        h1 = h0 + e.shape[0]
        for k, s in enumerate(specs):
            if s.kind == "fgt":
                out[k, h0:h1] = (base[k] + fgt_terms(e, s.alpha, s.z).sum(axis=1)) / N
            else:
                out[k, h0:h1] = [s.func(np.concatenate([sample, row])) for row in e]
    return out


def _map_areas(fn, D: int, threads: int):
    if threads > 1 and D > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, range(D)))
    return [fn(d) for d in range(D)]


def hb_draws(problem: ValidatedProblem, grid: RhoGrid, specs: Sequence[IndicatorSpec],
             H: int, stream: SeededStream, draws: ParameterDraws | None = None,
             threads: int = 1) -> IndicatorDraws:
    """Posterior draws of every indicator in every area.

    Parameter draws come from ``stream.child("theta")`` unless supplied;
    area ``d`` completes its census from ``stream.child("complete", label, b)``
    for draw block ``b``, so areas are mutually independent streams.
    """
    specs = list(specs)
    if draws is None:
        draws = draw_parameters(problem, grid, H, stream.child("theta"), threads)
    rows = _area_rows(problem)
    per_area = _map_areas(
        lambda d: _area_hb(problem, draws, specs, d, rows[d], stream),
        problem.D, threads)
    values = np.stack(per_area, axis=1)
    return IndicatorDraws(tuple(s.name for s in specs), problem.areas,
                          problem.n_d, problem.N_d, values)


def _subsample_size(subsample, label: int, N: int) -> int:
    if isinstance(subsample, dict):
        size = subsample[label]
    elif isinstance(subsample, float) and 0 < subsample <= 1:
        size = max(1, int(round(subsample * N)))
    else:
        size = int(subsample)
    if size < 1:
        raise ValueError("subsample size must be at least 1")
    if size > N:
        raise ValueError(f"subsample size {size} exceeds N_d={N} in area {label}")
    return size


def _area_fast(problem, draws, specs, d, rows, stream, subsample) -> np.ndarray:
    H = len(draws)
    sample = _area_sample(problem, d)
    N = int(problem.N_d[d])
    label = int(problem.areas[d])
    m = _subsample_size(subsample, label, N)
    out = np.empty((len(specs), H))
    chunks = list(_generated_chunks(problem, draws, d, rows, stream))
    if not chunks:
        chunks = [(0, np.empty((H, 0)))]
    for h0, y in chunks:
        e = problem.transform.invert(y)
        k = e.shape[0]
        full = np.concatenate([np.broadcast_to(sample, (k, sample.size)), e], axis=1)
        if m == N:
            # census design: same arithmetic as full HB
            for j, s in enumerate(specs):
                out[j, h0:h0 + k] = (
                    (fgt_terms(sample, s.alpha, s.z).sum()
                     + fgt_terms(e, s.alpha, s.z).sum(axis=1)) / N
                    if s.kind == "fgt" else [s.func(row) for row in full])
            continue
        b = h0 // BLOCK
        gen = stream.child("subsample", label, b, h0 - b * BLOCK).generator()
        keys = gen.random((k, N))
        idx = np.argpartition(keys, m - 1, axis=1)[:, :m]
        pick = np.take_along_axis(full, idx, axis=1)
        for j, s in enumerate(specs):
            if s.kind == "fgt":
                # Hajek estimator; SRSWOR weights are all N/m so it is the mean
                out[j, h0:h0 + k] = fgt_terms(pick, s.alpha, s.z).mean(axis=1)
            else:
                out[j, h0:h0 + k] = [s.func(row) for row in pick]
    return out


def fast_hb_draws(problem: ValidatedProblem, grid: RhoGrid,
                  specs: Sequence[IndicatorSpec], H: int, subsample,
                  stream: SeededStream, draws: ParameterDraws | None = None,
                  threads: int = 1) -> IndicatorDraws:
    """Fast HB: replace each completed census by a design-based estimate.

    Every completed area population is subsampled by simple random sampling
    without replacement (``subsample``: a size, a per-label dict of sizes,
    or a float fraction of ``N_d``) and the indicator is estimated from the
    subsample.  Census completion uses the same streams as :func:`hb_draws`.
    """
    specs = list(specs)
    if draws is None:
        draws = draw_parameters(problem, grid, H, stream.child("theta"), threads)
    rows = _area_rows(problem)
    per_area = _map_areas(
        lambda d: _area_fast(problem, draws, specs, d, rows[d], stream, subsample),
        problem.D, threads)
    return IndicatorDraws(tuple(s.name for s in specs), problem.areas,
                          problem.n_d, problem.N_d, np.stack(per_area, axis=1))
