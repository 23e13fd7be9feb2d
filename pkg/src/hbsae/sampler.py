"""Exact joint posterior draws without a Markov chain.

Each draw is built by the chain rule: rho from its tabulated marginal, then
``1/sigma2`` from a gamma, ``beta`` from a normal and the area effects from
independent normals, all conditionally closed-form.  Draws are produced in
fixed blocks of ``BLOCK`` indices; block ``b`` reads its variates from the
sub-stream ``(b, purpose)`` so blocks can be generated in any order or in
parallel with bit-identical output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import GridBatch, RhoGrid, ValidatedProblem, grid_batch
from .streams import SeededStream

__all__ = [
    "BLOCK",
    "ParameterDraw",
    "ParameterDraws",
    "draw_rho",
    "draw_sigma2",
    "draw_beta",
    "draw_area_effects",
    "draw_parameters",
]

BLOCK = 1024


def _rng(source) -> np.random.Generator:
    if isinstance(source, SeededStream):
        return source.generator()
    if isinstance(source, np.random.Generator):
        return source
    return np.random.default_rng(source)


@dataclass(frozen=True)
class ParameterDraw:
    rho: float
    sigma2: float
    beta: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class ParameterDraws:
    """``H`` joint draws stored column-wise; index ``h`` gives one draw."""

    rho: np.ndarray      # (H,)
    sigma2: np.ndarray   # (H,)
    beta: np.ndarray     # (H, p)
    u: np.ndarray        # (H, D)

    def __len__(self):
        return self.rho.size

    def __getitem__(self, h) -> ParameterDraw:
        return ParameterDraw(float(self.rho[h]), float(self.sigma2[h]),
                             self.beta[h], self.u[h])

    def slice(self, start: int, stop: int) -> "ParameterDraws":
        return ParameterDraws(self.rho[start:stop], self.sigma2[start:stop],
                              self.beta[start:stop], self.u[start:stop])


def draw_rho(grid: RhoGrid, rng, size: int | None = None):
    """Draw rho from the grid masses, then jitter by ``U(0, 1/R)``.

    The jittered value is clamped to the prior support
    ``[epsilon, 1 - epsilon]``.
    """
    gen = _rng(rng)
    n = 1 if size is None else size
    cdf = np.cumsum(grid.masses)
    idx = np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right")
    idx = np.minimum(idx, cdf.size - 1)
    rho = grid.rho[idx] + gen.random(n) / grid.R
    rho = np.clip(rho, grid.epsilon, 1.0 - grid.epsilon)
    return float(rho[0]) if size is None else rho


def draw_sigma2(point, n: int, p: int, rng, size: int | None = None):
    """Draw ``sigma2 = 1/tau`` with ``tau ~ Gamma(shape=(n-p)/2, rate=gamma/2)``.

    ``point`` is anything with a ``gamma`` attribute (scalar or one value
    per draw).
    """
    if n <= p:
        raise ValueError("need n > p for a proper error-variance posterior")
    gen = _rng(rng)
    gamma = np.asarray(point.gamma, dtype=float)
    if size is None:
        size = gamma.shape or None
    tau = gen.standard_gamma(0.5 * (n - p), size=size) / (0.5 * gamma)
    return 1.0 / tau


def draw_beta(point, sigma2, rng):
    """Draw ``beta ~ N(beta_hat, sigma2 Q^{-1})`` through the Cholesky factor.

    With ``Q = L L'`` the draw is ``beta_hat + sqrt(sigma2) L'^{-1} z``.
    ``point`` may carry a single rho (1-d ``beta_hat``) or a batch.
    """
    gen = _rng(rng)
    beta_hat = np.asarray(point.beta_hat, dtype=float)
    chol = np.asarray(point.chol, dtype=float)
    single = beta_hat.ndim == 1
    beta_hat = np.atleast_2d(beta_hat)
    chol = chol.reshape((-1,) + chol.shape[-2:])
    z = gen.standard_normal(beta_hat.shape)
    step = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
    beta = beta_hat + np.sqrt(np.asarray(sigma2, dtype=float)).reshape(-1, 1) * step
    return beta[0] if single else beta


def draw_area_effects(problem: ValidatedProblem, rho, sigma2, beta, rng,
                      lambda_d=None):
    """Draw the area effects for all ``D`` areas given (rho, sigma2, beta).

    Sampled areas use the shrinkage posterior; nonsampled areas fall back to
    the prior ``N(0, sigma2 rho/(1-rho))``.
    """
    gen = _rng(rng)
    single = np.ndim(rho) == 0 and np.ndim(beta) == 1
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    K = max(rho.size, beta.shape[0])
    ratio = rho / (1.0 - rho)                                # (K,)
    if lambda_d is None:
        odds = 1.0 / ratio
        lambda_d = problem.wdot / (problem.wdot + odds[:, None])
    lambda_d = np.atleast_2d(lambda_d)
    prior_var = (sigma2 * ratio)[:, None]                    # (K, 1)
    z = gen.standard_normal((K, problem.D))
    u = np.sqrt(prior_var) * z
    s = problem.sampled_idx
    mean = lambda_d * (problem.ybar[None, :] - beta @ problem.xbar.T)
    u[:, s] = mean + np.sqrt((1.0 - lambda_d) * prior_var) * z[:, s]
    return u[0] if single else u


def _draw_block(problem: ValidatedProblem, grid: RhoGrid, size: int,
                stream: SeededStream) -> ParameterDraws:
    rho = draw_rho(grid, stream.child("rho"), size)
    batch: GridBatch = grid_batch(problem, rho)
    if len(batch) != size:
        raise np.linalg.LinAlgError("Q(rho) not positive definite at a drawn rho")
    sigma2 = draw_sigma2(batch, problem.n, problem.p, stream.child("sigma2"))
    beta = draw_beta(batch, sigma2, stream.child("beta"))
    u = draw_area_effects(problem, rho, sigma2, beta, stream.child("u"),
                          lambda_d=batch.lambda_d)
    return ParameterDraws(rho, sigma2, beta, u)


def draw_parameters(problem: ValidatedProblem, grid: RhoGrid, H: int,
                    stream: SeededStream, threads: int = 1) -> ParameterDraws:
    """``H`` independent joint posterior draws, ordered by draw index.

    Output depends only on ``(problem, grid, H, stream)``; ``threads`` only
    changes how blocks are scheduled.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    sizes = [min(BLOCK, H - start) for start in range(0, H, BLOCK)]
    jobs = [(size, stream.child(b)) for b, size in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(lambda j: _draw_block(problem, grid, *j), jobs))
    else:
        blocks = [_draw_block(problem, grid, *j) for j in jobs]
    return ParameterDraws(
        np.concatenate([b.rho for b in blocks]),
        np.concatenate([b.sigma2 for b in blocks]),
        np.concatenate([b.beta for b in blocks]),
        np.concatenate([b.u for b in blocks]))
