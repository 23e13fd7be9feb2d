"""Frequentist Monte Carlo study of the HB estimators.

A fixed population of covariates and a fixed set of sample indices are
generated once; every replicate draws fresh responses from the nested-error
model, computes the true area FGT values, runs the HB pipeline and the
direct (Hajek) estimator, and records errors, interval hits, widths and CVs.
Welfare is ``exp(Y)`` and the HB fit uses ``log(E + 0)``, i.e. it models Y.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import (CensusFrame, SurveySample, TransformSpec, build_rho_grid,
                    validate_problem)
from .predictor import IndicatorSpec, fgt_terms, hb_draws
from .streams import SeededStream
from .summaries import coefficient_of_variation, equal_tail, hpd, mean_variance

__all__ = [
    "SimConfig",
    "Population",
    "StudyMetrics",
    "PRESETS",
    "preset",
    "dummy_probabilities",
    "generate_population",
    "generate_responses",
    "srswor_sample",
    "direct_fgt",
    "run_replicate",
    "run_study",
]

SIGMA_U2 = 0.15 ** 2
SIGMA2 = 0.5 ** 2


@dataclass(frozen=True)
class SimConfig:
    """Design of a simulation study.

    ``N_d`` and ``n_d`` are either one integer for every area or a
    per-area sequence of length ``D``.  The number of dummy covariates is
    ``len(beta) - 1`` (at most two).
    """

    D: int = 80
    N_d: int | tuple = 250
    n_d: int | tuple = 50
    I: int = 200
    H: int = 500
    R: int = 500
    epsilon: float = 1e-4
    seed: int = 20140601
    beta: tuple = (3.0, 0.03, -0.04)
    sigma2: float = SIGMA2
    rho: float = SIGMA_U2 / (SIGMA_U2 + SIGMA2)
    z: float = 12.0
    alphas: tuple = (0.0, 1.0)
    level: float = 0.95
    p1_base: float = 0.3
    p1_slope: float = 0.5
    p2: float = 0.2
    threads: int = 1

    def __post_init__(self):
        for name in ("N_d", "n_d"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)):
                val = tuple(int(v) for v in val)
                if len(val) != self.D:
                    raise ValueError(f"{name} schedule must have D={self.D} entries")
                object.__setattr__(self, name, val)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if len(self.beta) > 3:
            raise ValueError("at most two dummy covariates are supported")
        if np.any(self.sizes()[1] > self.sizes()[0]):
            raise ValueError("n_d must not exceed N_d")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    def sizes(self) -> tuple[np.ndarray, np.ndarray]:
        N = np.broadcast_to(np.asarray(self.N_d, dtype=np.int64), (self.D,))
        n = np.broadcast_to(np.asarray(self.n_d, dtype=np.int64), (self.D,))
        return N.copy(), n.copy()

    @property
    def sigma_u2(self) -> float:
        return self.sigma2 * self.rho / (1 - self.rho)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "paper-s5": SimConfig(I=1000, H=1000, R=1000, epsilon=5e-4),
    "paper-s5-scaled": SimConfig(),
    "paper-s5-cv-curve": SimConfig(
        n_d=(20,) * 20 + (30,) * 20 + (40,) * 20 + (50,) * 20, beta=(3.0,)),
    "smoke": SimConfig(D=10, N_d=60, n_d=10, I=1, H=100, R=100),
}


def preset(name: str, **changes) -> SimConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from "
                       f"{', '.join(sorted(PRESETS))}") from None
    return base.replace(**changes) if changes else base


def dummy_probabilities(config: SimConfig) -> np.ndarray:
    """Success probabilities of the dummies, shape ``(D, len(beta) - 1)``."""
    d = np.arange(1, config.D + 1)
    cols = [config.p1_base + config.p1_slope * d / config.D,
            np.full(config.D, config.p2)]
    return np.column_stack(cols[:len(config.beta) - 1]) if len(config.beta) > 1 \
        else np.empty((config.D, 0))


@dataclass(frozen=True, eq=False)
class Population:
    """Fixed covariates, area membership and sample indices of a study."""

    area: np.ndarray          # (N,) labels 1..D
    X: np.ndarray             # (N, p) with intercept
    sample_index: np.ndarray  # indices into the population, area by area
    census: CensusFrame = field(repr=False)
    N_d: np.ndarray = field(repr=False)
    n_d: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.area.size


def srswor_sample(N_d, n_d, stream: SeededStream) -> list[np.ndarray]:
    """Within-area positions of a stratified SRSWOR sample, one array per area."""
    out = []
    for d, (N, n) in enumerate(zip(N_d, n_d)):
        if n > N:
            raise ValueError(f"area {d + 1}: n_d={n} exceeds N_d={N}")
        gen = stream.child(d).generator()
        out.append(np.sort(gen.choice(int(N), int(n), replace=False)))
    return out


def generate_population(config: SimConfig, stream: SeededStream) -> Population:
    N_d, n_d = config.sizes()
    area = np.repeat(np.arange(1, config.D + 1), N_d)
    probs = dummy_probabilities(config)
    gen = stream.child("covariates").generator()
    dummies = (gen.random((area.size, probs.shape[1])) < probs[area - 1]).astype(float)
    X = np.column_stack([np.ones(area.size), dummies])
    starts = np.concatenate([[0], np.cumsum(N_d)[:-1]])
    picks = srswor_sample(N_d, n_d, stream.child("sample"))
    sample_index = np.concatenate([s + pos for s, pos in zip(starts, picks)])
    mask = np.ones(area.size, dtype=bool)
    mask[sample_index] = False
    census = CensusFrame.from_units(
        area[mask], X[mask],
        area_sizes={d + 1: int(N) for d, N in enumerate(N_d)})
    return Population(area, X, sample_index, census, N_d, n_d)


def generate_responses(population: Population, config: SimConfig,
                       stream: SeededStream) -> np.ndarray:
    """Fresh model-scale responses ``Y = x'beta + u_d + e`` (unit weights)."""
    gen = stream.generator()
    u = gen.standard_normal(config.D) * math.sqrt(config.sigma_u2)
    e = gen.standard_normal(population.N) * math.sqrt(config.sigma2)
    return population.X @ np.asarray(config.beta) + u[population.area - 1] + e


def direct_fgt(welfare, survey_weight, alpha: float, z: float,
               N: float | None = None):
    """Hajek estimate of an area FGT value and its design CV.

    The variance is the linearization ``(1 - n/N) n/(n-1) sum w_i^2
    (g_i - est)^2 / (sum w_i)^2``; with equal weights this is the SRSWOR
    variance of a sample mean.  Without ``N`` no finite population
    correction is applied.  The CV is NaN when the estimate is zero and the
    estimate itself is NaN for an empty sample.
    """
    e = np.asarray(welfare, dtype=float)
    w = np.asarray(survey_weight, dtype=float)
    n = e.size
    if n == 0:
        return math.nan, math.nan
    g = fgt_terms(e, alpha, z)
    tw = w.sum()
    est = float(w @ g / tw)
    if n == 1:
        return est, math.nan
    fpc = 1.0 - n / N if N else 1.0
    var = fpc * n / (n - 1) * float(np.sum(w * w * (g - est) ** 2)) / tw ** 2
    return est, (math.sqrt(var) / est if est > 0 else math.nan)


@dataclass(frozen=True)
class StudyMetrics:
    """Per-area and pooled frequentist performance.

    Per-area arrays have shape ``(K, D)`` for ``K`` indicators; the raw
    replicate records (shape ``(I, K, D)``) are kept in ``records``.
    """

    config: SimConfig
    names: tuple
    areas: np.ndarray
    n_d: np.ndarray
    mc_mean_hb: np.ndarray
    mc_mean_true: np.ndarray
    mse: np.ndarray
    cov_et_pct: np.ndarray
    cov_hpd_pct: np.ndarray
    width_et: np.ndarray
    width_hpd: np.ndarray
    mean_cv_pct: np.ndarray
    mean_cv_direct_pct: np.ndarray
    mse_direct: np.ndarray
    records: dict = field(repr=False)

    def pooled(self) -> dict:
        """Pooled coverage (%), mean widths and mean CVs per indicator."""
        r = self.records
        out = {}
        for k, name in enumerate(self.names):
            sampled = self.n_d > 0
            out[name] = {
                "cov_et_pct": 100 * float(np.mean(r["hit_et"][:, k])),
                "cov_hpd_pct": 100 * float(np.mean(r["hit_hpd"][:, k])),
                "width_et": float(np.mean(r["width_et"][:, k])),
                "width_hpd": float(np.mean(r["width_hpd"][:, k])),
                "mean_cv_pct": float(np.nanmean(self.mean_cv_pct[k])),
                "mean_cv_direct_pct": float(np.nanmean(
                    self.mean_cv_direct_pct[k][sampled])) if sampled.any() else math.nan,
            }
        return out

    def rows(self) -> list[dict]:
        out = []
        for d, area in enumerate(self.areas):
            for k, name in enumerate(self.names):
                out.append({
                    "area": int(area), "indicator": name, "n_d": int(self.n_d[d]),
                    "mc_mean_hb": self.mc_mean_hb[k, d],
                    "mc_mean_true": self.mc_mean_true[k, d],
                    "mse": self.mse[k, d],
                    "cov_et_pct": self.cov_et_pct[k, d],
                    "cov_hpd_pct": self.cov_hpd_pct[k, d],
                    "width_et": self.width_et[k, d],
                    "width_hpd": self.width_hpd[k, d],
                    "mean_cv_pct": self.mean_cv_pct[k, d],
                    "mean_cv_direct_pct": self.mean_cv_direct_pct[k, d],
                })
        return out


def _specs(config: SimConfig) -> list[IndicatorSpec]:
    return [IndicatorSpec.fgt(a, config.z) for a in config.alphas]


_FIELDS = ("est", "truth", "hit_et", "hit_hpd", "width_et", "width_hpd", "cv",
           "direct", "cv_direct")


def run_replicate(config: SimConfig, population: Population, i: int) -> dict:
    """One Monte Carlo replicate; returns arrays of shape ``(K, D)``."""
    root = SeededStream(config.seed).child("rep", i)
    y = generate_responses(population, config, root.child("population"))
    welfare = np.exp(y)
    specs = _specs(config)
    K, D = len(specs), config.D
    truth = np.empty((K, D))
    for k, s in enumerate(specs):
        truth[k] = (np.bincount(population.area - 1,
                                weights=fgt_terms(welfare, s.alpha, s.z),
                                minlength=D) / population.N_d)
    idx = population.sample_index
    area_s = population.area[idx]
    survey_w = (population.N_d / np.maximum(population.n_d, 1))[area_s - 1]
    sample = SurveySample(area_s, welfare[idx], population.X[idx],
                          survey_weight=survey_w)
    problem = validate_problem(sample, population.census,
                               TransformSpec("logshift", 0.0))
    grid = build_rho_grid(problem, config.R, config.epsilon)
    draws = hb_draws(problem, grid, specs, config.H, root.child("hb"))
    mean, var = mean_variance(draws.values)
    et_lo, et_hi = equal_tail(draws.values, config.level)
    hp_lo, hp_hi = hpd(draws.values, config.level)
    direct = np.full((K, D), np.nan)
    cv_direct = np.full((K, D), np.nan)
    for d in range(D):
        sel = area_s == d + 1
        if not sel.any():
            continue
        for k, s in enumerate(specs):
            direct[k, d], cv_direct[k, d] = direct_fgt(
                welfare[idx][sel], survey_w[sel], s.alpha, s.z, population.N_d[d])
    return {
        "est": mean, "truth": truth,
        "hit_et": (et_lo <= truth) & (truth <= et_hi),
        "hit_hpd": (hp_lo <= truth) & (truth <= hp_hi),
        "width_et": et_hi - et_lo, "width_hpd": hp_hi - hp_lo,
        "cv": coefficient_of_variation(mean, var),
        "direct": direct, "cv_direct": cv_direct,
    }


@lru_cache(maxsize=4)
def _population(config: SimConfig) -> Population:
    return generate_population(config, SeededStream(config.seed).child("design"))


def _replicate_job(args):
    config, i = args
    return run_replicate(config, _population(config), i)


def run_study(config: SimConfig, progress=None) -> StudyMetrics:
    """Run all replicates and aggregate; deterministic given ``config.seed``.

    Replicates are distributed over ``config.threads`` worker processes and
    reduced in replicate order.
    """
    population = _population(config)
    jobs = [(config, i) for i in range(config.I)]
    if config.threads > 1 and config.I > 1:
        with ProcessPoolExecutor(config.threads) as pool:
            results = []
            for r in pool.map(_replicate_job, jobs, chunksize=1):
                results.append(r)
                if progress:
                    progress(len(results), config.I)
    else:
        results = []
        for i in range(config.I):
            results.append(run_replicate(config, population, i))
            if progress:
                progress(i + 1, config.I)
    rec = {f: np.stack([r[f] for r in results]) for f in _FIELDS}
    err = rec["est"] - rec["truth"]
    with warnings.catch_warnings():
        # all-NaN slices (undefined CVs) legitimately average to NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_cv = 100 * np.nanmean(rec["cv"], axis=0)
        mean_cv_direct = 100 * np.nanmean(rec["cv_direct"], axis=0)
        mse_direct = np.nanmean((rec["direct"] - rec["truth"]) ** 2, axis=0)
    return StudyMetrics(
        config=config, names=tuple(s.name for s in _specs(config)),
        areas=np.arange(1, config.D + 1), n_d=population.n_d,
        mc_mean_hb=rec["est"].mean(axis=0), mc_mean_true=rec["truth"].mean(axis=0),
        mse=np.mean(err ** 2, axis=0),
        cov_et_pct=100 * rec["hit_et"].mean(axis=0),
        cov_hpd_pct=100 * rec["hit_hpd"].mean(axis=0),
        width_et=rec["width_et"].mean(axis=0),
        width_hpd=rec["width_hpd"].mean(axis=0),
        mean_cv_pct=mean_cv, mean_cv_direct_pct=mean_cv_direct,
        mse_direct=mse_direct,
        records=rec)
