"""Independent reference computations used by the tests.

Everything here works from the dense block covariance of the nested-error
model and never touches the decomposed formulas in ``hbsae.model``.
"""

import numpy as np

from hbsae.model import CensusFrame, SurveySample, TransformSpec, validate_problem


def random_instance(rng, n_areas=3, sizes=None, p=2, hetero=True, census_areas=0):
    """Small random sample plus a census that may add nonsampled areas."""
    sizes = sizes or list(rng.integers(2, 8, size=n_areas))
    area = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    n = area.size
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n) for _ in range(p - 1)])
    u = rng.normal(0, 0.7, size=len(sizes))
    w = rng.uniform(0.5, 3.0, size=n) if hetero else np.ones(n)
    y = X @ rng.normal(size=p) + u[area - 1] + rng.normal(size=n) / np.sqrt(w)
    sample = SurveySample(area, y, X, w)
    labels = np.arange(1, len(sizes) + 1 + census_areas)
    cX = np.column_stack([np.ones(labels.size)] +
                         [rng.normal(size=labels.size) for _ in range(p - 1)])
    census = CensusFrame(labels, cX, np.full(labels.size, 3))
    return sample, census


def problem_of(sample, census=None, transform=None):
    if census is None:
        labels = np.unique(sample.area)
        census = CensusFrame(labels, np.ones((labels.size, sample.X.shape[1])),
                             np.ones(labels.size, dtype=int))
    return validate_problem(sample, census, transform or TransformSpec())


def dense_V(area, w, rho):
    """V(rho) = blockdiag(diag(1/w) + rho/(1-rho) 11')."""
    same = area[:, None] == area[None, :]
    return np.diag(1.0 / w) + rho / (1 - rho) * same


def dense_gls(area, X, y, w, rho):
    """(beta_hat, gamma, log marginal kernel) from the explicit covariance."""
    V = dense_V(area, w, rho)
    Vi = np.linalg.inv(V)
    XtViX = X.T @ Vi @ X
    beta = np.linalg.solve(XtViX, X.T @ Vi @ y)
    r = y - X @ beta
    gamma = float(r @ Vi @ r)
    n, p = X.shape
    kernel = (-0.5 * np.linalg.slogdet(V)[1] - 0.5 * np.linalg.slogdet(XtViX)[1]
              - 0.5 * (n - p) * np.log(gamma))
    return beta, gamma, kernel, XtViX


def grid_rho(R, eps):
    rho = (np.arange(1, R) - 0.5) / R
    return rho[(rho >= eps) & (rho <= 1 - eps)]


def quadrature_means(area, X, y, w, R, eps, sub=16):
    """Posterior means of (u_d, beta, sigma2) for the jittered grid sampler.

    Grid masses come from the dense marginal kernel; each grid cell is
    integrated with ``sub`` midpoints over the jitter interval, clamped.
    """
    rho = grid_rho(R, eps)
    logk = np.array([dense_gls(area, X, y, w, r)[2] for r in rho])
    mass = np.exp(logk - logk.max())
    mass /= mass.sum()
    labels = np.unique(area)
    n, p = X.shape
    Eu = np.zeros(labels.size)
    Eb = np.zeros(p)
    Es = 0.0
    offs = (np.arange(sub) + 0.5) / (sub * R)
    for m, r0 in zip(mass, rho):
        for r in np.clip(r0 + offs, eps, 1 - eps):
            beta, gamma, _, _ = dense_gls(area, X, y, w, r)
            k = (1 - r) / r
            for j, d in enumerate(labels):
                s = area == d
                wd = w[s].sum()
                lam = wd / (wd + k)
                Eu[j] += m / sub * lam * (w[s] @ (y[s] - X[s] @ beta)) / wd
            Eb += m / sub * beta
            Es += m / sub * gamma / (n - p - 2)
    return Eu, Eb, Es


def skewness(r):
    r = np.asarray(r, float)
    c = r - r.mean()
    return float(np.mean(c ** 3) / np.mean(c ** 2) ** 1.5)


def modal_residuals(area, X, y, w, R, eps):
    """Residuals y - x'beta - u_hat at the grid mode, from the dense GLS."""
    rho = grid_rho(R, eps)
    logk = np.array([dense_gls(area, X, y, w, r)[2] for r in rho])
    r = rho[int(np.argmax(logk))]
    beta = dense_gls(area, X, y, w, r)[0]
    res = y - X @ beta
    k = (1 - r) / r
    out = res.copy()
    for d in np.unique(area):
        s = area == d
        wd = w[s].sum()
        out[s] -= wd / (wd + k) * (w[s] @ res[s]) / wd
    return out


def _weighted_moments(v, mu, g2):
    """Self-normalized moments and their delta-method standard errors."""
    m = v @ mu
    e2 = v @ g2
    var = e2 - m * m
    se_m = np.sqrt(np.sum(v * v * (mu - m) ** 2))
    infl = (g2 - e2) - 2 * m * (mu - m)
    se_v = np.sqrt(np.sum(v * v * infl ** 2))
    return m, var, se_m, se_v


def loo_comparison(sample, census, i, H, R, stream):
    """Importance-reweighted deleted moments of unit ``i`` next to the
    moments from a sampler re-run on the data without unit ``i``.

    Returns ``(is_moments, refit_moments, ess)``; moments are
    ``(mean, var, se_mean, se_var)`` and ``ess`` is the effective sample size
    of the importance weights.
    """
    from hbsae.diagnostics import importance_weights
    from hbsae.model import build_rho_grid
    from hbsae.sampler import draw_parameters

    full = validate_problem(sample, census)
    d = int(full.unit_area[i])
    x, w, y = sample.X[i], sample.het_weight[i], sample.welfare[i]
    draws = draw_parameters(full, build_rho_grid(full, R), H, stream.child("full"))
    v = importance_weights(y, x, w, d, draws)
    mu = draws.beta @ x + draws.u[:, d]
    is_mom = _weighted_moments(v, mu, draws.sigma2 / w + mu * mu)

    reduced = validate_problem(sample.drop(i), census)
    rd = int(np.searchsorted(reduced.areas, full.areas[d]))
    rdraws = draw_parameters(reduced, build_rho_grid(reduced, R), H,
                             stream.child("refit", i))
    mu = rdraws.beta @ x + rdraws.u[:, rd]
    ref_mom = _weighted_moments(np.full(H, 1.0 / H), mu, rdraws.sigma2 / w + mu * mu)
    return is_mom, ref_mom, float(1.0 / np.sum(v * v))
