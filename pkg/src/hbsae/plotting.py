"""Report figures written next to the CSV outputs (PNG, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.0,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def estimates_with_intervals(rows: list[dict], indicator: str, path) -> Path:
    """HB estimates with HPD intervals, areas sorted by sample size."""
    rows = sorted((r for r in rows if r["indicator"] == indicator),
                  key=lambda r: (r["n_d"], r["area"]))
    x = np.arange(len(rows))
    mean = np.array([r["mean"] for r in rows])
    lo = np.array([r["hpd_lo"] for r in rows])
    hi = np.array([r["hpd_hi"] for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.vlines(x, lo, hi, color="0.6")
        ax.plot(x, mean, "o", ms=3, color="k")
        ax.set_xlabel("area (sorted by sample size)")
        ax.set_ylabel(f"{indicator} posterior mean and HPD interval")
        return _save(fig, path)


def rho_posterior(grid, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(grid.rho, grid.masses * grid.R, color="k")
        ax.set_xlabel(r"$\rho$")
        ax.set_ylabel("posterior density")
        keep = grid.masses > 1e-6 * grid.masses.max()
        lo, hi = grid.rho[keep].min(), grid.rho[keep].max()
        pad = 0.1 * (hi - lo) + 1.0 / grid.R
        ax.set_xlim(max(0.0, lo - pad), min(1.0, hi + pad))
        return _save(fig, path)


def study_figures(metrics, outdir) -> list[Path]:
    """Coverage, width and CV panels for every indicator of a study."""
    outdir = Path(outdir)
    paths = []
    areas = metrics.areas
    with plt.rc_context(STYLE):
        for k, name in enumerate(metrics.names):
            fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
            a1.plot(areas, metrics.cov_et_pct[k], "-", color="k", label="equal tails")
            a1.plot(areas, metrics.cov_hpd_pct[k], "--", color="0.5", label="HPD")
            a1.axhline(100 * metrics.config.level, color="0.8", lw=0.8)
            a1.set_xlabel("area")
            a1.set_ylabel("coverage (%)")
            a1.legend()
            a2.plot(areas, metrics.width_et[k], "-", color="k", label="equal tails")
            a2.plot(areas, metrics.width_hpd[k], "--", color="0.5", label="HPD")
            a2.set_xlabel("area")
            a2.set_ylabel("mean width")
            paths.append(_save(fig, outdir / f"coverage_{name}.png"))

            fig, ax = plt.subplots(figsize=(4.2, 4.2))
            hb, di = metrics.mean_cv_pct[k], metrics.mean_cv_direct_pct[k]
            ok = np.isfinite(hb) & np.isfinite(di)
            ax.scatter(hb[ok], di[ok], s=8, c=metrics.n_d[ok], cmap="viridis")
            top = max(np.max(hb[ok], initial=0), np.max(di[ok], initial=0)) * 1.05
            ax.plot([0, top], [0, top], color="0.6", lw=0.8)
            ax.set_xlabel(f"HB CV of {name} (%)")
            ax.set_ylabel(f"direct CV of {name} (%)")
            paths.append(_save(fig, outdir / f"cv_hb_vs_direct_{name}.png"))

        sizes = np.unique(metrics.n_d)
        if sizes.size > 1:
            fig, ax = plt.subplots()
            for k, name in enumerate(metrics.names):
                ax.plot(sizes, [np.nanmean(metrics.mean_cv_pct[k][metrics.n_d == s])
                                for s in sizes], "o-", label=name)
            ax.set_xlabel("area sample size")
            ax.set_ylabel("mean CV (%)")
            ax.legend()
            paths.append(_save(fig, outdir / "cv_by_sample_size.png"))
    return paths


def diagnostic_figures(diag, survey_weight, outdir, low=0.025, extreme=0.014) -> list[Path]:
    outdir = Path(outdir)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(survey_weight, diag.residual, s=4, color="k", alpha=0.5)
        ax.axhline(0, color="0.6", lw=0.8)
        ax.set_xlabel("survey weight")
        ax.set_ylabel("standardized cross-validation residual")
        p1 = _save(fig, outdir / "residuals_vs_weight.png")

        fig, ax = plt.subplots()
        ax.plot(np.arange(diag.cpo.size), diag.cpo, ".", ms=2, color="k")
        ax.axhline(low, color="0.5", lw=0.8, ls="--")
        ax.axhline(extreme, color="0.5", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("unit")
        ax.set_ylabel("CPO")
        p2 = _save(fig, outdir / "cpo.png")
    return [p1, p2]


def shift_curve(selection, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(selection.candidates, selection.skewness, "o-", color="k", ms=3)
        ax.axhline(0, color="0.6", lw=0.8)
        ax.axvline(selection.shift, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("shift c")
        ax.set_ylabel("residual skewness")
        return _save(fig, path)
