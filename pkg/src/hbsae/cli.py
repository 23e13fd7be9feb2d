"""Command-line entry point: ``hbsae {estimate,simulate,diagnose,select-shift}``.

Exit codes: 0 success, 2 input/schema error, 3 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .diagnostics import unit_diagnostics
from .io import SchemaError, read_census, read_config, read_sample, write_rows
from .model import (ProblemValidationError, TransformSpec, build_rho_grid,
                    select_shift, validate_problem)
from .predictor import IndicatorSpec, fast_hb_draws, hb_draws
from .sampler import draw_parameters
from .streams import SeededStream
from .summaries import InsufficientDrawsError, summarize

log = logging.getLogger("hbsae")

SEED_ENV = "HBSAE_SEED"
DEFAULT_SEED = 20140601
EXIT_SCHEMA = 2
EXIT_VALIDATION = 3

SUMMARY_COLUMNS = ["area", "indicator", "mean", "variance", "sd", "cv_percent",
                   "et_lo", "et_hi", "hpd_lo", "hpd_hi", "n_d", "N_d"]
DRAW_COLUMNS = ["area", "indicator", "h", "value"]
METRIC_COLUMNS = ["area", "indicator", "n_d", "mc_mean_hb", "mc_mean_true", "mse",
                  "cov_et_pct", "cov_hpd_pct", "width_et", "width_hpd",
                  "mean_cv_pct", "mean_cv_direct_pct"]
DIAGNOSTIC_COLUMNS = ["area", "unit", "y", "deleted_mean", "deleted_var", "r_di",
                      "cpo", "survey_weight", "flags"]
SHIFT_COLUMNS = ["shift", "skewness", "abs_skewness", "modal_rho", "chosen"]


class UsageError(Exception):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean: {text!r}")


def _fit_options(p: argparse.ArgumentParser, H=1000, R=1000):
    # not argparse-required so that a config file can supply them
    p.add_argument("--sample", type=Path, help="sample CSV")
    p.add_argument("--census", type=Path, help="census CSV")
    p.add_argument("--H", type=int, default=H, help="posterior draws")
    p.add_argument("--R", type=int, default=R, help="rho grid resolution")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--transform", default="identity",
                   help="identity | logshift:C | logshift:auto")
    p.add_argument("--shift-grid", type=_floats, default=None,
                   help="candidate shifts for logshift:auto")
    p.add_argument("--no-intercept", type=_bool, nargs="?", const=True, default=False)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--figures", type=Path, default=None,
                   help="directory for PNG report figures")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="hbsae", description="Hierarchical Bayes small-area poverty estimation")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("estimate", help="HB estimates of FGT indicators per area")
    _fit_options(p)
    p.add_argument("--z", type=float, required=False, help="poverty line")
    p.add_argument("--alpha", type=_floats, default=[0.0, 1.0])
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--fast-hb", type=float, default=None, metavar="SIZE",
                   help="fast HB: subsample size (>=1) or fraction of N_d (<1)")
    p.add_argument("--out", type=Path, default=Path("summaries.csv"))
    p.add_argument("--draws-out", type=Path, default=None)
    _common(p)
    subs["estimate"] = p

    p = sub.add_parser("simulate", help="frequentist simulation study")
    p.add_argument("--preset", default="paper-s5-scaled")
    for name, typ in (("I", int), ("H", int), ("R", int), ("epsilon", float),
                      ("z", float), ("level", float)):
        p.add_argument(f"--{name}", type=typ, default=None)
    p.add_argument("--out", type=Path, default=Path("metrics.csv"))
    _common(p)
    subs["simulate"] = p

    p = sub.add_parser("diagnose", help="cross-validation residuals and CPOs")
    _fit_options(p)
    p.add_argument("--low-cpo", type=float, default=0.025)
    p.add_argument("--extreme-cpo", type=float, default=0.014)
    p.add_argument("--out", type=Path, default=Path("diagnostics.csv"))
    _common(p)
    subs["diagnose"] = p

    p = sub.add_parser("select-shift", help="choose the log-shift constant")
    _fit_options(p)
    p.add_argument("--candidates", type=_floats, default=None)
    p.add_argument("--out", type=Path, default=Path("shift_curve.csv"))
    _common(p)
    subs["select-shift"] = p
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sp = subs[args.command]
        try:
            cfg = read_config(args.config)
        except FileNotFoundError:
            raise SchemaError(f"{args.config}: config file not found") from None
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise SchemaError(f"{args.config}: unknown key(s) {', '.join(unknown)}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
        # argparse only converts string defaults for options with a type
        for key in ("no_intercept",):
            if hasattr(args, key):
                setattr(args, key, _bool(getattr(args, key)))
    for key in ("sample", "census"):
        if hasattr(args, key) and getattr(args, key) is None:
            raise SchemaError(f"--{key} is required (flag or config key)")
    if args.seed is None:
        env = os.environ.get(SEED_ENV)
        args.seed = int(env) if env else DEFAULT_SEED
    return args


def _candidates(sample, explicit):
    if explicit:
        return np.asarray(explicit, dtype=float)
    e = sample.welfare
    low = max(0.0, -float(e.min()) + 1.0)
    return np.linspace(low, low + float(e.max() - e.min()), 25)


def _load(args):
    intercept = not args.no_intercept
    sample = read_sample(args.sample, intercept)
    census = read_census(args.census, intercept)
    if census.X.shape[0] and census.X.shape[1] != sample.X.shape[1]:
        raise SchemaError("sample and census have different covariate columns")
    return sample, census


def _transform(args, sample, census) -> TransformSpec:
    spec = args.transform.strip().lower()
    if spec == "identity":
        return TransformSpec()
    if spec.startswith("logshift:"):
        value = spec.split(":", 1)[1]
        if value == "auto":
            sel = select_shift(sample, census, _candidates(sample, args.shift_grid),
                               args.R, args.epsilon)
            log.info("selected shift c=%.6g (skewness %.4g)", sel.shift,
                     sel.skewness[list(sel.candidates).index(sel.shift)])
            return TransformSpec("logshift", sel.shift)
        try:
            return TransformSpec("logshift", float(value))
        except ValueError:
            pass
    raise SchemaError(f"bad transform {args.transform!r}")


def cmd_estimate(args) -> int:
    if args.z is None:
        raise SchemaError("--z (poverty line) is required")
    sample, census = _load(args)
    problem = validate_problem(sample, census, _transform(args, sample, census))
    grid = build_rho_grid(problem, args.R, args.epsilon)
    specs = [IndicatorSpec.fgt(a, args.z) for a in args.alpha]
    stream = SeededStream(args.seed)
    if args.fast_hb is not None:
        size = args.fast_hb if args.fast_hb < 1 else int(args.fast_hb)
        draws = fast_hb_draws(problem, grid, specs, args.H, size, stream,
                              threads=args.threads)
    else:
        draws = hb_draws(problem, grid, specs, args.H, stream, threads=args.threads)
    rows = []
    for d, area in enumerate(draws.areas):
        for k, name in enumerate(draws.names):
            s = summarize(draws.values[k, d], args.level)
            rows.append({
                "area": int(area), "indicator": name, "mean": float(s.mean),
                "variance": float(s.variance), "sd": float(s.sd),
                "cv_percent": 100 * float(s.cv),
                "et_lo": float(s.et_interval[0]), "et_hi": float(s.et_interval[1]),
                "hpd_lo": float(s.hpd_interval[0]), "hpd_hi": float(s.hpd_interval[1]),
                "n_d": int(draws.n_d[d]), "N_d": int(draws.N_d[d])})
    write_rows(args.out, rows, SUMMARY_COLUMNS)
    if args.draws_out is not None:
        write_rows(args.draws_out, (
            {"area": int(a), "indicator": name, "h": h + 1,
             "value": float(draws.values[k, d, h])}
            for d, a in enumerate(draws.areas) for k, name in enumerate(draws.names)
            for h in range(draws.values.shape[2])), DRAW_COLUMNS)
    if args.figures is not None:
        from . import plotting
        for name in draws.names:
            plotting.estimates_with_intervals(rows, name, args.figures / f"estimates_{name}.png")
        plotting.rho_posterior(grid, args.figures / "rho_posterior.png")
    print(f"wrote {len(rows)} rows to {args.out} (transform {problem.transform})")
    return 0


def cmd_simulate(args) -> int:
    from .simulation import preset, run_study
    changes = {k: getattr(args, k) for k in ("I", "H", "R", "epsilon", "z", "level")
               if getattr(args, k) is not None}
    try:
        config = preset(args.preset, seed=args.seed, threads=args.threads, **changes)
    except KeyError as exc:
        raise SchemaError(str(exc.args[0])) from None
    except ValueError as exc:
        raise SchemaError(str(exc)) from None

    def progress(done, total):
        log.info("replicate %d/%d", done, total)

    metrics = run_study(config, progress)
    write_rows(args.out, metrics.rows(), METRIC_COLUMNS)
    if args.figures is not None:
        from . import plotting
        plotting.study_figures(metrics, args.figures)
    print(json.dumps({"preset": args.preset, "pooled": metrics.pooled()}, indent=2))
    return 0


def _fit(args):
    sample, census = _load(args)
    problem = validate_problem(sample, census, _transform(args, sample, census))
    grid = build_rho_grid(problem, args.R, args.epsilon)
    return sample, problem, grid


def cmd_diagnose(args) -> int:
    sample, problem, grid = _fit(args)
    draws = draw_parameters(problem, grid, args.H,
                            SeededStream(args.seed).child("theta"), args.threads)
    diag = unit_diagnostics(problem, draws)
    flags = diag.flags(args.low_cpo, args.extreme_cpo)
    rows = [{"area": int(sample.area[i]), "unit": i + 1, "y": float(problem.y[i]),
             "deleted_mean": float(diag.deleted_mean[i]),
             "deleted_var": float(diag.deleted_var[i]),
             "r_di": float(diag.residual[i]), "cpo": float(diag.cpo[i]),
             "survey_weight": float(sample.survey_weight[i]), "flags": flags[i]}
            for i in range(problem.n)]
    write_rows(args.out, rows, DIAGNOSTIC_COLUMNS)
    if args.figures is not None:
        from . import plotting
        plotting.diagnostic_figures(diag, sample.survey_weight, args.figures,
                                    args.low_cpo, args.extreme_cpo)
    n_ext = int(np.sum(diag.cpo < args.extreme_cpo))
    print(f"wrote {len(rows)} rows to {args.out}; "
          f"{100 * np.mean(diag.cpo < args.low_cpo):.2f}% units with CPO < "
          f"{args.low_cpo:g}, {n_ext} extreme")
    return 0


def cmd_select_shift(args) -> int:
    sample, census = _load(args)
    sel = select_shift(sample, census, _candidates(sample, args.candidates),
                       args.R, args.epsilon)
    rows = [{"shift": float(c), "skewness": float(s), "abs_skewness": abs(float(s)),
             "modal_rho": float(m), "chosen": bool(c == sel.shift)}
            for c, s, m in zip(sel.candidates, sel.skewness, sel.modal_rho)]
    write_rows(args.out, rows, SHIFT_COLUMNS)
    if args.figures is not None:
        from . import plotting
        plotting.shift_curve(sel, args.figures / "shift_curve.png")
    print("%.17g" % sel.shift)
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate,
            "diagnose": cmd_diagnose, "select-shift": cmd_select_shift}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ProblemValidationError, InsufficientDrawsError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
