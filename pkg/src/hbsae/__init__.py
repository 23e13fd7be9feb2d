"""Hierarchical Bayes small-area estimation of poverty indicators without MCMC."""

from .diagnostics import UnitDiagnostics, unit_diagnostics
from .model import (CensusFrame, ProblemValidationError, RhoGrid, SurveySample,
                    TransformSpec, ValidatedProblem, build_rho_grid, grid_point,
                    select_shift, validate_problem)
from .predictor import IndicatorDraws, IndicatorSpec, fast_hb_draws, hb_draws
from .sampler import ParameterDraws, draw_parameters
from .streams import SeededStream
from .summaries import PosteriorSummary, summarize

__version__ = "0.1.0"

__all__ = [
    "CensusFrame", "IndicatorDraws", "IndicatorSpec", "ParameterDraws",
    "PosteriorSummary", "ProblemValidationError", "RhoGrid", "SeededStream",
    "SurveySample", "TransformSpec", "UnitDiagnostics", "ValidatedProblem",
    "build_rho_grid", "draw_parameters", "fast_hb_draws", "grid_point",
    "hb_draws", "select_shift", "summarize", "unit_diagnostics",
    "validate_problem",
]
