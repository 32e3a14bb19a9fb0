"""Quadratic (risk-minimizing) hedging for regime-switching jump-diffusion markets."""
from ._kernels import BACKEND
from .config import ScenarioConfig, load_config, parse_config
from .errors import (ConfigError, DomainEscape, NumericalDomain, PathBlowup, PresetError, RMHedgeError,
                     SolverDiverged, StabilityWarning, StepTooCoarse)
from .fkmc import MCEstimate, mc_confidence_report, mc_discounted_dividends, mc_value
from .hedge import (GramMatrix, HedgeField, PointwiseHedge, RepresentationTriple, attainability_check,
                    cross_vector, gram_matrix, hedge_field, min_norm_solve, representation_triple,
                    semimartingale_adjust)
from .levy import FiniteAtoms, QuadratureDensity, gaussian_density, integrate_levy
from .model import (DividendSpec, MarketModelSpec, RegimeSet, SamplePlan, SemimartingaleDividendSpec,
                    validate_dividend, validate_model)
from .pide import (AnalyticValue, Axis, SpatialGrid, ValueField, apply_generator, field_interpolate,
                   read_value_csv, solve_pide, write_value_csv)
from .presets import preset_model
from .risk import Perturbation, RiskReport, cost_process, residual_risk, stream_residual_risk
from .scenario import emit_report, run_scenario
from .sim import (PathEnsemble, TimeGrid, bank_account, martingale_diagnostic, simulate_paths,
                  transition_processes)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ScenarioConfig", "load_config", "parse_config",
    "ConfigError", "DomainEscape", "NumericalDomain", "PathBlowup", "PresetError", "RMHedgeError",
    "SolverDiverged", "StabilityWarning", "StepTooCoarse",
    "MCEstimate", "mc_confidence_report", "mc_discounted_dividends", "mc_value",
    "GramMatrix", "HedgeField", "PointwiseHedge", "RepresentationTriple", "attainability_check",
    "cross_vector", "gram_matrix", "hedge_field", "min_norm_solve", "representation_triple",
    "semimartingale_adjust",
    "FiniteAtoms", "QuadratureDensity", "gaussian_density", "integrate_levy",
    "DividendSpec", "MarketModelSpec", "RegimeSet", "SamplePlan", "SemimartingaleDividendSpec",
    "validate_dividend", "validate_model",
    "AnalyticValue", "Axis", "SpatialGrid", "ValueField", "apply_generator", "field_interpolate",
    "read_value_csv", "solve_pide", "write_value_csv",
    "preset_model",
    "Perturbation", "RiskReport", "cost_process", "residual_risk", "stream_residual_risk",
    "emit_report", "run_scenario",
    "PathEnsemble", "TimeGrid", "bank_account", "martingale_diagnostic", "simulate_paths",
    "transition_processes",
]
