"""Manufactured-solution experiments: convergence, efficiency and adaptive runs."""

from .config import ExperimentConfig, build_config, read_config_file
from .diagnostics import EnergyDiagnostics, ErrorAccumulator, ErrorReport, rate, rate_table
from .manufactured import ManufacturedSolution, PerturbationSet, lindberg_time_factor
from .runners import run_adaptive, run_constant, run_convergence, run_efficiency

__all__ = [
    "EnergyDiagnostics", "ErrorAccumulator", "ErrorReport", "ExperimentConfig", "ManufacturedSolution",
    "PerturbationSet", "build_config", "lindberg_time_factor", "rate", "rate_table",
    "read_config_file", "run_adaptive", "run_constant", "run_convergence", "run_efficiency",
]
