"""Transient nonlinear optical Bloch equations for Rydberg EIT probe scans."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, FeatureNotFoundError, IllPosedFeatureError,
                     IllPosedProblemError, IntegrationError, InvalidParameterError,
                     StateValidityError)
from .model import ScanMode, SweepProgram, SystemParams, lab_to_internal, internal_to_lab, \
    probe_rabi_from_power
from .integrator import SolverOptions, Trajectory, evolve, steady_state
from .spectroscopy import (BACKWARD, FORWARD, Spectrum, extract_fwhm, extract_peak_populations,
                           spectrum_from_trajectory, transmission, weak_probe_analytic)
from .fitting import FitProblem, FitResult, FreeParameter, fit, synthesize_data

__all__ = [
    "__version__", "SystemParams", "SweepProgram", "ScanMode", "lab_to_internal",
    "internal_to_lab", "probe_rabi_from_power", "SolverOptions", "Trajectory", "evolve",
    "steady_state", "Spectrum", "FORWARD", "BACKWARD", "transmission", "weak_probe_analytic",
    "spectrum_from_trajectory", "extract_fwhm", "extract_peak_populations", "FitProblem",
    "FitResult", "FreeParameter", "fit", "synthesize_data", "ConvergenceError",
    "FeatureNotFoundError", "IllPosedFeatureError", "IllPosedProblemError", "IntegrationError",
    "InvalidParameterError", "StateValidityError",
]
