"""Momentum-resolved Lindblad steady states and open-system Hall conductivity."""
from .errors import (ConfigError, ConvergenceError, DegeneratePoint, NonUniqueResponse,
                     OpenHallError, ResolutionError, SolverError, ValidationError)
from .lindblad import SingleSteadyBand, SpinLowering, TwoSteadyBands
from .model import (bi2se3_valley, custom_two_band, magnetic_lattice, parse_model_config, qwz,
                    rashba_dresselhaus, spin1_qwz)
from .response import (ConductivityBreakdown, bi2se3_analytic, chern_number_fhs, chern_rate,
                       chern_value, hall_conductivity_general, hall_two_band_spin, lattice_hall)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "DegeneratePoint", "NonUniqueResponse", "OpenHallError",
    "ResolutionError", "SolverError", "ValidationError",
    "SingleSteadyBand", "SpinLowering", "TwoSteadyBands",
    "bi2se3_valley", "custom_two_band", "magnetic_lattice", "parse_model_config", "qwz",
    "rashba_dresselhaus", "spin1_qwz",
    "ConductivityBreakdown", "bi2se3_analytic", "chern_number_fhs", "chern_rate", "chern_value",
    "hall_conductivity_general", "hall_two_band_spin", "lattice_hall",
]
