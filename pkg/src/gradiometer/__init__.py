"""Simulation and analysis toolkit for a dual-cloud atom-interferometer gravity gradiometer.

The subpackages follow the measurement chain: ``physics`` (phase formulas),
``noise`` (per-shot noise), ``simulator`` (shot sequences and detection
traces), ``peaks`` (fluorescence peak fits), ``ellipse`` (phase extraction),
``pipeline`` (protocol statistics) and ``ledger`` (sensitivity budget).
"""

from .ellipse import EllipseParams, FitReport, estimate_xi, fit_ellipse
from .errors import GradiometerError
from .ledger import SensitivityLedger, noise_budget
from .noise import NoiseConfig
from .peaks import DetectionTrace, PeakModel, fit_peak, normalized_populations
from .physics import PhysicsConfig
from .pipeline import (
    allan_deviation,
    double_difference,
    group_and_fit,
    k_reversal_phase,
    protocol_double_difference,
)
from .simulator import DriftModel, Injected, Schedule, ServoConfig, simulate_run

__version__ = "0.1.0"

__all__ = [
    "DetectionTrace",
    "DriftModel",
    "EllipseParams",
    "FitReport",
    "GradiometerError",
    "Injected",
    "NoiseConfig",
    "PeakModel",
    "PhysicsConfig",
    "Schedule",
    "SensitivityLedger",
    "ServoConfig",
    "allan_deviation",
    "double_difference",
    "estimate_xi",
    "fit_ellipse",
    "fit_peak",
    "group_and_fit",
    "k_reversal_phase",
    "noise_budget",
    "normalized_populations",
    "protocol_double_difference",
    "simulate_run",
]
