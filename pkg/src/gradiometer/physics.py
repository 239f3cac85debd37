"""Closed-form phase formulas for a dual-cloud Raman gravity gradiometer.

Everything here is SI: metres, seconds, tesla, radians. Helpers in
:mod:`gradiometer.units` convert the lab's customary units at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

from .errors import ConfigError, TiltOutOfRange

HBAR = 1.054571817e-34
RB87_MASS = 1.443160648e-25
RB87_D2_WAVELENGTH = 780.241209686e-9

# two counter-propagating photons at the D2 line
K_EFF_RB87 = 2.0 * 2.0 * math.pi / RB87_D2_WAVELENGTH
RECOIL_VELOCITY_RB87 = HBAR * K_EFF_RB87 / RB87_MASS

MAX_TILT = 0.1


@dataclass(frozen=True, kw_only=True)
class PhysicsConfig:
    """Physical constants and geometry of the gradiometer.

    ``dz`` (vertical separation of the two clouds) has no default: it is a
    property of the apparatus that must be supplied.
    """

    dz: float
    k_e: float = K_EFF_RB87
    T: float = 0.160
    t_a: float = 0.005
    v_u: float = 4.3
    v_l: float = 3.5
    latitude: float = math.radians(43.0)
    omega_earth: float = 7.292e-5
    alpha_zeeman: float = 57.5e9
    v_r: float = RECOIL_VELOCITY_RB87
    g: float = 9.806
    b0_per_amp: float = 1.445e-3
    pulse_tau: float = 0.010
    delta_b: float = 1.0e-5

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"{f.name} must be a finite number, got {value!r}")
            if f.name in ("latitude", "t_a"):
                continue
            if value <= 0:
                raise ConfigError(f"{f.name} must be > 0, got {value}")
        if abs(self.latitude) > math.pi / 2:
            raise ConfigError(f"|latitude| must be <= pi/2, got {self.latitude}")
        if not self.v_u > self.v_l:
            raise ConfigError("upper cloud must be launched faster than the lower one (v_u > v_l)")
        if not (0.0 <= self.t_a < self.T):
            raise ConfigError(f"need 0 <= t_a < T, got t_a={self.t_a}, T={self.T}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PhysicsConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown physics keys: {', '.join(unknown)}")
        if "dz" not in data:
            raise ConfigError("physics.dz (cloud separation, m) is required")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def gravimeter_phase(cfg: PhysicsConfig, g: float) -> float:
    """Single-interferometer phase ``k_e g T^2``."""
    return cfg.k_e * g * cfg.T**2


def coriolis_coefficient(cfg: PhysicsConfig) -> float:
    """d(phi_C)/d(theta) at theta = 0, in rad per rad of East-West tilt."""
    return -2.0 * cfg.omega_earth * cfg.k_e * cfg.T**2 * (cfg.v_u - cfg.v_l) * math.cos(cfg.latitude)


def coriolis_shift(cfg: PhysicsConfig, theta_ew: float) -> float:
    """Differential phase from first-order Coriolis force for an East-West tilt of k_e.

    Raises TiltOutOfRange beyond 0.1 rad, where the small-tilt expression is not
    meant to be used.
    """
    if abs(theta_ew) > MAX_TILT:
        raise TiltOutOfRange(f"|theta| = {abs(theta_ew):.3g} rad exceeds {MAX_TILT} rad")
    return coriolis_coefficient(cfg) * math.sin(theta_ew)


def zeeman_gradient_phase(cfg: PhysicsConfig, gamma: float) -> float:
    """Gradiometer phase from the quadratic Zeeman shift in a linear field gradient ``gamma`` (T/m)."""
    return math.pi * cfg.alpha_zeeman * gamma**2 * (cfg.v_r + 2.0 * cfg.g * cfg.t_a) * cfg.T**2 * cfg.dz


def pulsed_field_phase(cfg: PhysicsConfig, b0: float) -> float:
    """Extra phase from the short-coil pulse raising the field by ``delta_b`` on one cloud."""
    if b0 < 0:
        raise ValueError("b0 must be >= 0")
    return 2.0 * math.pi * cfg.alpha_zeeman * cfg.pulse_tau * ((b0 + cfg.delta_b) ** 2 - b0**2)


def pulsed_field_current_slope(cfg: PhysicsConfig) -> float:
    """d(pulsed_field_phase)/d(i_s) in rad/A for a solenoid producing ``b0_per_amp``."""
    return 4.0 * math.pi * cfg.alpha_zeeman * cfg.pulse_tau * cfg.delta_b * cfg.b0_per_amp


def raman_resonance(f0: float, c_m: float, c_s: float, i_m: float, i_s: float) -> float:
    """Raman resonance frequency to first order in the master/slave intensities."""
    if i_m < 0 or i_s < 0:
        raise ValueError("intensities must be >= 0")
    return f0 + c_m * i_m + c_s * i_s


def light_shift_cancellation_ratio(c_m: float, c_s: float) -> float:
    """Master/slave intensity ratio I_M/I_S at which the first-order light shift vanishes."""
    return -c_s / c_m


def gradient_from_phase(cfg: PhysicsConfig, phi: float, mass_correction: float) -> float:
    """Vertical gravity gradient (1/s^2) from a gradiometer phase.

    ``mass_correction`` is the gravitational contribution of nearby masses; it has
    no default on purpose and must come from an external model.
    """
    return phi / (cfg.k_e * cfg.T**2 * cfg.dz) + mass_correction
