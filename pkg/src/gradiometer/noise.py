"""Per-shot noise on the two normalized populations.

The fluctuation budget per shot is split into ellipse-parameter jitter
(contrast dA, dC; bias dB, dD; differential phase dPhi) and additive detection
noise (dx_d, dy_d). Detection noise is quantum projection noise (QPN),
a flat technical floor, or both added in quadrature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DomainError

DETECTION_MODES = ("qpn", "technical", "combined")


@dataclass(frozen=True, kw_only=True)
class NoiseConfig:
    """Atom numbers and noise levels.

    Counts are detected atoms per shot and cloud; RMS values are in units of
    normalized population except ``dphi_jitter`` (rad). The default technical
    floor is half the QPN of 2e5 atoms at typical contrast.
    """

    n_upper: float = 2.0e5
    n_lower: float = 2.0e5
    tech_detection_rms: float = 0.00055
    contrast_jitter: float = 0.0
    bias_jitter: float = 0.0
    dphi_jitter: float = 0.0
    seed: int = 0
    detection_mode: str = "combined"
    binomial: bool = False

    def __post_init__(self) -> None:
        if self.n_upper < 1 or self.n_lower < 1:
            raise ConfigError("atom numbers must be >= 1")
        for name in ("tech_detection_rms", "contrast_jitter", "bias_jitter", "dphi_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.detection_mode not in DETECTION_MODES:
            raise ConfigError(f"detection_mode must be one of {DETECTION_MODES}")
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "NoiseConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown noise keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def rng(self, worker: int = 0) -> np.random.Generator:
        """Generator for one simulation worker; worker ``i`` is seeded with ``seed + i``."""
        return np.random.default_rng(self.seed + worker)


def detection_noise_at(x, n_total, dn1_sq, dn2_sq):
    """Variance of a normalized population x = n1 / (n1 + n2).

    ``dn1_sq`` and ``dn2_sq`` are the count variances of the F=1 and F=2
    signals. The weight on the F=1 variance is (1 - x)^2; with Poisson
    variances this reduces to x (1 - x) / n.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("normalized population must lie in [0, 1]")
    if np.any(np.asarray(n_total) < 1):
        raise DomainError("n_total must be >= 1")
    var = (x**2 * dn2_sq + (1.0 - x) ** 2 * dn1_sq) / np.asarray(n_total, dtype=float) ** 2
    return var if var.ndim else float(var)


def qpn_rms(A: float, B: float, n: float) -> float:
    """Fringe-averaged QPN on x = A sin t + B for n detected atoms."""
    if n < 1:
        raise DomainError("n must be >= 1")
    arg = 2.0 * B * (1.0 - B) - A**2
    if arg <= 0:
        raise DomainError(f"2B(1-B) - A^2 = {arg:.3g} <= 0: fringe leaves [0, 1]")
    return math.sqrt(arg / (2.0 * n))


def qpn_variance(x, n):
    """Projection-noise variance x (1 - x) / n at population x."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return detection_noise_at(x, n, x * n, (1.0 - x) * n)


def detection_variance(cfg: NoiseConfig, x, n):
    x = np.asarray(x, dtype=float)
    tech = np.full(x.shape, cfg.tech_detection_rms**2)
    if cfg.detection_mode == "technical":
        return tech
    qpn = qpn_variance(x, n)
    if cfg.detection_mode == "qpn":
        return qpn
    return qpn + tech


@dataclass(frozen=True)
class ShotNoise:
    dA: np.ndarray
    dB: np.ndarray
    dC: np.ndarray
    dD: np.ndarray
    dphi: np.ndarray
    dx_d: np.ndarray
    dy_d: np.ndarray


def sample_shot_noise(cfg: NoiseConfig, rng: np.random.Generator, x=None, y=None, size=None) -> ShotNoise:
    """Draw zero-mean Gaussian noise for ``size`` shots.

    ``x`` and ``y`` are the ideal ellipse points; they are needed when the
    detection noise depends on the population (QPN). Seven standard normals are
    drawn per shot in a fixed order whatever the RMS values are, so two configs
    that differ only in noise levels share the same underlying stream.
    """
    if x is not None:
        shape = np.shape(x)
    elif size is None:
        shape = ()
    else:
        shape = tuple(np.atleast_1d(size))
    z = rng.standard_normal((7, *shape))
    x = np.full(shape, 0.5) if x is None else x
    y = np.full(shape, 0.5) if y is None else y
    sx = np.sqrt(detection_variance(cfg, x, cfg.n_lower))
    sy = np.sqrt(detection_variance(cfg, y, cfg.n_upper))
    return ShotNoise(
        dA=cfg.contrast_jitter * z[0],
        dB=cfg.bias_jitter * z[1],
        dC=cfg.contrast_jitter * z[2],
        dD=cfg.bias_jitter * z[3],
        dphi=cfg.dphi_jitter * z[4],
        dx_d=sx * z[5],
        dy_d=sy * z[6],
    )
