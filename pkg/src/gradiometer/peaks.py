"""Fluorescence peak fitting, crosstalk removal and normalized populations.

A detection peak is modelled as a Gaussian times a quartic in (t - x0)::

    f(t) = h (1 + a1 u + a2 u^2 + a3 u^3 + a4 u^4) exp(-u^2 / 2 sigma^2) + baseline,   u = t - x0

Centering the polynomial on the peak makes the odd coefficients drop out of
the area, which is then available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateWindow, DomainError, MisalignedTraces, NoConvergence, ZeroSignal

CHANNELS = ("F1", "F2")
SQRT_2PI = math.sqrt(2.0 * math.pi)
RUNS_Z_THRESHOLD = -3.0
MIN_SNR = 3.0


@dataclass(frozen=True)
class PeakModel:
    h: float
    x0: float
    sigma: float
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0
    baseline: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if not self.h > 0:
            raise DomainError(f"h must be > 0, got {self.h}")

    def polynomial(self, t):
        u = np.asarray(t, dtype=float) - self.x0
        return 1.0 + u * (self.a1 + u * (self.a2 + u * (self.a3 + u * self.a4)))

    def evaluate(self, t):
        u = np.asarray(t, dtype=float) - self.x0
        return self.h * self.polynomial(t) * np.exp(-0.5 * (u / self.sigma) ** 2) + self.baseline

    def polynomial_positive(self, n_sigma: float = 4.0) -> bool:
        """True when the polynomial factor stays positive over x0 +/- n_sigma sigma."""
        t = self.x0 + self.sigma * np.linspace(-n_sigma, n_sigma, 801)
        return bool(np.all(self.polynomial(t) > 0))

    def area(self) -> float:
        return peak_area(self)

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.x0, self.sigma, self.a1, self.a2, self.a3, self.a4, self.baseline])


PARAM_NAMES = ("h", "x0", "sigma", "a1", "a2", "a3", "a4", "baseline")


def peak_area(m: PeakModel) -> float:
    """Integral of the peak above its baseline."""
    s2 = m.sigma**2
    return m.h * m.sigma * SQRT_2PI * (1.0 + m.a2 * s2 + 3.0 * m.a4 * s2 * s2)


def _area_gradient(m: PeakModel) -> np.ndarray:
    s2 = m.sigma**2
    poly = 1.0 + m.a2 * s2 + 3.0 * m.a4 * s2 * s2
    k = SQRT_2PI
    return np.array([
        m.sigma * k * poly,
        0.0,
        m.h * k * (poly + 2.0 * m.a2 * s2 + 12.0 * m.a4 * s2 * s2),
        0.0,
        m.h * m.sigma * k * s2,
        0.0,
        m.h * m.sigma * k * 3.0 * s2 * s2,
        0.0,
    ])


@dataclass(frozen=True)
class DetectionTrace:
    channel: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if t.size < 3:
            raise ValueError("a trace needs at least 3 samples")
        steps = np.diff(t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
            raise ValueError("trace samples must be uniformly spaced in increasing time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def window(self, start: float, stop: float) -> "DetectionTrace":
        sel = (self.times >= start) & (self.times <= stop)
        return DetectionTrace(self.channel, self.times[sel], self.values[sel])


@dataclass(frozen=True)
class PeakFit:
    model: PeakModel
    covariance: np.ndarray
    residual_rms: float
    runs_z: float
    iterations: int
    snr: float
    structured_residuals: bool = field(init=False)

    def __post_init__(self) -> None:
        # residuals at rounding level carry no information about model error
        resolved = self.residual_rms > 1e-9 * self.model.h
        object.__setattr__(self, "structured_residuals", bool(resolved and self.runs_z < RUNS_Z_THRESHOLD))

    @property
    def area(self) -> float:
        return peak_area(self.model)

    @property
    def area_error(self) -> float:
        g = _area_gradient(self.model)
        return float(np.sqrt(max(g @ self.covariance @ g, 0.0)))

    def to_dict(self) -> dict:
        return {
            "params": dict(zip(PARAM_NAMES, map(float, self.model.as_array()))),
            "covariance": self.covariance.tolist(),
            "residual_rms": self.residual_rms,
            "runs_test_flag": self.structured_residuals,
            "runs_z": self.runs_z,
            "area": self.area,
            "area_error": self.area_error,
        }


def noise_level(values) -> float:
    """White-noise RMS from the MAD of second differences (insensitive to smooth signal)."""
    d2 = np.diff(np.asarray(values, dtype=float), 2)
    mad = np.median(np.abs(d2 - np.median(d2)))
    return float(1.4826 * mad / math.sqrt(6.0))


def runs_z(residuals) -> float:
    """Wald-Wolfowitz runs statistic of residual signs; strongly negative means structure."""
    s = np.sign(np.asarray(residuals, dtype=float))
    s = s[s != 0]
    n1, n2 = int(np.sum(s > 0)), int(np.sum(s < 0))
    if n1 == 0 or n2 == 0:
        return -math.inf
    n = n1 + n2
    runs = 1 + int(np.count_nonzero(s[1:] != s[:-1]))
    mu = 2.0 * n1 * n2 / n + 1.0
    var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n * n * (n - 1.0))
    return (runs - mu) / math.sqrt(var) if var > 0 else 0.0


def initial_guess(times, values) -> PeakModel:
    """Moment-style guess: argmax centre, edge baseline, width from the FWHM."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    n_edge = max(1, t.size // 20)
    base = float(np.median(np.concatenate([v[:n_edge], v[-n_edge:]])))
    i = int(np.argmax(v))
    h = float(v[i] - base)
    if h <= 0:
        raise DegenerateWindow("no peak above baseline")
    above = np.flatnonzero(v - base >= h / 2.0)
    fwhm = (t[above[-1]] - t[above[0]]) + (t[1] - t[0])
    return PeakModel(h=h, x0=float(t[i]), sigma=float(fwhm / 2.3548), baseline=base)


def _model_and_jac(theta, tau):
    h, x0, sig, c1, c2, c3, c4, base = theta
    u = tau - x0
    poly = 1.0 + u * (c1 + u * (c2 + u * (c3 + u * c4)))
    dpoly = c1 + u * (2 * c2 + u * (3 * c3 + u * 4 * c4))
    g = np.exp(-0.5 * (u / sig) ** 2)
    f = h * poly * g + base
    J = np.empty((tau.size, 8))
    J[:, 0] = poly * g
    J[:, 1] = h * g * (poly * u / sig**2 - dpoly)
    J[:, 2] = h * poly * g * u * u / sig**3
    J[:, 3] = h * g * u
    J[:, 4] = h * g * u**2
    J[:, 5] = h * g * u**3
    J[:, 6] = h * g * u**4
    J[:, 7] = 1.0
    return f, J


_GAUSS_ONLY = np.array([True, True, True, False, False, False, False, True])
_ALL = np.ones(8, dtype=bool)


def _lm(theta, tau, y, free, max_nfev, tol):
    """MINPACK Levenberg-Marquardt on the ``free`` subset of parameters."""
    full = theta.copy()

    def expand(sub):
        full[free] = sub
        return full

    def resid(sub):
        return _model_and_jac(expand(sub), tau)[0] - y

    def jac(sub):
        return _model_and_jac(expand(sub), tau)[1][:, free]

    res = least_squares(
        resid, theta[free], jac=jac, method="lm", xtol=tol, ftol=1e-12, gtol=1e-15,
        max_nfev=max_nfev,
    )
    if res.status <= 0:
        raise NoConvergence(f"peak fit did not converge: {res.message}")
    out = theta.copy()
    out[free] = res.x
    return out, int(res.nfev)


def fit_peak(
    trace: DetectionTrace,
    window: tuple[float, float] | None = None,
    init: PeakModel | None = None,
    *,
    max_nfev: int = 5000,
    tol: float = 1e-10,
) -> PeakFit:
    """Levenberg-Marquardt fit of one peak inside ``window``.

    The Gaussian, centre and baseline are fitted first with the polynomial
    frozen at its initial value; the full model is then refined from there.
    The fit runs in coordinates scaled by the initial width and height so the
    eight parameters are of order one. Covariance is ``s^2 (J^T J)^-1`` with
    ``s^2`` the residual variance.

    Raises
    ------
    DegenerateWindow
        fewer than 10 samples, or a peak-to-noise ratio below 3
    NoConvergence
        no convergence within ``max_nfev`` model evaluations per stage
    """
    tr = trace if window is None else trace.window(*window)
    t, v = tr.times, tr.values
    if t.size < 10:
        raise DegenerateWindow("window holds fewer than 10 samples")
    guess = initial_guess(t, v) if init is None else init
    noise = noise_level(v)
    snr = guess.h / noise if noise > 0 else math.inf
    if snr < MIN_SNR:
        raise DegenerateWindow(f"peak SNR {snr:.2f} < {MIN_SNR}")

    # scaled coordinates: tau = (t - tc) / s, values / h0
    tc, s, h0 = guess.x0, guess.sigma, guess.h
    tau = (t - tc) / s
    y = v / h0
    scale = np.array([h0, s, s, 1 / s, 1 / s**2, 1 / s**3, 1 / s**4, h0])
    theta = guess.as_array() / scale
    theta[1] = (guess.x0 - tc) / s

    # x0/a1 and sigma/a2 are degenerate to first order around a pure Gaussian,
    # which makes the full problem a curved, flat-bottomed valley
    its = 0
    for free in (_GAUSS_ONLY, _ALL):
        theta, n_it = _lm(theta, tau, y, free, max_nfev, tol)
        its += n_it
    f, J = _model_and_jac(theta, tau)
    r = y - f
    cost = r @ r

    dof = max(t.size - 8, 1)
    s2 = cost / dof
    try:
        cov_scaled = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov_scaled = np.linalg.pinv(J.T @ J) * s2
    phys = theta * scale
    phys[1] = tc + theta[1] * s
    cov = cov_scaled * np.outer(scale, scale)
    model = PeakModel(*map(float, phys))
    return PeakFit(
        model=model,
        covariance=cov,
        residual_rms=float(math.sqrt(cost / t.size) * h0),
        runs_z=float(runs_z(r)),
        iterations=its,
        snr=float(snr),
    )


def _check_aligned(f1: DetectionTrace, f2: DetectionTrace) -> None:
    if f1.times.shape != f2.times.shape or not np.allclose(f1.times, f2.times, rtol=0, atol=1e-3 * f1.dt):
        raise MisalignedTraces("F1 and F2 traces do not share a time base")


def mix_crosstalk(f1: DetectionTrace, f2: DetectionTrace, kappa: float):
    """Forward model: each channel picks up ``kappa`` of the other."""
    _check_aligned(f1, f2)
    return (
        replace(f1, values=f1.values + kappa * f2.values),
        replace(f2, values=f2.values + kappa * f1.values),
    )


def remove_crosstalk(f1: DetectionTrace, f2: DetectionTrace, kappa: float):
    """Invert symmetric crosstalk of fraction ``kappa`` between the two channels."""
    _check_aligned(f1, f2)
    if not 0.0 <= kappa < 0.2:
        raise ValueError(f"kappa must lie in [0, 0.2), got {kappa}")
    norm = 1.0 / (1.0 - kappa * kappa)
    return (
        replace(f1, values=(f1.values - kappa * f2.values) * norm),
        replace(f2, values=(f2.values - kappa * f1.values) * norm),
    )


def estimate_crosstalk(leak: DetectionTrace, source: DetectionTrace, window: tuple[float, float]) -> float:
    """Crosstalk fraction from a window where only ``source`` carries signal.

    Regresses the leak channel on the source channel with a free offset.
    """
    _check_aligned(leak, source)
    sel = (source.times >= window[0]) & (source.times <= window[1])
    s = source.values[sel]
    if sel.sum() < 3 or np.ptp(s) == 0:
        raise DegenerateWindow("no source signal in the crosstalk window")
    X = np.column_stack([s, np.ones_like(s)])
    kappa, _ = np.linalg.lstsq(X, leak.values[sel], rcond=None)[0]
    return float(kappa)


def normalized_populations(areas, xi=1.0):
    """F=1 fraction of each cloud, corrected for the detection-efficiency ratio.

    ``areas`` holds (A11, A21, A12, A22) along its last axis: F=1 then F=2 for
    the lower cloud, then the same for the upper cloud. ``xi`` is the detection
    efficiency ratio, defined so that uncorrected areas give
    x = n11 / (n11 + xi n21); it is one value or a (lower, upper) pair.
    ``xi = 1`` returns the raw area ratios. Returns (x, y).
    """
    a = np.asarray(areas, dtype=float)
    if a.shape[-1] != 4:
        raise ValueError("areas must have 4 entries (A11, A21, A12, A22) along the last axis")
    if np.any(a < 0):
        raise DomainError("areas must be >= 0")
    xi_l, xi_u = (xi, xi) if np.ndim(xi) == 0 else xi
    if xi_l <= 0 or xi_u <= 0:
        raise DomainError("xi must be > 0")
    a11, a21, a12, a22 = np.moveaxis(a, -1, 0)
    den_l = a11 + a21 / xi_l
    den_u = a12 + a22 / xi_u
    if np.any(den_l == 0) or np.any(den_u == 0):
        raise ZeroSignal("a cloud has zero total signal")
    x, y = a11 / den_l, a12 / den_u
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def areas_from_traces(
    f1: DetectionTrace,
    f2: DetectionTrace,
    windows: Sequence[tuple[float, float]],
    kappa: float = 0.0,
) -> tuple[np.ndarray, list[PeakFit]]:
    """Fitted areas (A11, A21, A12, A22) of one shot.

    ``windows`` are given in area order; windows 0 and 2 are read from the F1
    channel, 1 and 3 from F2. Crosstalk ``kappa`` is removed first.
    """
    if len(windows) != 4:
        raise ValueError("need four windows (A11, A21, A12, A22)")
    if kappa:
        f1, f2 = remove_crosstalk(f1, f2, kappa)
    fits = [fit_peak(f1 if k % 2 == 0 else f2, w) for k, w in enumerate(windows)]
    return np.array([f.area for f in fits]), fits
