"""Synthetic shot sequences and detection traces.

A run is generated shot by shot from the ellipse model

    x = A sin t + B,   y = C sin(t + phi) + D

with per-shot noise from :mod:`gradiometer.noise`, slow parameter drifts that
couple into the ellipse through the sensitivity ledger, an optional integrator
servo on drifting channels, Raman wavevector reversal and source-mass
modulation. Populations are turned into fluorescence areas through the
detection-efficiency ratio, so downstream code sees what the experiment sees.

Random numbers come from independent child streams of one ``SeedSequence``
(fringe phases, shot noise, one stream per drift channel). Changing a noise
level or adding a drift channel therefore leaves the other draws untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .ellipse import fit_ellipse
from .errors import ConfigError
from .ledger import QUANTITIES, SensitivityLedger
from .noise import NoiseConfig, sample_shot_noise
from .peaks import SQRT_2PI, DetectionTrace, PeakModel
from .physics import PhysicsConfig, coriolis_shift

MASS_CONFIGS = ("C1", "C2")
SECONDS_PER_DAY = 86400.0


def _from_mapping(cls, data: Mapping[str, Any], section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}") from exc


@dataclass(frozen=True)
class ShotRecord:
    index: int
    time: float
    k_sign: int
    mass_config: str
    areas: tuple[float, float, float, float]
    monitors: Mapping[str, float] = field(default_factory=dict)


# -- drifts and servo --------------------------------------------------------


@dataclass(frozen=True, kw_only=True)
class DriftChannel:
    """One slowly varying experimental parameter, in its ledger unit (%, mA, mrad).

    ``couplings`` maps an observable (phi_mean, phi_diff, contrast, bias) to
    ``(kind, coefficient)`` with kind ``linear`` or ``quadratic``. An inert
    channel is recorded as a monitor but couples to nothing. Phase couplings of
    a ``k_dependent`` channel flip sign with the Raman wavevector, so they
    survive k-reversal differencing.
    """

    name: str
    white_rms: float = 0.0
    rw_step: float = 0.0
    sin_amplitude: float = 0.0
    sin_period: float = SECONDS_PER_DAY
    sin_phase: float = 0.0
    couplings: Mapping[str, tuple[str, float]] = field(default_factory=dict)
    k_dependent: bool = True
    inert: bool = False

    def __post_init__(self) -> None:
        for name in ("white_rms", "rw_step", "sin_amplitude"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{self.name}: {name} must be >= 0")
        if self.sin_period <= 0:
            raise ConfigError(f"{self.name}: sin_period must be > 0")
        for q, (kind, _) in self.couplings.items():
            if q not in QUANTITIES or kind not in ("linear", "quadratic"):
                raise ConfigError(f"{self.name}: bad coupling {q}={kind}")
        if self.inert and self.couplings:
            raise ConfigError(f"{self.name}: an inert channel cannot have couplings")

    @classmethod
    def from_ledger(
        cls, ledger: SensitivityLedger, name: str, *, include_bounds: bool = False, **dynamics
    ) -> "DriftChannel":
        """Channel whose couplings are the ledger rows for ``name``.

        Bound rows are upper limits; they are used as couplings only with
        ``include_bounds=True``.
        """
        couplings = {}
        for q in QUANTITIES:
            row = ledger.get(name, q)
            if row is not None and (include_bounds or not row.bound):
                couplings[q] = (row.kind, row.value)
        return cls(name=name, couplings=couplings, **dynamics)

    def effect(self, quantity: str, value):
        if quantity not in self.couplings:
            return 0.0
        kind, coef = self.couplings[quantity]
        return coef * value if kind == "linear" else coef * value * value


@dataclass(frozen=True)
class DriftModel:
    channels: tuple[DriftChannel, ...] = ()

    def __post_init__(self) -> None:
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ConfigError("drift channel names must be unique")

    def validate(self, ledger: SensitivityLedger) -> None:
        for c in self.channels:
            if not c.inert and c.name not in ledger:
                raise ConfigError(f"drift channel {c.name!r} is neither in the ledger nor inert")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], ledger: SensitivityLedger | None = None) -> "DriftModel":
        """Build from a config section ``{"channels": [{...}, ...]}``.

        Non-inert channels take their couplings from the ledger unless a
        ``couplings`` table is given explicitly.
        """
        unknown = sorted(set(data) - {"channels"})
        if unknown:
            raise ConfigError(f"unknown drift keys: {', '.join(unknown)}")
        ledger = ledger or SensitivityLedger.from_csv()
        channels = []
        for raw in data.get("channels", []):
            raw = dict(raw)
            include_bounds = bool(raw.pop("include_bounds", False))
            if "couplings" in raw:
                raw["couplings"] = {q: (str(v[0]), float(v[1])) for q, v in raw["couplings"].items()}
                channels.append(_from_mapping(DriftChannel, raw, "drift channel"))
            elif raw.get("inert", False):
                channels.append(_from_mapping(DriftChannel, raw, "drift channel"))
            else:
                name = raw.pop("name", None)
                if name is None:
                    raise ConfigError("drift channel needs a name")
                if name not in ledger:
                    raise ConfigError(f"drift channel {name!r} is neither in the ledger nor inert")
                bad = sorted(set(raw) - {f.name for f in fields(DriftChannel)})
                if bad:
                    raise ConfigError(f"unknown drift channel keys: {', '.join(bad)}")
                channels.append(DriftChannel.from_ledger(ledger, name, include_bounds=include_bounds, **raw))
        model = cls(tuple(channels))
        model.validate(ledger)
        return model

    def to_dict(self) -> dict:
        out = []
        for c in self.channels:
            d = asdict(c)
            d["couplings"] = {q: list(v) for q, v in c.couplings.items()}
            out.append(d)
        return {"channels": out}


@dataclass(frozen=True, kw_only=True)
class ServoConfig:
    """Discrete integrator: every ``sample_every`` cycles the correction grows by ``gain`` times the error."""

    sample_every: int = 72
    gain: float = 1.0
    channels: tuple[str, ...] = ()
    residual_target: float = 0.003

    def __post_init__(self) -> None:
        if self.sample_every < 1:
            raise ConfigError("servo sample_every must be >= 1")
        if not 0.0 < self.gain < 2.0:
            raise ConfigError("servo gain must lie in (0, 2) for a stable loop")
        object.__setattr__(self, "channels", tuple(self.channels))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ServoConfig":
        return _from_mapping(cls, data, "servo")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def rw_step_for_day_rms(day_rms: float, cycle_time: float = 1.9) -> float:
    """Per-cycle random-walk step giving ``day_rms`` scatter about the daily mean.

    A walk of M steps of size s has an expected variance about its own mean of
    s^2 (M^2 - 1) / (6 M).
    """
    m = SECONDS_PER_DAY / cycle_time
    return day_rms / math.sqrt((m * m - 1.0) / (6.0 * m))


def evolve_channel(
    channel: DriftChannel,
    index: np.ndarray,
    time: np.ndarray,
    rng: np.random.Generator,
    cycle_time: float,
    servo: ServoConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw and servo-corrected values of one channel at each shot.

    Random-walk increments scale with the square root of elapsed wall-clock
    time, so dead time lets the walk wander. The servo reads the corrected
    value on shots whose index is a multiple of ``sample_every`` and the new
    correction applies from the next shot on.
    """
    n = index.size
    z_rw = rng.standard_normal(n)
    z_white = rng.standard_normal(n)
    dt = np.diff(time, prepend=time[0] - cycle_time) if n else time
    steps = channel.rw_step * np.sqrt(np.maximum(dt, 0.0) / cycle_time) * z_rw
    raw = np.cumsum(steps) - steps[0] if n else steps
    raw = raw + channel.white_rms * z_white
    if channel.sin_amplitude:
        raw = raw + channel.sin_amplitude * np.sin(2.0 * np.pi * time / channel.sin_period + channel.sin_phase)
    if servo is None or channel.name not in servo.channels:
        return raw, raw.copy()
    corrected = np.empty_like(raw)
    correction = 0.0
    samples = np.flatnonzero(index % servo.sample_every == 0)
    bounds = list(samples) + [n]
    corrected[: bounds[0]] = raw[: bounds[0]]
    for k, s in enumerate(samples):
        corrected[s] = raw[s] - correction
        correction += servo.gain * corrected[s]
        stop = bounds[k + 1]
        corrected[s + 1 : stop] = raw[s + 1 : stop] - correction
    return raw, corrected


# -- schedule and injected signal ---------------------------------------------


@dataclass(frozen=True, kw_only=True)
class Schedule:
    """Shot bookkeeping.

    ``modulation_period`` is the number of cycles spent in one source-mass
    configuration before the masses move (0 keeps them in ``first_config``).
    ``group_size`` is the number of points per ellipse for one wavevector sign.
    """

    n_shots: int = 1440
    group_size: int = 360
    modulation_period: int = 720
    dead_time: float = 300.0
    cycle_time: float = 1.9
    k_reversal: bool = True
    t_range: str = "full"
    first_config: str = "C1"

    def __post_init__(self) -> None:
        if self.n_shots < 1:
            raise ConfigError("n_shots must be >= 1")
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if self.modulation_period < 0:
            raise ConfigError("modulation_period must be >= 0")
        if self.cycle_time <= 0 or self.dead_time < 0:
            raise ConfigError("need cycle_time > 0 and dead_time >= 0")
        if self.t_range not in ("full", "half"):
            raise ConfigError("t_range must be 'full' or 'half'")
        if self.first_config not in MASS_CONFIGS:
            raise ConfigError(f"first_config must be one of {MASS_CONFIGS}")
        if self.modulation_period:
            per_sign = self.modulation_period // 2 if self.k_reversal else self.modulation_period
            if self.k_reversal and self.modulation_period % 2:
                raise ConfigError("with k-reversal the modulation period must be even")
            if per_sign % self.group_size:
                raise ConfigError(
                    f"group_size {self.group_size} does not divide the {per_sign} shots per sign "
                    f"in one configuration period"
                )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "Schedule":
        return _from_mapping(cls, data, "schedule")

    def to_dict(self) -> dict:
        return asdict(self)

    def ellipses_per_period(self) -> int:
        """Ellipses obtained from one configuration period."""
        if not self.modulation_period:
            return 0
        return self.modulation_period // self.group_size

    def layout(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Index, time stamp, k sign and configuration (0 = first, 1 = other) of every shot."""
        index = np.arange(self.n_shots)
        if self.modulation_period:
            block = index // self.modulation_period
        else:
            block = np.zeros_like(index)
        config = block % 2
        time = index * self.cycle_time + block * self.dead_time
        k = np.where(index % 2 == 0, 1, -1) if self.k_reversal else np.ones_like(index)
        return index, time, k, config


@dataclass(frozen=True, kw_only=True)
class Injected:
    """Signal and ellipse shape put into a run.

    ``phi_c1`` and ``phi_c2`` are the gradiometer phases for a direct
    wavevector; a reversed wavevector sees their negatives. ``phi_k_even``
    is added for both signs. ``xi_true`` is a single detection-efficiency
    ratio or a (lower, upper) pair. ``pedestal_fraction`` adds unselected F=1
    atoms, as a fraction of each cloud's atom number, to the F=1 areas.
    ``tilt_change`` (rad) is the Raman-mirror tilt difference between the two
    configurations; its Coriolis phase is added to C1.
    """

    phi_c1: float = math.pi / 2
    phi_c2: float = math.pi / 2
    phi_k_even: float = 0.0
    xi_true: float | tuple[float, float] = 1.0
    pedestal_fraction: float = 0.0
    tilt_change: float = 0.0
    A: float = 0.225
    B: float = 0.5
    C: float = 0.225
    D: float = 0.5

    def __post_init__(self) -> None:
        xi = self.xi_lower_upper()
        if min(xi) <= 0:
            raise ConfigError("xi_true must be > 0")
        if self.A <= 0 or self.C <= 0:
            raise ConfigError("contrasts A and C must be > 0")
        if not (0 <= self.B - self.A and self.B + self.A <= 1 and 0 <= self.D - self.C and self.D + self.C <= 1):
            raise ConfigError("ellipse must stay inside the unit square")
        if self.pedestal_fraction < 0:
            raise ConfigError("pedestal_fraction must be >= 0")

    def xi_lower_upper(self) -> tuple[float, float]:
        if np.ndim(self.xi_true) == 0:
            return float(self.xi_true), float(self.xi_true)
        lo, up = self.xi_true
        return float(lo), float(up)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "Injected":
        data = dict(data)
        if isinstance(data.get("xi_true"), (list, tuple)):
            data["xi_true"] = tuple(data["xi_true"])
        return _from_mapping(cls, data, "injected")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["xi_true"], tuple):
            d["xi_true"] = list(d["xi_true"])
        return d


# -- run generation ------------------------------------------------------------


@dataclass(frozen=True)
class SimulatedRun(Sequence[ShotRecord]):
    """Shot records plus the ground truth behind them."""

    shots: tuple[ShotRecord, ...]
    truth: Mapping[str, np.ndarray]
    schedule: Schedule

    def __len__(self) -> int:
        return len(self.shots)

    def __getitem__(self, i):
        return self.shots[i]

    def __iter__(self) -> Iterator[ShotRecord]:
        return iter(self.shots)

    def areas(self) -> np.ndarray:
        return np.array([s.areas for s in self.shots])


def _streams(seed: int, n_channels: int):
    ss = np.random.SeedSequence(seed)
    t_seq, noise_seq, drift_seq = ss.spawn(3)
    drift = [np.random.default_rng(s) for s in drift_seq.spawn(max(n_channels, 1))]
    return np.random.default_rng(t_seq), np.random.default_rng(noise_seq), drift


def simulate_run(
    physics: PhysicsConfig,
    noise: NoiseConfig,
    drift: DriftModel | None = None,
    servo: ServoConfig | None = None,
    schedule: Schedule | None = None,
    injected: Injected | None = None,
    seed: int | None = None,
) -> SimulatedRun:
    """Generate a deterministic sequence of shots.

    ``seed`` overrides ``noise.seed``. The ground truth (fringe phase ``t``,
    applied phase ``phi``, noiseless populations and drift values) is returned
    alongside the records.
    """
    drift = drift or DriftModel()
    schedule = schedule or Schedule()
    injected = injected or Injected()
    seed = noise.seed if seed is None else int(seed)
    if servo is not None:
        names = {c.name for c in drift.channels}
        missing = [c for c in servo.channels if c not in names]
        if missing:
            raise ConfigError(f"servo channels not in drift model: {missing}")

    index, time, k, config = schedule.layout()
    if schedule.first_config == "C2":
        config = 1 - config
    n = index.size
    t_rng, noise_rng, drift_rngs = _streams(seed, len(drift.channels))
    t_hi = 2.0 * np.pi if schedule.t_range == "full" else np.pi
    t = t_rng.uniform(0.0, t_hi, n)

    phi_kdep = np.zeros(n)
    phi_keven = np.zeros(n)
    dA = np.zeros(n)
    dB = np.zeros(n)
    monitors = {}
    drift_truth = {}
    sign_cfg = np.where(config == 0, 0.5, -0.5)
    for ch, rng in zip(drift.channels, drift_rngs):
        raw, value = evolve_channel(ch, index, time, rng, schedule.cycle_time, servo)
        monitors[ch.name] = value
        drift_truth[ch.name] = raw
        if ch.inert:
            continue
        shift = ch.effect("phi_mean", value) + sign_cfg * ch.effect("phi_diff", value)
        if ch.k_dependent:
            phi_kdep += shift
        else:
            phi_keven += shift
        dA += ch.effect("contrast", value)
        dB += ch.effect("bias", value)

    phi_cfg = np.where(config == 0, injected.phi_c1, injected.phi_c2)
    if injected.tilt_change:
        phi_cfg = phi_cfg + np.where(config == 0, coriolis_shift(physics, injected.tilt_change), 0.0)

    # ideal points including parameter jitter, then detection noise at those points
    shot_noise = sample_shot_noise(noise, noise_rng, size=n)
    phi = k * (phi_cfg + phi_kdep) + injected.phi_k_even + phi_keven + shot_noise.dphi
    x_ideal = (injected.A + dA + shot_noise.dA) * np.sin(t) + injected.B + dB + shot_noise.dB
    y_ideal = (injected.C + dA + shot_noise.dC) * np.sin(t + phi) + injected.D + dB + shot_noise.dD
    x_ideal = np.clip(x_ideal, 0.0, 1.0)
    y_ideal = np.clip(y_ideal, 0.0, 1.0)
    if noise.binomial:
        tech = replace(noise, detection_mode="technical",
                       tech_detection_rms=0.0 if noise.detection_mode == "qpn" else noise.tech_detection_rms)
        det = sample_shot_noise(tech, noise_rng, x=x_ideal, y=y_ideal)
        x_obs = noise_rng.binomial(int(round(noise.n_lower)), x_ideal) / round(noise.n_lower) + det.dx_d
        y_obs = noise_rng.binomial(int(round(noise.n_upper)), y_ideal) / round(noise.n_upper) + det.dy_d
    else:
        det = sample_shot_noise(noise, noise_rng, x=x_ideal, y=y_ideal)
        x_obs = x_ideal + det.dx_d
        y_obs = y_ideal + det.dy_d
    x_obs = np.clip(x_obs, 0.0, 1.0)
    y_obs = np.clip(y_obs, 0.0, 1.0)

    xi_l, xi_u = injected.xi_lower_upper()
    ped = injected.pedestal_fraction
    a11 = (x_obs + ped) * noise.n_lower / xi_l
    a21 = (1.0 - x_obs) * noise.n_lower
    a12 = (y_obs + ped) * noise.n_upper / xi_u
    a22 = (1.0 - y_obs) * noise.n_upper

    names = [c.name for c in drift.channels]
    shots = tuple(
        ShotRecord(
            index=int(index[i]),
            time=float(time[i]),
            k_sign=int(k[i]),
            mass_config=MASS_CONFIGS[int(config[i])],
            areas=(float(a11[i]), float(a21[i]), float(a12[i]), float(a22[i])),
            monitors={nm: float(monitors[nm][i]) for nm in names},
        )
        for i in range(n)
    )
    truth = {"t": t, "phi": phi, "x": x_ideal, "y": y_ideal, "x_obs": x_obs, "y_obs": y_obs}
    truth.update({f"drift:{nm}": v for nm, v in drift_truth.items()})
    return SimulatedRun(shots, truth, schedule)


# -- fluorescence traces -----------------------------------------------------


@dataclass(frozen=True)
class Pedestal:
    """Broad Gaussian under each F=1 peak; area ``fraction`` of the peak, width ``width_multiplier`` sigma."""

    fraction: float
    width_multiplier: float = 5.0

    def reduced(self, factor: float = 30.0) -> "Pedestal":
        return Pedestal(self.fraction / factor, self.width_multiplier)


@dataclass(frozen=True, kw_only=True)
class TraceTiming:
    """Where the four peaks sit in a detection record.

    F=2 peaks of the lower and upper cloud come at ``lower_center`` and
    ``lower_center + cloud_separation``; the F=1 peaks follow ``f1_delay``
    later on the other channel. ``shape`` holds the dimensionless polynomial
    coefficients a_k sigma^k shared by all peaks.
    """

    sample_rate: float = 50e3
    duration: float = 0.1
    lower_center: float = 0.010
    cloud_separation: float = 0.050
    f1_delay: float = 0.015
    sigma: float = 0.002
    shape: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def centers(self) -> tuple[float, float, float, float]:
        """Centres in area order (F1 lower, F2 lower, F1 upper, F2 upper)."""
        lo, up = self.lower_center, self.lower_center + self.cloud_separation
        return (lo + self.f1_delay, lo, up + self.f1_delay, up)

    def windows(self, half_width: float = 5.0) -> list[tuple[float, float]]:
        w = half_width * self.sigma
        return [(c - w, c + w) for c in self.centers()]

    def times(self) -> np.ndarray:
        return np.arange(int(round(self.duration * self.sample_rate))) / self.sample_rate


def peaks_for_shot(areas: Sequence[float], timing: TraceTiming | None = None) -> list[PeakModel]:
    """Four peak models whose analytic areas equal ``areas``."""
    timing = timing or TraceTiming()
    s = timing.sigma
    b1, b2, b3, b4 = timing.shape
    norm = s * SQRT_2PI * (1.0 + b2 + 3.0 * b4)
    out = []
    for area, c in zip(areas, timing.centers()):
        if area <= 0:
            raise ValueError("peak areas must be > 0 to synthesize a trace")
        out.append(PeakModel(h=area / norm, x0=c, sigma=s, a1=b1 / s, a2=b2 / s**2, a3=b3 / s**3, a4=b4 / s**4))
    return out


def simulate_trace(
    peaks: Sequence[PeakModel],
    pedestal: Pedestal | None = None,
    sample_rate: float = 50e3,
    noise_rms: float = 0.0,
    duration: float = 0.1,
    rng: np.random.Generator | None = None,
) -> tuple[DetectionTrace, DetectionTrace]:
    """Two-channel fluorescence record for peaks in area order (P11, P21, P12, P22).

    Channel F1 carries peaks 0 and 2, channel F2 peaks 1 and 3. Peak
    baselines add up within a channel.
    """
    if len(peaks) != 4:
        raise ValueError("need four peaks (P11, P21, P12, P22)")
    times = np.arange(int(round(duration * sample_rate))) / sample_rate
    rng = rng or np.random.default_rng(0)
    channels = []
    for name, members in (("F1", (peaks[0], peaks[2])), ("F2", (peaks[1], peaks[3]))):
        v = np.zeros_like(times)
        for p in members:
            v += p.evaluate(times)
            if pedestal is not None and name == "F1" and pedestal.fraction > 0:
                w = pedestal.width_multiplier * p.sigma
                amp = pedestal.fraction * p.area() / (w * SQRT_2PI)
                v += amp * np.exp(-0.5 * ((times - p.x0) / w) ** 2)
        if noise_rms > 0:
            v = v + rng.normal(0.0, noise_rms, times.size)
        channels.append(DetectionTrace(name, times, v))
    return channels[0], channels[1]


# -- Coriolis compensation -----------------------------------------------------


@dataclass(frozen=True)
class ScanPoint:
    rotation_rate: float
    omega_eff: float
    contrast: float
    phase_rms: float
    phi: float


def coriolis_compensation_scan(
    physics: PhysicsConfig,
    noise: NoiseConfig,
    sigma_v: float,
    rotation_rates: Sequence[float],
    *,
    n_points: int = 720,
    v_jitter: float | None = None,
    phi: float = math.pi / 2,
    A: float = 0.225,
    B: float = 0.5,
    seed: int | None = None,
) -> list[ScanPoint]:
    """Ellipse contrast and phase error while counter-rotating the Raman mirror.

    The effective rotation is the horizontal Earth rate minus the mirror rate.
    A transverse velocity v picks up the phase 2 Omega_eff k_e T^2 v: the
    velocity spread ``sigma_v`` inside a cloud washes out the contrast by
    exp(-(2 Omega_eff k_e T^2 sigma_v)^2 / 2), and the shot-to-shot jitter of
    each cloud's mean velocity (``v_jitter``, default sigma_v / 10) adds
    differential phase noise. The same random numbers are used at every rate.
    """
    if sigma_v <= 0:
        raise ValueError("sigma_v must be > 0")
    v_jitter = sigma_v / 10.0 if v_jitter is None else v_jitter
    seed = noise.seed if seed is None else seed
    omega_h = physics.omega_earth * math.cos(physics.latitude)
    k_t2 = physics.k_e * physics.T**2
    out = []
    for rate in rotation_rates:
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, 2.0 * np.pi, n_points)
        v_l, v_u = rng.normal(0.0, v_jitter, (2, n_points))
        omega_eff = omega_h - rate
        factor = math.exp(-0.5 * (2.0 * omega_eff * k_t2 * sigma_v) ** 2)
        dphi = 2.0 * omega_eff * k_t2 * (v_u - v_l)
        x = A * factor * np.sin(t) + B
        y = A * factor * np.sin(t + phi + dphi) + B
        det = sample_shot_noise(noise, rng, x=x, y=y)
        rep = fit_ellipse(x + det.dx_d, y + det.dy_d, dphi_method="linear")
        contrast = 0.5 * (rep.params.A + rep.params.C)
        out.append(ScanPoint(float(rate), float(omega_eff), float(contrast), float(rep.dphi), float(rep.phi)))
    return out
