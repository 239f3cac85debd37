"""Measurement-protocol statistics on shot sequences.

The chain is: shots -> ellipses (grouped by source-mass configuration and
wavevector sign) -> k-reversal phases -> doubly-differential phases between
the two configurations. Allan deviation, monitor correlation and the
zero-current extrapolation work on the resulting series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ellipse import FitReport, estimate_xi, fit_ellipse, golden_section
from .errors import (
    ConstantSeries,
    GroupTooSmall,
    IllConditioned,
    NoPairs,
    NotConverged,
    SeriesTooShort,
)
from .ledger import NoiseBudget, SensitivityLedger, noise_budget  # noqa: F401
from .peaks import normalized_populations
from .simulator import ShotRecord

MIN_GROUP = 36


# -- grouping and fitting ----------------------------------------------------


@dataclass(frozen=True)
class GroupedEllipse:
    mass_config: str
    k_sign: int
    block: int
    first_index: int
    last_index: int
    time: float
    report: FitReport
    monitors: Mapping[str, float] = field(default_factory=dict)

    @property
    def signed_phi(self) -> float:
        """Fitted phase with the orientation of the wavevector restored."""
        return self.k_sign * self.report.phi

    @property
    def n_points(self) -> int:
        return self.report.n_points


def group_shots(shots: Sequence[ShotRecord], group_size: int) -> list[tuple[int, list[int]]]:
    """Positions of the shots in each ellipse, with the configuration block they belong to.

    Shots are split into blocks of constant ``mass_config`` (a new block at
    every mass move), then by ``k_sign`` inside a block, then into runs of
    ``group_size`` consecutive shots. Incomplete trailing groups are dropped.
    """
    if group_size < MIN_GROUP:
        raise GroupTooSmall(f"group_size {group_size} < {MIN_GROUP}")
    order = sorted(range(len(shots)), key=lambda i: shots[i].index)
    groups = []
    block = -1
    prev_cfg = None
    members: dict[int, list[int]] = {}

    def flush():
        for sign in sorted(members, reverse=True):
            pos = members[sign]
            for s in range(0, len(pos) - group_size + 1, group_size):
                groups.append((block, pos[s : s + group_size]))

    for i in order:
        cfg = shots[i].mass_config
        if cfg != prev_cfg:
            flush()
            members = {}
            block += 1
            prev_cfg = cfg
        members.setdefault(shots[i].k_sign, []).append(i)
    flush()
    groups.sort(key=lambda g: (g[0], shots[g[1][0]].index))
    return groups


def _points(areas: np.ndarray, xi) -> tuple[np.ndarray, np.ndarray]:
    return normalized_populations(areas, xi)


def estimate_run_xi(
    shots: Sequence[ShotRecord],
    group_size: int,
    interval: tuple[float, float] = (0.9, 1.1),
    tol: float = 1e-4,
) -> float:
    """One detection-efficiency ratio for a whole run.

    Minimizes the mean linearized phase uncertainty over all groups.
    """
    groups = group_shots(shots, group_size)
    if not groups:
        raise GroupTooSmall("no complete group to estimate xi from")
    areas = np.array([s.areas for s in shots])

    def objective(xi):
        return float(np.mean([fit_ellipse(*_points(areas[pos], xi), dphi_method="linear").dphi
                              for _, pos in groups]))

    if len(groups) == 1:
        return estimate_xi(areas[groups[0][1]], interval, tol=tol).xi_hat
    xi_hat, _ = golden_section(objective, *interval, tol)
    return float(xi_hat)


def group_and_fit(
    shots: Sequence[ShotRecord],
    group_size: int = 360,
    xi: str | float = 1.0,
    *,
    xi_interval: tuple[float, float] = (0.9, 1.1),
    dphi_method: str = "bootstrap",
    n_boot: int = 200,
    seed: int = 0,
) -> list[GroupedEllipse]:
    """Fit one ellipse per group of shots.

    ``xi`` is either a fixed detection-efficiency ratio or ``"estimate"`` to
    find one ratio for the whole run first (see :func:`estimate_run_xi`).
    """
    if isinstance(xi, str):
        if xi != "estimate":
            raise ValueError("xi must be a number or 'estimate'")
        xi = estimate_run_xi(shots, group_size, xi_interval)
    groups = group_shots(shots, group_size)
    areas = np.array([s.areas for s in shots])
    out = []
    for g, (block, pos) in enumerate(groups):
        x, y = _points(areas[pos], xi)
        rep = fit_ellipse(x, y, dphi_method=dphi_method, n_boot=n_boot, seed=seed + g)
        first = shots[pos[0]]
        names = list(first.monitors)
        mons = {m: float(np.mean([shots[i].monitors[m] for i in pos])) for m in names}
        out.append(GroupedEllipse(
            mass_config=first.mass_config,
            k_sign=first.k_sign,
            block=block,
            first_index=first.index,
            last_index=shots[pos[-1]].index,
            time=float(np.mean([shots[i].time for i in pos])),
            report=rep,
            monitors=mons,
        ))
    return out


# -- k reversal and double difference ----------------------------------------


@dataclass(frozen=True)
class KPhase:
    phi: float
    dphi: float
    mass_config: str = ""
    block: int = -1
    time: float = float("nan")
    monitors: Mapping[str, float] = field(default_factory=dict)


def k_reversal_phase(direct: FitReport | GroupedEllipse, reverse: FitReport | GroupedEllipse) -> KPhase:
    """Direct minus reverse phase with errors added in quadrature.

    Grouped ellipses contribute their signed phase (the reverse ellipse is
    mirrored, so its fitted magnitude enters with a minus sign); bare fit
    reports are subtracted as given.
    """
    def unpack(g):
        if isinstance(g, GroupedEllipse):
            return g.report, g.signed_phi
        return g, g.phi

    rd, pd = unpack(direct)
    rr, pr = unpack(reverse)
    if not (rd.converged and rr.converged):
        raise NotConverged("both ellipse fits must have converged")
    phase = KPhase(pd - pr, math.hypot(rd.dphi, rr.dphi))
    if isinstance(direct, GroupedEllipse) and isinstance(reverse, GroupedEllipse):
        mons = {m: 0.5 * (direct.monitors[m] + reverse.monitors[m]) for m in direct.monitors}
        phase = KPhase(phase.phi, phase.dphi, direct.mass_config, direct.block,
                       0.5 * (direct.time + reverse.time), mons)
    return phase


def k_reversal_series(groups: Sequence[GroupedEllipse]) -> list[KPhase]:
    """Pair the i-th direct with the i-th reverse ellipse inside each configuration block."""
    out = []
    for block in sorted({g.block for g in groups}):
        members = [g for g in groups if g.block == block]
        direct = [g for g in members if g.k_sign > 0]
        reverse = [g for g in members if g.k_sign < 0]
        for d, r in zip(direct, reverse):
            out.append(k_reversal_phase(d, r))
    return out


def block_means(phases: Sequence[KPhase]) -> list[KPhase]:
    """Inverse-variance mean of the k-reversal phases of each configuration block."""
    out = []
    for block in sorted({p.block for p in phases}):
        members = [p for p in phases if p.block == block]
        w = np.array([1.0 / p.dphi**2 for p in members])
        v = np.array([p.phi for p in members])
        mean = float(np.sum(w * v) / np.sum(w))
        mons = {m: float(np.mean([p.monitors[m] for p in members])) for m in members[0].monitors}
        out.append(KPhase(mean, float(1.0 / math.sqrt(np.sum(w))), members[0].mass_config, block,
                          float(np.mean([p.time for p in members])), mons))
    return out


def protocol_pairs(phases: Sequence[KPhase]) -> tuple[list[KPhase], list[KPhase]]:
    """Pair each C1 block with the C2 block that follows or precedes it.

    Blocks alternate C1, C2, C1, ... Consecutive blocks are taken two by two in
    temporal order; a trailing unpaired block is dropped.
    """
    blocks = block_means(phases)
    c1, c2 = [], []
    i = 0
    while i + 1 < len(blocks):
        a, b = blocks[i], blocks[i + 1]
        if {a.mass_config, b.mass_config} == {"C1", "C2"}:
            c1.append(a if a.mass_config == "C1" else b)
            c2.append(b if b.mass_config == "C2" else a)
            i += 2
        else:
            i += 1
    return c1, c2


@dataclass(frozen=True)
class DoubleDifference:
    mean: float
    err: float
    chi2: float
    chi2_reduced: float
    dof: int
    birge_err: float
    per_point: np.ndarray
    per_point_err: np.ndarray

    def to_dict(self) -> dict:
        return {
            "delta_phi": self.mean,
            "err": self.err,
            "chi2": self.chi2,
            "chi2_reduced": self.chi2_reduced,
            "dof": self.dof,
            "birge_err": self.birge_err,
            "per_point": self.per_point.tolist(),
            "per_point_err": self.per_point_err.tolist(),
        }


def weighted_mean(values, errors) -> tuple[float, float, float]:
    """Inverse-variance mean, its error and the total chi-square about it."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        raise ValueError("errors must be > 0")
    w = 1.0 / e**2
    mean = float(np.sum(w * v) / np.sum(w))
    if np.all(e == e[0]):
        mean = float(np.mean(v))
    return mean, float(1.0 / math.sqrt(np.sum(w))), float(np.sum(w * (v - mean) ** 2))


def double_difference(phi1, dphi1, phi2, dphi2) -> DoubleDifference:
    """Weighted mean of Phi1(i) - Phi2(i) over configuration pairs.

    Returns total and reduced chi-square about the mean; ``birge_err`` scales
    the error by sqrt(chi2_reduced) when that exceeds one.
    """
    p1, p2 = np.asarray(phi1, dtype=float), np.asarray(phi2, dtype=float)
    e1, e2 = np.asarray(dphi1, dtype=float), np.asarray(dphi2, dtype=float)
    if p1.size == 0 or p1.shape != p2.shape:
        raise NoPairs("need at least one matched (C1, C2) pair")
    d = p1 - p2
    de = np.hypot(e1, e2)
    mean, err, chi2 = weighted_mean(d, de)
    dof = d.size - 1
    red = chi2 / dof if dof > 0 else float("nan")
    birge = err * math.sqrt(max(1.0, red)) if dof > 0 else err
    return DoubleDifference(mean, err, chi2, red, dof, birge, d, de)


def protocol_double_difference(groups: Sequence[GroupedEllipse]) -> DoubleDifference:
    c1, c2 = protocol_pairs(k_reversal_series(groups))
    if not c1:
        raise NoPairs("no adjacent C1/C2 configuration blocks")
    return double_difference([p.phi for p in c1], [p.dphi for p in c1],
                             [p.phi for p in c2], [p.dphi for p in c2])


# -- Allan deviation ---------------------------------------------------------


@dataclass(frozen=True)
class AllanResult:
    taus: np.ndarray
    sigmas: np.ndarray
    counts: np.ndarray
    mode: str = "non-overlapping"

    def rows(self):
        return zip(self.taus.tolist(), self.sigmas.tolist(), self.counts.tolist())


def allan_deviation(values, dt: float, mode: str = "non-overlapping") -> AllanResult:
    """Two-sample deviation on an octave grid of averaging times m * dt.

    Averaging times with fewer than two differences are left out.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    if n < 8:
        raise SeriesTooShort(f"need at least 8 samples, got {n}")
    if mode not in ("non-overlapping", "overlapping"):
        raise ValueError("mode must be 'non-overlapping' or 'overlapping'")
    taus, sigmas, counts = [], [], []
    m = 1
    cs = np.concatenate([[0.0], np.cumsum(y)])
    while 2 * m <= n:
        if mode == "non-overlapping":
            k = n // m
            means = y[: k * m].reshape(k, m).mean(axis=1)
            diffs = np.diff(means)
        else:
            means = (cs[m:] - cs[:-m]) / m
            diffs = means[m:] - means[:-m]
        if diffs.size >= 2:
            taus.append(m * dt)
            sigmas.append(math.sqrt(0.5 * np.mean(diffs**2)))
            counts.append(diffs.size)
        m *= 2
    return AllanResult(np.array(taus), np.array(sigmas), np.array(counts, dtype=int), mode)


def loglog_slope(result: AllanResult, tau_min: float | None = None, tau_max: float | None = None) -> float:
    """Least-squares slope of log sigma against log tau over the selected range."""
    sel = result.sigmas > 0
    if tau_min is not None:
        sel &= result.taus >= tau_min
    if tau_max is not None:
        sel &= result.taus <= tau_max
    if sel.sum() < 2:
        raise SeriesTooShort("need two positive Allan points to fit a slope")
    return float(np.polyfit(np.log(result.taus[sel]), np.log(result.sigmas[sel]), 1)[0])


@dataclass(frozen=True)
class WhiteNoiseLevel:
    sigma_point: float
    sigma_1s: float
    sigma_per_shot: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def white_noise_level(result: AllanResult, dt: float, shots_per_point: int = 1) -> WhiteNoiseLevel:
    """Noise floor of a white-noise-dominated series in two conventions.

    ``sigma_point`` is the single-point deviation from a tau^-1/2 fit to the
    Allan curve. ``sigma_1s`` extrapolates to a 1 s averaging time (rad at 1 s,
    i.e. rad/sqrt(Hz)); ``sigma_per_shot`` rescales to one shot of the
    ``shots_per_point`` that make up each point.
    """
    sel = result.sigmas > 0
    if not sel.any():
        return WhiteNoiseLevel(0.0, 0.0, 0.0)
    # weighted fit of sigma = s0 * (tau/dt)^-1/2 with weights ~ counts
    m = result.taus[sel] / dt
    s = result.sigmas[sel] * np.sqrt(m)
    w = result.counts[sel]
    s0 = float(np.sum(w * s) / np.sum(w))
    return WhiteNoiseLevel(s0, s0 * math.sqrt(dt), s0 * math.sqrt(shots_per_point))


# -- monitor correlation --------------------------------------------------------


@dataclass(frozen=True)
class Correlation:
    r: float
    se: float
    n: int


def nearest_samples(target_times, source_times, source_values, max_gap: float):
    """Source values nearest in time to each target; NaN where the gap exceeds ``max_gap``."""
    st = np.asarray(source_times, dtype=float)
    sv = np.asarray(source_values, dtype=float)
    order = np.argsort(st)
    st, sv = st[order], sv[order]
    tt = np.asarray(target_times, dtype=float)
    j = np.clip(np.searchsorted(st, tt), 1, max(st.size - 1, 1))
    left = np.clip(j - 1, 0, st.size - 1)
    right = np.clip(j, 0, st.size - 1)
    pick = np.where(np.abs(tt - st[left]) <= np.abs(st[right] - tt), left, right)
    out = sv[pick].astype(float)
    out[np.abs(st[pick] - tt) > max_gap] = np.nan
    return out


def pearson(a, b) -> Correlation:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ok = ~(np.isnan(a) | np.isnan(b))
    a, b = a[ok], b[ok]
    n = a.size
    if n < 3 or np.std(a) == 0 or np.std(b) == 0:
        raise ConstantSeries("correlation undefined for constant or too-short series")
    r = float(np.corrcoef(a, b)[0, 1])
    return Correlation(r, math.sqrt(max(1.0 - r * r, 0.0) / (n - 2)), n)


def correlate_monitors(
    times,
    phi,
    monitors: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    cycle_time: float = 1.9,
) -> dict[str, Correlation]:
    """Pearson correlation of a phase series with each monitor channel.

    ``monitors`` maps a channel name to ``(times, values)``. Monitor samples
    are matched to the phase time stamps by nearest neighbour within half a
    cycle; no interpolation.
    """
    out = {}
    for name, (mt, mv) in monitors.items():
        matched = nearest_samples(times, mt, mv, 0.5 * cycle_time)
        out[name] = pearson(phi, matched)
    return out


# -- zero-current extrapolation -----------------------------------------------


@dataclass(frozen=True)
class Extrapolation:
    phi0: float
    phi0_err: float
    curvature: float
    curvature_err: float
    vertex: float
    vertex_err: float
    stray_field: float
    model: str
    chi2: float


def extrapolate_zero_current(
    currents,
    phis,
    errors=None,
    model: str = "parabola",
    b0_per_amp: float = 1.445e-3,
) -> Extrapolation:
    """Weighted polynomial fit of phase against solenoid current.

    ``parabola`` fits phi0 + c i^2; ``parabola+linear`` fits phi0 + b i + c i^2
    and reports the vertex -b / 2c and the field it corresponds to,
    -vertex * b0_per_amp (the stray field that the coil cancels there).
    """
    i = np.asarray(currents, dtype=float)
    p = np.asarray(phis, dtype=float)
    e = np.ones_like(p) if errors is None else np.asarray(errors, dtype=float)
    if np.unique(i).size < 4:
        raise IllConditioned("need at least 4 distinct currents")
    if model == "parabola":
        X = np.column_stack([np.ones_like(i), i * i])
    elif model == "parabola+linear":
        X = np.column_stack([np.ones_like(i), i, i * i])
    else:
        raise ValueError("model must be 'parabola' or 'parabola+linear'")
    # scale columns so the conditioning test is about geometry, not units
    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale / e[:, None]
    if np.linalg.cond(Xs) > 1e10:
        raise IllConditioned("current grid cannot separate the polynomial terms")
    coef_s, *_ = np.linalg.lstsq(Xs, p / e, rcond=None)
    cov_s = np.linalg.inv(Xs.T @ Xs)
    coef = coef_s / scale
    cov = cov_s / np.outer(scale, scale)
    chi2 = float(np.sum(((X @ coef - p) / e) ** 2))
    if errors is None:
        dof = max(p.size - X.shape[1], 1)
        cov = cov * chi2 / dof
    c = coef[-1]
    ci = X.shape[1] - 1
    if model == "parabola+linear":
        b = coef[1]
        vertex = -b / (2.0 * c) if c != 0 else float("nan")
        g = np.array([0.0, -1.0 / (2.0 * c), b / (2.0 * c * c)])
        vertex_err = float(math.sqrt(max(g @ cov @ g, 0.0))) if c != 0 else float("nan")
    else:
        vertex, vertex_err = 0.0, 0.0
    return Extrapolation(
        phi0=float(coef[0]),
        phi0_err=float(math.sqrt(max(cov[0, 0], 0.0))),
        curvature=float(c),
        curvature_err=float(math.sqrt(max(cov[ci, ci], 0.0))),
        vertex=float(vertex),
        vertex_err=vertex_err,
        stray_field=float(-vertex * b0_per_amp),
        model=model,
        chi2=chi2,
    )
