"""Sensitivity ledger of the ellipse observables and the noise budget built on it.

Each ledger row couples one experimental parameter to one observable:

``phi_mean``   average phase angle of the ellipses
``phi_diff``   differential angle between the two source-mass configurations
``contrast``   ellipse amplitude (A, C)
``bias``       ellipse centre (B, D)

Values are normalized to rad (or dimensionless) per unit of the parameter,
where the parameter unit is %, mA or mrad. Quadratic rows are per unit
squared. Rows flagged ``bound`` are upper limits, not measured slopes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, UnknownParameter

QUANTITIES = ("phi_mean", "phi_diff", "contrast", "bias")
KINDS = ("linear", "quadratic")
TIMESCALES = ("te", "day")


@dataclass(frozen=True)
class LedgerRow:
    parameter: str
    label: str
    quantity: str
    kind: str
    bound: bool
    value: float
    uncertainty: float | None
    unit: str
    param_unit: str
    rms_te: float
    rms_day: float
    original: str

    def contribution(self, rms: float) -> float:
        """Size of the observable change for a parameter fluctuation ``rms``."""
        if self.kind == "linear":
            return abs(self.value) * rms
        return abs(self.value) * rms**2

    def effect(self, delta):
        """Signed shift of the observable for a parameter excursion ``delta``."""
        if self.kind == "linear":
            return self.value * delta
        return self.value * delta * delta


def _parse_row(raw: Mapping[str, str]) -> LedgerRow:
    try:
        row = LedgerRow(
            parameter=raw["parameter"].strip(),
            label=raw["label"].strip(),
            quantity=raw["quantity"].strip(),
            kind=raw["kind"].strip(),
            bound=raw["bound"].strip().lower() == "true",
            value=float(raw["value"]),
            uncertainty=float(raw["uncertainty"]) if raw["uncertainty"].strip() else None,
            unit=raw["unit"].strip(),
            param_unit=raw["param_unit"].strip(),
            rms_te=float(raw["rms_te"]),
            rms_day=float(raw["rms_day"]),
            original=raw["original"].strip(),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad ledger row {dict(raw)}: {exc}") from exc
    if row.quantity not in QUANTITIES:
        raise ConfigError(f"unknown ledger quantity {row.quantity!r}")
    if row.kind not in KINDS:
        raise ConfigError(f"unknown ledger kind {row.kind!r}")
    return row


class SensitivityLedger:
    """Immutable collection of :class:`LedgerRow` indexed by (parameter, quantity)."""

    def __init__(self, rows: Iterable[LedgerRow]):
        self._rows = tuple(rows)
        self._index = {}
        for r in self._rows:
            key = (r.parameter, r.quantity)
            if key in self._index:
                raise ConfigError(f"duplicate ledger entry {key}")
            self._index[key] = r

    @classmethod
    def from_csv(cls, path: str | Path | None = None) -> "SensitivityLedger":
        """Load a ledger file; ``None`` loads the bundled table."""
        if path is None:
            text = resources.files("gradiometer").joinpath("data/table1.csv").read_text()
        else:
            text = Path(path).read_text()
        return cls(_parse_row(r) for r in csv.DictReader(io.StringIO(text)))

    @property
    def rows(self) -> tuple[LedgerRow, ...]:
        return self._rows

    def parameters(self) -> list[str]:
        return list(dict.fromkeys(r.parameter for r in self._rows))

    def __contains__(self, parameter: str) -> bool:
        return any(r.parameter == parameter for r in self._rows)

    def get(self, parameter: str, quantity: str) -> LedgerRow | None:
        if parameter not in self:
            raise UnknownParameter(parameter)
        return self._index.get((parameter, quantity))

    def default_rms(self, parameter: str, timescale: str = "day") -> float:
        rows = [r for r in self._rows if r.parameter == parameter]
        if not rows:
            raise UnknownParameter(parameter)
        return rows[0].rms_day if timescale == "day" else rows[0].rms_te


@dataclass(frozen=True)
class BudgetLine:
    parameter: str
    label: str
    rms: float
    param_unit: str
    phi_mean: float
    phi_diff: float
    phi_mean_bound: bool
    phi_diff_bound: bool


@dataclass(frozen=True)
class NoiseBudget:
    lines: tuple[BudgetLine, ...]
    timescale: str
    phi_mean_total: float
    phi_diff_total: float

    def ranked(self, quantity: str = "phi_mean") -> list[BudgetLine]:
        """Measured (non-bound) lines by decreasing contribution, bounds last."""
        flag = f"{quantity}_bound"
        return sorted(self.lines, key=lambda b: (getattr(b, flag), -getattr(b, quantity)))

    def to_dict(self) -> dict:
        return {
            "timescale": self.timescale,
            "phi_mean_total": self.phi_mean_total,
            "phi_diff_total": self.phi_diff_total,
            "lines": [b.__dict__ for b in self.ranked()],
        }


def noise_budget(
    ledger: SensitivityLedger,
    rms: Mapping[str, float] | None = None,
    timescale: str = "day",
) -> NoiseBudget:
    """Phase contributions of each parameter and their quadrature totals.

    ``rms`` maps parameter names to RMS fluctuations in the ledger's parameter
    units. ``None`` uses the tabulated RMS for ``timescale`` ("te" or "day")
    for every parameter; an explicit mapping only budgets the parameters it
    names. Bound rows are reported but left out of the totals.
    """
    if timescale not in TIMESCALES:
        raise ValueError(f"timescale must be one of {TIMESCALES}")
    if rms is None:
        rms = {p: ledger.default_rms(p, timescale) for p in ledger.parameters()}
    for p in rms:
        if p not in ledger:
            raise UnknownParameter(p)
    lines = []
    for p, value in rms.items():
        if value < 0:
            raise ValueError(f"RMS for {p} must be >= 0")
        mean, diff = ledger.get(p, "phi_mean"), ledger.get(p, "phi_diff")
        any_row = next(r for r in ledger.rows if r.parameter == p)
        lines.append(BudgetLine(
            parameter=p,
            label=any_row.label,
            rms=float(value),
            param_unit=any_row.param_unit,
            phi_mean=mean.contribution(value) if mean else 0.0,
            phi_diff=diff.contribution(value) if diff else 0.0,
            phi_mean_bound=bool(mean and mean.bound),
            phi_diff_bound=bool(diff and diff.bound),
        ))
    mean_total = math.sqrt(sum(b.phi_mean**2 for b in lines if not b.phi_mean_bound))
    diff_total = math.sqrt(sum(b.phi_diff**2 for b in lines if not b.phi_diff_bound))
    return NoiseBudget(tuple(lines), timescale, mean_total, diff_total)
