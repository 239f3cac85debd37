import math
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradiometer.errors import ConfigError, UnknownParameter
from gradiometer.ledger import QUANTITIES, SensitivityLedger, noise_budget


@pytest.fixture(scope="module")
def ledger():
    return SensitivityLedger.from_csv()


UNIT = {"urad": 1e-6, "mrad": 1e-3}


def _parse_original(text):
    """Value in rad per parameter unit from the tabulated string, e.g. '0.80 +/- 0.06 mrad/%'."""
    m = re.match(r"<?\s*(-?[\d.]+(?:e-?\d+)?)(?:\s*\+/-\s*[\d.]+)?\s*(urad|mrad)?\s*/", text.strip())
    value = float(m.group(1))
    return value * UNIT.get(m.group(2), 1.0)


def test_bundled_table_shape(ledger):
    assert len(ledger.parameters()) == 11
    assert len(ledger.rows) == 41
    for r in ledger.rows:
        assert r.quantity in QUANTITIES
        assert r.kind in ("linear", "quadratic")
        assert r.bound == r.original.startswith("<")


def test_values_match_original_strings(ledger):
    for r in ledger.rows:
        assert r.value == pytest.approx(_parse_original(r.original), rel=1e-12), r.original


@pytest.mark.parametrize("param, quantity, value, kind", [
    ("raman_mirror_ew_tilt", "phi_mean", 37e-3, "linear"),
    ("mot_power_ratio", "phi_mean", 0.80e-3, "linear"),
    ("mot_power_ratio", "phi_diff", 20e-6, "quadratic"),
    ("bias_solenoid_pulse", "phi_mean", 69e-3, "linear"),
    ("raman_intensity_ratio", "phi_mean", 20e-6, "quadratic"),
    ("vertical_mot_coil", "phi_mean", 56e-6, "quadratic"),
])
def test_key_rows(ledger, param, quantity, value, kind):
    row = ledger.get(param, quantity)
    assert row.value == pytest.approx(value, rel=1e-12)
    assert row.kind == kind


def test_missing_quantity_and_unknown_parameter(ledger):
    assert ledger.get("bias_solenoid", "phi_diff") is None
    with pytest.raises(UnknownParameter):
        ledger.get("laser_color", "phi_mean")


def test_tilt_contribution_per_day(ledger):
    b = noise_budget(ledger, {"raman_mirror_ew_tilt": 0.010})
    assert b.lines[0].phi_mean == pytest.approx(0.37e-3, rel=1e-12)


def test_mot_ratio_contribution_te(ledger):
    b = noise_budget(ledger, {"mot_power_ratio": 0.5})
    assert b.lines[0].phi_mean == pytest.approx(0.40e-3, rel=1e-12)
    assert noise_budget(ledger, timescale="te").lines[0].rms == 0.1


def test_zero_budget(ledger):
    assert noise_budget(ledger, {}).phi_mean_total == 0.0
    zeros = noise_budget(ledger, {p: 0.0 for p in ledger.parameters()})
    assert zeros.phi_mean_total == 0.0 and zeros.phi_diff_total == 0.0


def test_unknown_and_negative_rms(ledger):
    with pytest.raises(UnknownParameter):
        noise_budget(ledger, {"nope": 1.0})
    with pytest.raises(ValueError):
        noise_budget(ledger, {"probe_power": -1.0})
    with pytest.raises(ValueError):
        noise_budget(ledger, timescale="week")


def test_day_budget_ranking_and_totals(ledger):
    b = noise_budget(ledger, timescale="day")
    ranked = [line.parameter for line in b.ranked()]
    assert ranked[:4] == ["mot_power_ratio", "bias_solenoid_pulse", "raman_total_intensity",
                          "raman_mirror_ew_tilt"]
    assert ranked[-1] == "mot_total_power"  # bound rows come last
    expected = math.sqrt(1.6**2 + 1.38**2 + 0.6**2 + 0.37**2 + 0.3**2 + 0.2**2 + 0.08**2 + 0.004**2
                         + (56e-3 * 0.02**2) ** 2 + (22e-3 * 0.02**2) ** 2) * 1e-3
    assert b.phi_mean_total == pytest.approx(expected, rel=1e-12)
    # only the MOT power ratio has a measured differential coefficient
    assert b.phi_diff_total == pytest.approx(20e-6 * 2**2, rel=1e-12)


def test_bounds_reported_not_summed(ledger):
    b = noise_budget(ledger, {"mot_total_power": 2.0})
    assert b.lines[0].phi_mean_bound
    assert b.lines[0].phi_mean == pytest.approx(40e-6)
    assert b.phi_mean_total == 0.0


@given(st.sampled_from(["probe_power", "repumper_power", "raman_intensity_ratio", "mot_power_ratio",
                        "vertical_mot_coil", "raman_mirror_ew_tilt"]),
       st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_total_monotone(param, a, extra):
    ledger = SensitivityLedger.from_csv()
    base = {p: 0.5 for p in ledger.parameters()}
    lo = noise_budget(ledger, {**base, param: a})
    hi = noise_budget(ledger, {**base, param: a + extra})
    assert hi.phi_mean_total >= lo.phi_mean_total
    assert hi.phi_diff_total >= lo.phi_diff_total


def test_custom_ledger_file(tmp_path, ledger):
    text = (
        "parameter,label,quantity,kind,bound,value,uncertainty,unit,param_unit,rms_te,rms_day,original\n"
        "foo,Foo,phi_mean,linear,false,1e-3,,rad/%,%,1,2,1 mrad/%\n"
    )
    p = tmp_path / "l.csv"
    p.write_text(text)
    custom = SensitivityLedger.from_csv(p)
    assert noise_budget(custom).phi_mean_total == pytest.approx(2e-3)
    p.write_text(text.replace("phi_mean", "phase"))
    with pytest.raises(ConfigError):
        SensitivityLedger.from_csv(p)
    p.write_text(text + text.splitlines()[1] + "\n")
    with pytest.raises(ConfigError):
        SensitivityLedger.from_csv(p)
