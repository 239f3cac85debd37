"""Command-line entry point.

Subcommands::

    gradiometer simulate  --config run.toml --out shots.csv
    gradiometer fit       shots.csv --group 360 --xi estimate
    gradiometer analyze   shots.csv --allan --double-diff --budget --correlate --out report/
    gradiometer budget    --timescale day
    gradiometer trace-fit f1.csv f2.csv

Human-readable summaries go to stderr. ``--json`` writes the report to
stdout instead, so output can be piped. Exit codes:

    0  success
    2  configuration or usage error
    3  input/output error
    4  fit failure
    5  insufficient data
"""

from __future__ import annotations

import contextlib
import csv
import json
import sys
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from .config import RunConfig, load_config
from .ellipse import fit_ellipse
from .errors import (
    ConfigError,
    ConstantSeries,
    DegenerateConic,
    DegenerateWindow,
    DomainError,
    GroupTooSmall,
    IllConditioned,
    MisalignedTraces,
    NoConvergence,
    NoMinimumInInterval,
    NoPairs,
    NotConverged,
    SeriesTooShort,
    TooFewPoints,
    UnknownParameter,
    ZeroSignal,
)
from .io import (
    MANIFEST_SCHEMA,
    dumps,
    is_shot_file,
    read_points_csv,
    read_shots,
    read_trace_csv,
    write_json,
    write_shots,
    write_table_csv,
    write_trace_csv,
)
from .ledger import SensitivityLedger, noise_budget
from .peaks import areas_from_traces, normalized_populations
from .pipeline import (
    allan_deviation,
    correlate_monitors,
    estimate_run_xi,
    group_and_fit,
    k_reversal_series,
    protocol_double_difference,
    white_noise_level,
)
from .simulator import (
    Pedestal,
    ShotRecord,
    TraceTiming,
    peaks_for_shot,
    simulate_run,
    simulate_trace,
)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FIT = 4
EXIT_DATA = 5

_FIT_ERRORS = (NoConvergence, DegenerateConic, NotConverged, NoMinimumInInterval,
               DegenerateWindow, ZeroSignal, DomainError, MisalignedTraces, IllConditioned)
_DATA_ERRORS = (GroupTooSmall, NoPairs, SeriesTooShort, TooFewPoints, ConstantSeries)
TRACE_INDEX = "traces.csv"


class CliError(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


@contextlib.contextmanager
def _guard(stage: str):
    """Translate library errors into documented exit codes."""
    try:
        yield
    except ConfigError as exc:
        raise CliError(f"{stage}: {exc}", EXIT_CONFIG) from exc
    except UnknownParameter as exc:
        raise CliError(f"{stage}: unknown parameter {exc.args[0]!r}", EXIT_CONFIG) from exc
    except _DATA_ERRORS as exc:
        raise CliError(f"{stage}: insufficient data: {exc}", EXIT_DATA) from exc
    except _FIT_ERRORS as exc:
        raise CliError(f"{stage}: fit failed ({type(exc).__name__}): {exc}", EXIT_FIT) from exc


@contextlib.contextmanager
def _io(what: str):
    try:
        yield
    except (OSError, ValueError, KeyError, IndexError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read or write {what}: {exc}", EXIT_IO) from exc


def _note(msg: str) -> None:
    click.echo(msg, err=True)


def _emit(report: dict, as_json: bool) -> None:
    if as_json:
        click.echo(dumps(report), nl=False)


def _load(config_path: str | None) -> RunConfig | None:
    if config_path is None:
        return None
    with _guard("config"):
        try:
            return load_config(config_path)
        except OSError as exc:
            raise CliError(f"cannot read config {config_path}: {exc}", EXIT_IO) from exc


def versions() -> dict[str, str]:
    return {"gradiometer": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


@click.group()
@click.version_option(__version__, prog_name="gradiometer")
def cli() -> None:
    """Simulate and analyze gravity-gradiometer shot sequences."""


# -- simulate ---------------------------------------------------------------


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="TOML run configuration.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Shot file (.csv or .jsonl). Defaults to io.shots, then shots.csv.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--traces", "trace_dir", type=click.Path(file_okay=False), default=None,
              help="Also write detection traces of the first shots to this directory.")
@click.option("--trace-shots", type=int, default=10, show_default=True)
@click.option("--trace-noise", type=float, default=0.0, show_default=True,
              help="White noise RMS added to the traces.")
def simulate(config_path, out, seed, trace_dir, trace_shots, trace_noise):
    """Generate a shot sequence and its manifest."""
    cfg = _load(config_path).with_seed(seed)
    out = Path(out or cfg.io.get("shots", "shots.csv"))
    if cfg.io.get("format") and not out.suffix:
        out = out.with_suffix("." + cfg.io["format"])
    with _guard("simulate"):
        run = simulate_run(cfg.physics, cfg.noise, cfg.drift, cfg.servo, cfg.schedule,
                           cfg.injected, seed=cfg.effective_seed)
    h = cfg.hash()
    outputs = [out.name]
    with _io(out):
        out.parent.mkdir(parents=True, exist_ok=True)
        write_shots(out, run.shots, h)
        if trace_dir is not None:
            outputs.append(_write_traces(Path(trace_dir), run.shots[:trace_shots], cfg, trace_noise))
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "config_hash": h,
            "seed": cfg.effective_seed,
            "versions": versions(),
            "n_shots": len(run),
            "ellipses_per_period": cfg.schedule.ellipses_per_period(),
            "ellipses_per_config_per_period": _per_config(cfg),
            "outputs": outputs,
            "config": cfg.to_dict(),
        }
        write_json(manifest_path(out), manifest)
    _note(f"wrote {len(run)} shots to {out} (config {h[:12]}, seed {cfg.effective_seed})")


def _per_config(cfg: RunConfig) -> dict[str, int]:
    s = cfg.schedule
    n = s.ellipses_per_period()
    if not s.modulation_period:
        return {s.first_config: 0}
    return {"C1": n, "C2": n}


def _write_traces(directory: Path, shots, cfg: RunConfig, noise_rms: float) -> str:
    directory.mkdir(parents=True, exist_ok=True)
    timing = TraceTiming()
    frac = cfg.injected.pedestal_fraction
    pedestal = Pedestal(frac) if frac > 0 else None
    rng = np.random.default_rng(np.random.SeedSequence([cfg.effective_seed, 1]))
    rows = []
    for s in shots:
        f1, f2 = simulate_trace(peaks_for_shot(s.areas, timing), pedestal, timing.sample_rate,
                                noise_rms, timing.duration, rng)
        names = (f"shot_{s.index:06d}_F1.csv", f"shot_{s.index:06d}_F2.csv")
        write_trace_csv(directory / names[0], f1)
        write_trace_csv(directory / names[1], f2)
        rows.append([s.index, s.time, s.k_sign, s.mass_config, *names])
    write_table_csv(directory / TRACE_INDEX, ["index", "time", "k_sign", "mass_config", "f1", "f2"], rows)
    return directory.name


# -- input helpers ------------------------------------------------------------


def _parse_windows(windows) -> list[tuple[float, float]]:
    if not windows:
        return TraceTiming().windows()
    if len(windows) != 4:
        raise CliError("give --window four times (A11, A21, A12, A22 order)", EXIT_CONFIG)
    out = []
    for w in windows:
        try:
            a, b = (float(v) for v in w.split(","))
        except ValueError as exc:
            raise CliError(f"bad window {w!r}; expected START,STOP", EXIT_CONFIG) from exc
        out.append((a, b))
    return out


def _shots_from_traces(directory: Path, windows, kappa: float) -> list[ShotRecord]:
    with _io(directory / TRACE_INDEX):
        with open(directory / TRACE_INDEX, newline="") as fh:
            index = list(csv.DictReader(fh))
    shots = []
    for row in index:
        with _io(row["f1"]):
            f1 = read_trace_csv(directory / row["f1"], "F1")
            f2 = read_trace_csv(directory / row["f2"], "F2")
        with _guard(f"peak fit of shot {row['index']}"):
            areas, _ = areas_from_traces(f1, f2, windows, kappa)
        shots.append(ShotRecord(int(row["index"]), float(row["time"]), int(row["k_sign"]),
                                row["mass_config"], tuple(float(a) for a in areas), {}))
    return shots


def _read_input(path: str, windows, kappa: float):
    """Shots (with their config hash) or bare points, depending on the file."""
    p = Path(path)
    if p.is_dir():
        return "shots", _shots_from_traces(p, windows, kappa), ""
    with _io(p):
        if is_shot_file(p):
            shots, h = read_shots(p)
            return "shots", shots, h
        x, y = read_points_csv(p)
    return "points", (x, y), ""


def _xi_value(mode: str, value: float | None) -> float | str:
    if mode == "estimate":
        return "estimate"
    return 1.0 if value is None else value


def _group_size(group, cfg: RunConfig | None) -> int:
    if group is not None:
        return group
    return cfg.schedule.group_size if cfg is not None else 360


def _fit_groups(shots, group_size, xi, dphi_method, n_boot, seed):
    xi_info = {"mode": "fixed", "value": xi}
    with _guard("fit"):
        if xi == "estimate":
            xi = estimate_run_xi(shots, group_size)
            xi_info = {"mode": "estimate", "value": xi}
        groups = group_and_fit(shots, group_size, xi, dphi_method=dphi_method, n_boot=n_boot, seed=seed)
    if not groups:
        raise CliError(f"insufficient data: no complete group of {group_size} shots", EXIT_DATA)
    return groups, xi_info


def _group_dict(g) -> dict:
    return {
        "mass_config": g.mass_config,
        "k_sign": g.k_sign,
        "block": g.block,
        "first_index": g.first_index,
        "last_index": g.last_index,
        "time": g.time,
        "phi": g.report.phi,
        "dphi": g.report.dphi,
        "signed_phi": g.signed_phi,
        "report": g.report.to_dict(),
    }


_common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                 help="Run configuration supplying defaults (group size, ledger)."),
    click.option("--group", type=int, default=None, help="Points per ellipse."),
    click.option("--xi", "xi_mode", type=click.Choice(["fixed", "estimate"]), default="fixed",
                 show_default=True, help="Detection-efficiency ratio handling."),
    click.option("--xi-value", type=float, default=None, help="Ratio used with --xi fixed (default 1)."),
    click.option("--dphi", "dphi_method", type=click.Choice(["bootstrap", "linear"]),
                 default="bootstrap", show_default=True, help="Phase uncertainty method."),
    click.option("--n-boot", type=int, default=200, show_default=True),
    click.option("--seed", type=int, default=0, show_default=True, help="Bootstrap seed."),
    click.option("--window", "windows", multiple=True,
                 help="Peak window START,STOP in seconds for trace input; repeat four times."),
    click.option("--kappa", type=float, default=0.0, show_default=True,
                 help="Channel crosstalk removed from trace input."),
    click.option("--json", "as_json", is_flag=True, help="Write the report to stdout."),
]


def common_options(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


# -- fit ------------------------------------------------------------------------


@cli.command()
@click.argument("input_path", type=click.Path(exists=True))
@common_options
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="JSON report file.")
def fit(input_path, config_path, group, xi_mode, xi_value, dphi_method, n_boot, seed,
        windows, kappa, as_json, out):
    """Fit ellipses to a points file, a shot file or a trace directory."""
    cfg = _load(config_path)
    kind, data, h = _read_input(input_path, _parse_windows(windows), kappa)
    if kind == "points":
        if xi_mode == "estimate":
            raise CliError("--xi estimate needs shot areas, not (x, y) points", EXIT_CONFIG)
        with _guard("fit"):
            rep = fit_ellipse(*data, dphi_method=dphi_method, n_boot=n_boot, seed=seed)
        _note(f"phi = {rep.phi:.9f} +/- {rep.dphi:.3g} rad  ({rep.n_points} points)")
        report = {"config_hash": h, "fits": [rep.to_dict()]}
    else:
        xi = _xi_value(xi_mode, xi_value)
        groups, xi_info = _fit_groups(data, _group_size(group, cfg), xi, dphi_method, n_boot, seed)
        if xi_info["mode"] == "estimate":
            _note(f"xi estimate = {xi_info['value']:.5f}")
        for g in groups:
            _note(f"{g.mass_config} k={g.k_sign:+d} shots {g.first_index}-{g.last_index}: "
                  f"phi = {g.report.phi:.6f} +/- {g.report.dphi:.3g} rad")
        report = {"config_hash": h, "xi": xi_info, "groups": [_group_dict(g) for g in groups]}
    if out:
        with _io(out):
            write_json(out, report)
    _emit(report, as_json)


# -- analyze --------------------------------------------------------------------


@cli.command()
@click.argument("input_path", type=click.Path(exists=True))
@common_options
@click.option("--allan", is_flag=True, help="Allan deviation of the phase series.")
@click.option("--allan-group", type=int, default=72, show_default=True,
              help="Points per ellipse for the Allan series.")
@click.option("--allan-mode", type=click.Choice(["non-overlapping", "overlapping"]),
              default="non-overlapping", show_default=True)
@click.option("--double-diff", is_flag=True, help="Doubly-differential phase between configurations.")
@click.option("--budget", is_flag=True, help="Noise budget from the sensitivity ledger.")
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), default=None,
              help="Ledger CSV overriding the bundled table.")
@click.option("--timescale", type=click.Choice(["te", "day"]), default="day", show_default=True)
@click.option("--correlate", is_flag=True, help="Correlate phases with the monitor channels.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for report.json and plot-ready CSVs.")
def analyze(input_path, config_path, group, xi_mode, xi_value, dphi_method, n_boot, seed,
            windows, kappa, as_json, allan, allan_group, allan_mode, double_diff, budget,
            ledger_path, timescale, correlate, out_dir):
    """Protocol statistics on a shot file or trace directory."""
    cfg = _load(config_path)
    kind, shots, h = _read_input(input_path, _parse_windows(windows), kappa)
    if kind != "shots":
        raise CliError("analyze needs a shot file or trace directory", EXIT_CONFIG)
    if not shots:
        raise CliError("insufficient data: no shots", EXIT_DATA)
    cycle = cfg.schedule.cycle_time if cfg is not None else _cycle_time(shots)
    xi = _xi_value(xi_mode, xi_value)
    report: dict = {"config_hash": h, "n_shots": len(shots)}
    tables: dict[str, tuple[list[str], list]] = {}

    if double_diff or correlate or not (allan or budget):
        groups, xi_info = _fit_groups(shots, _group_size(group, cfg), xi, dphi_method, n_boot, seed)
        xi = xi_info["value"]
        report["xi"] = xi_info
        report["groups"] = [_group_dict(g) for g in groups]
        for g in groups:
            _note(f"{g.mass_config} k={g.k_sign:+d} shots {g.first_index}-{g.last_index}: "
                  f"phi = {g.report.phi:.6f} +/- {g.report.dphi:.3g} rad")

    if double_diff:
        with _guard("double difference"):
            dd = protocol_double_difference(groups)
        report["double_difference"] = dd.to_dict()
        tables["double_diff.csv"] = (["pair", "delta_phi", "err"],
                                     [[i, float(v), float(e)] for i, (v, e)
                                      in enumerate(zip(dd.per_point, dd.per_point_err))])
        _note(f"double difference = {dd.mean * 1e3:.4f} +/- {dd.err * 1e3:.4f} mrad, "
              f"chi2 = {dd.chi2:.2f} ({dd.dof} dof)")

    if correlate:
        phases = k_reversal_series(groups)
        series = phases if phases else [g for g in groups]
        times = [p.time for p in series]
        phi = [p.phi if phases else p.signed_phi for p in series]
        names = list(series[0].monitors) if series else []
        corr = {}
        for name in names:
            mon = {name: (times, [p.monitors[name] for p in series])}
            try:
                c = correlate_monitors(times, phi, mon, cycle)[name]
                corr[name] = {"r": c.r, "se": c.se, "n": c.n}
                _note(f"correlation with {name}: r = {c.r:+.3f} +/- {c.se:.3f}")
            except ConstantSeries:
                corr[name] = None
                _note(f"correlation with {name}: undefined (constant series)")
        report["correlation"] = corr

    if allan:
        with _guard("allan"):
            res, wn = _allan(shots, allan_group, xi, allan_mode, seed)
        report["allan"] = {"mode": res.mode, "taus": res.taus.tolist(), "sigmas": res.sigmas.tolist(),
                           "counts": res.counts.tolist(), "white_noise": wn.to_dict()}
        tables["allan.csv"] = (["tau", "sigma", "count"], [list(r) for r in res.rows()])
        _note(f"Allan: {len(res.taus)} points, white level {wn.sigma_1s * 1e3:.3g} mrad at 1 s")

    if budget:
        path = ledger_path or (cfg.io.get("ledger") if cfg is not None else None)
        nb = _budget(path, timescale, {})
        report["budget"] = nb.to_dict()
        tables["budget.csv"] = _budget_table(nb)

    if out_dir:
        d = Path(out_dir)
        with _io(d):
            d.mkdir(parents=True, exist_ok=True)
            write_json(d / "report.json", report)
            for name, (header, rows) in tables.items():
                write_table_csv(d / name, header, rows, cfg_hash=h)
    _emit(report, as_json)


def _cycle_time(shots) -> float:
    t = np.sort([s.time for s in shots])
    return float(np.median(np.diff(t))) if t.size > 1 else 1.0


def _allan(shots, group_size, xi, mode, seed):
    """Allan deviation of the k-reversal phase (or plain phase) of small ellipses."""
    groups = group_and_fit(shots, group_size, xi, dphi_method="linear", seed=seed)
    phases = k_reversal_series(groups)
    if phases:
        times = np.array([p.time for p in phases])
        phi = np.array([p.phi for p in phases])
        shots_per_point = 2 * group_size
    else:
        times = np.array([g.time for g in groups])
        phi = np.array([g.signed_phi for g in groups])
        shots_per_point = group_size
    if times.size < 2:
        raise SeriesTooShort(f"only {times.size} phase points")
    dt = float(np.median(np.diff(times)))
    res = allan_deviation(phi, dt, mode)
    return res, white_noise_level(res, dt, shots_per_point)


# -- budget ---------------------------------------------------------------------


def _parse_rms(items) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError as exc:
            raise CliError(f"bad --rms {item!r}; expected NAME=VALUE", EXIT_CONFIG) from exc
        if not sep:
            raise CliError(f"bad --rms {item!r}; expected NAME=VALUE", EXIT_CONFIG)
    return out


def _budget(path, timescale, overrides):
    with _guard("budget"):
        with _io(path or "bundled ledger"):
            ledger = SensitivityLedger.from_csv(path)
        rms = None
        if overrides:
            rms = {p: ledger.default_rms(p, timescale) for p in ledger.parameters()}
            for name in overrides:
                if name not in ledger:
                    raise UnknownParameter(name)
            rms.update(overrides)
        return noise_budget(ledger, rms, timescale)


def _budget_table(nb):
    header = ["parameter", "rms", "param_unit", "phi_mean", "phi_mean_bound", "phi_diff", "phi_diff_bound"]
    rows = [[b.parameter, b.rms, b.param_unit, b.phi_mean, str(b.phi_mean_bound).lower(),
             b.phi_diff, str(b.phi_diff_bound).lower()] for b in nb.ranked()]
    return header, rows


@cli.command("budget")
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), default=None,
              help="Ledger CSV overriding the bundled table.")
@click.option("--timescale", type=click.Choice(["te", "day"]), default="day", show_default=True)
@click.option("--rms", "rms_items", multiple=True, help="Override one parameter RMS, NAME=VALUE.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV table.")
@click.option("--json", "as_json", is_flag=True, help="Write the budget to stdout.")
def budget_cmd(ledger_path, timescale, rms_items, out, as_json):
    """Ranked phase-noise budget from the sensitivity ledger."""
    nb = _budget(ledger_path, timescale, _parse_rms(rms_items))
    for b in nb.ranked():
        mark = "<" if b.phi_mean_bound else " "
        _note(f"{b.parameter:24s} {b.rms:10.4g} {b.param_unit:5s} {mark}{b.phi_mean * 1e3:9.4f} mrad")
    _note(f"{'total':24s} {'':16s}  {nb.phi_mean_total * 1e3:9.4f} mrad "
          f"(differential {nb.phi_diff_total * 1e3:.4f} mrad)")
    if out:
        with _io(out):
            write_table_csv(out, *_budget_table(nb))
    _emit(nb.to_dict(), as_json)


# -- trace-fit ------------------------------------------------------------------


@cli.command("trace-fit")
@click.argument("f1_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("f2_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--window", "windows", multiple=True,
              help="Peak window START,STOP in seconds; repeat four times (A11, A21, A12, A22).")
@click.option("--kappa", type=float, default=0.0, show_default=True, help="Channel crosstalk.")
@click.option("--xi", "xi_value", type=float, default=1.0, show_default=True,
              help="Detection-efficiency ratio for the normalized populations.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="JSON report file.")
@click.option("--json", "as_json", is_flag=True, help="Write the report to stdout.")
def trace_fit(f1_path, f2_path, windows, kappa, xi_value, out, as_json):
    """Fit the four fluorescence peaks of one shot."""
    with _io(f"{f1_path}, {f2_path}"):
        f1 = read_trace_csv(f1_path, "F1")
        f2 = read_trace_csv(f2_path, "F2")
    with _guard("trace fit"):
        areas, fits = areas_from_traces(f1, f2, _parse_windows(windows), kappa)
        x, y = normalized_populations(areas, xi_value)
    labels = ("A11", "A21", "A12", "A22")
    for name, f in zip(labels, fits):
        flag = "  structured residuals" if f.structured_residuals else ""
        _note(f"{name} = {f.area:.6g} +/- {f.area_error:.2g}{flag}")
    _note(f"x = {x:.6f}  y = {y:.6f}")
    report = {"areas": dict(zip(labels, map(float, areas))), "x": x, "y": y, "xi": xi_value,
              "peaks": {n: f.to_dict() for n, f in zip(labels, fits)}}
    if out:
        with _io(out):
            write_json(out, report)
    _emit(report, as_json)


def main(argv=None) -> None:
    cli.main(args=argv, prog_name="gradiometer")


if __name__ == "__main__":
    main(sys.argv[1:])
