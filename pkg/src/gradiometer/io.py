"""File formats: shot records, point lists, traces and run manifests.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs give byte-identical outputs. Every shot file starts with the hash of
the configuration that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .peaks import DetectionTrace
from .simulator import ShotRecord

SHOT_COLUMNS = ("index", "time", "k_sign", "mass_config", "A11", "A21", "A12", "A22")
MANIFEST_SCHEMA = 1


def _canonical(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v: float) -> str:
    return repr(float(v))


def write_shots_csv(path: str | Path, shots: Sequence[ShotRecord], cfg_hash: str = "") -> None:
    monitors = list(shots[0].monitors) if shots else []
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {cfg_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(SHOT_COLUMNS) + monitors)
        for s in shots:
            w.writerow(
                [s.index, _fmt(s.time), s.k_sign, s.mass_config]
                + [_fmt(a) for a in s.areas]
                + [_fmt(s.monitors[m]) for m in monitors]
            )


def _read_header_hash(fh) -> tuple[str, str | None]:
    first = fh.readline()
    if first.startswith("# config_hash:"):
        return first.split(":", 1)[1].strip(), None
    return "", first


def read_shots_csv(path: str | Path) -> tuple[list[ShotRecord], str]:
    with open(path, newline="") as fh:
        cfg_hash, pending = _read_header_hash(fh)
        lines = ([pending] if pending else []) + fh.readlines()
    reader = csv.reader(lines)
    header = next(reader)
    if tuple(header[: len(SHOT_COLUMNS)]) != SHOT_COLUMNS:
        raise ValueError(f"{path}: not a shot file (columns {header[:len(SHOT_COLUMNS)]})")
    monitors = header[len(SHOT_COLUMNS):]
    shots = []
    for row in reader:
        if not row:
            continue
        shots.append(ShotRecord(
            index=int(row[0]),
            time=float(row[1]),
            k_sign=int(row[2]),
            mass_config=row[3],
            areas=tuple(float(v) for v in row[4:8]),
            monitors={m: float(v) for m, v in zip(monitors, row[8:])},
        ))
    return shots, cfg_hash


def write_shots_jsonl(path: str | Path, shots: Sequence[ShotRecord], cfg_hash: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"_meta": {"config_hash": cfg_hash}}, sort_keys=True) + "\n")
        for s in shots:
            rec = {
                "index": s.index,
                "time": s.time,
                "k_sign": s.k_sign,
                "mass_config": s.mass_config,
                "A11": s.areas[0],
                "A21": s.areas[1],
                "A12": s.areas[2],
                "A22": s.areas[3],
                "monitors": dict(s.monitors),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_shots_jsonl(path: str | Path) -> tuple[list[ShotRecord], str]:
    shots, cfg_hash = [], ""
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "_meta" in rec:
                cfg_hash = rec["_meta"].get("config_hash", "")
                continue
            shots.append(ShotRecord(
                index=int(rec["index"]),
                time=float(rec["time"]),
                k_sign=int(rec["k_sign"]),
                mass_config=rec["mass_config"],
                areas=(rec["A11"], rec["A21"], rec["A12"], rec["A22"]),
                monitors=rec.get("monitors", {}),
            ))
    return shots, cfg_hash


def read_shots(path: str | Path) -> tuple[list[ShotRecord], str]:
    if str(path).endswith(".jsonl"):
        return read_shots_jsonl(path)
    return read_shots_csv(path)


def write_shots(path: str | Path, shots: Sequence[ShotRecord], cfg_hash: str = "") -> None:
    if str(path).endswith(".jsonl"):
        write_shots_jsonl(path, shots, cfg_hash)
    else:
        write_shots_csv(path, shots, cfg_hash)


def is_shot_file(path: str | Path) -> bool:
    if str(path).endswith(".jsonl"):
        return True
    with open(path) as fh:
        _, pending = _read_header_hash(fh)
        header = pending if pending is not None else fh.readline()
    return header.startswith("index,")


def read_points_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """(x, y) pairs, one per line, with an optional ``x,y`` header and ``#`` comments."""
    data = np.genfromtxt(path, delimiter=",", comments="#", names=None)
    if data.ndim == 1 and np.isnan(data).any():
        data = data[None, :]
    data = np.atleast_2d(data)
    data = data[~np.isnan(data).any(axis=1)]
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns x,y")
    return data[:, 0], data[:, 1]


def write_points_csv(path: str | Path, x, y) -> None:
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for a, b in zip(x, y):
            fh.write(f"{_fmt(a)},{_fmt(b)}\n")


def write_trace_csv(path: str | Path, trace: DetectionTrace) -> None:
    with open(path, "w") as fh:
        fh.write(f"# channel: {trace.channel}\n")
        for t, v in zip(trace.times, trace.values):
            fh.write(f"{_fmt(t)},{_fmt(v)}\n")


def read_trace_csv(path: str | Path, channel: str | None = None) -> DetectionTrace:
    name = channel
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("channel:") and name is None:
                    name = line.split(":", 1)[1].strip()
                continue
            try:
                t, v = line.split(",")[:2]
                rows.append((float(t), float(v)))
            except ValueError:
                continue  # header line
    if not rows:
        raise ValueError(f"{path}: no samples")
    arr = np.array(rows)
    return DetectionTrace(name or "F1", arr[:, 0], arr[:, 1])


def write_table_csv(
    path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]], cfg_hash: str | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        if cfg_hash is not None:
            fh.write(f"# config_hash: {cfg_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(dumps(obj))
