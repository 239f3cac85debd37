"""Run configuration read from a TOML file.

Sections mirror the modules::

    seed = 7

    [physics]        # PhysicsConfig; dz is required
    dz = 0.328

    [noise]          # NoiseConfig
    [schedule]       # Schedule
    [injected]       # Injected
    [servo]          # ServoConfig; omit to run without servo
    [[drift.channels]]
    name = "raman_mirror_ew_tilt"
    rw_step = 1e-4

    [io]
    shots = "shots.csv"

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .io import config_hash
from .ledger import SensitivityLedger
from .noise import NoiseConfig
from .physics import PhysicsConfig
from .simulator import DriftModel, Injected, Schedule, ServoConfig

SECTIONS = ("physics", "noise", "drift", "servo", "schedule", "injected", "io", "seed")
IO_KEYS = ("shots", "format", "ledger")


@dataclass(frozen=True)
class RunConfig:
    physics: PhysicsConfig
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    drift: DriftModel = field(default_factory=DriftModel)
    servo: ServoConfig | None = None
    schedule: Schedule = field(default_factory=Schedule)
    injected: Injected = field(default_factory=Injected)
    io: Mapping[str, str] = field(default_factory=dict)
    seed: int | None = None

    @property
    def effective_seed(self) -> int:
        return self.noise.seed if self.seed is None else self.seed

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return RunConfig(self.physics, self.noise, self.drift, self.servo, self.schedule,
                         self.injected, self.io, int(seed))

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved configuration, defaults included."""
        return {
            "physics": self.physics.to_dict(),
            "noise": self.noise.to_dict(),
            "drift": self.drift.to_dict(),
            "servo": None if self.servo is None else self.servo.to_dict(),
            "schedule": self.schedule.to_dict(),
            "injected": self.injected.to_dict(),
            "io": dict(self.io),
            "seed": self.effective_seed,
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        if "physics" not in data:
            raise ConfigError("config needs a [physics] section with dz")
        io = dict(data.get("io", {}))
        bad = sorted(set(io) - set(IO_KEYS))
        if bad:
            raise ConfigError(f"unknown io keys: {', '.join(bad)}")
        ledger = SensitivityLedger.from_csv(io.get("ledger"))
        seed = data.get("seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
            raise ConfigError("seed must be an integer")
        try:
            return cls(
                physics=PhysicsConfig.from_mapping(data["physics"]),
                noise=NoiseConfig.from_mapping(data.get("noise", {})),
                drift=DriftModel.from_mapping(data.get("drift", {}), ledger),
                servo=ServoConfig.from_mapping(data["servo"]) if "servo" in data else None,
                schedule=Schedule.from_mapping(data.get("schedule", {})),
                injected=Injected.from_mapping(data.get("injected", {})),
                io=io,
                seed=seed,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_mapping(data)
