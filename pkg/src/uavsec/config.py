"""Experiment configuration, physical parameters and unit handling.

All powers are stored in watts and all ratios as linear values. Conversion
from dBm/dB happens once, when a config is built.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

STAGE1_SCHEMES = ("PMA", "DAMS", "RMS")
STAGE2_SCHEMES = ("OCFA", "FGS", "DCS", "AS")


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class InfeasibleConfigError(ConfigError):
    """Total quota cannot seat every UT (M*Q < N)."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1000.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(ratio: float) -> float:
    return 10.0 * math.log10(ratio)


_QUANTITY = re.compile(r"^\s*([-+]?[0-9.]+(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)\s*$")


def _split_unit(text: str, field_name: str) -> tuple[float, str]:
    m = _QUANTITY.match(str(text))
    if not m:
        raise ConfigError(field_name, f"cannot parse quantity {text!r}")
    return float(m.group(1)), m.group(2).lower()


def parse_power(value, field_name: str = "power") -> float:
    """Parse ``"10dBm"``, ``"0.01W"``, ``"10mW"`` or a bare number (watts)."""
    if isinstance(value, (int, float)):
        number, unit = float(value), "w"
    else:
        number, unit = _split_unit(value, field_name)
    if unit == "dbm":
        return dbm_to_watts(number)
    if unit in ("w", ""):
        watts = number
    elif unit == "mw":
        watts = number / 1000.0
    else:
        raise ConfigError(field_name, f"unknown power unit {unit!r}")
    if not watts > 0:
        raise ConfigError(field_name, "power must be positive")
    return watts


def parse_ratio(value, field_name: str = "ratio") -> float:
    """Parse ``"10dB"`` or a bare linear ratio."""
    if isinstance(value, (int, float)):
        number, unit = float(value), ""
    else:
        number, unit = _split_unit(value, field_name)
    if unit == "db":
        return db_to_linear(number)
    if unit != "":
        raise ConfigError(field_name, f"unknown ratio unit {unit!r}")
    if not number > 0:
        raise ConfigError(field_name, "ratio must be positive")
    return number


@dataclass(frozen=True)
class PhysicalParams:
    """Link-level constants shared by every node (SI units, linear ratios)."""

    path_loss_exponent: float = 2.0
    noise_power: float = dbm_to_watts(-60.0)
    power_budget: float = dbm_to_watts(10.0)
    bandwidth: float = 100e3
    snr_threshold: float = db_to_linear(10.0)

    def __post_init__(self):
        for name in ("path_loss_exponent", "noise_power", "power_budget",
                     "bandwidth", "snr_threshold"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class Region:
    """Deployment volume. UTs, URs and UEs each get their own altitude slab."""

    width: float = 2000.0
    depth: float = 2000.0
    ut_z: tuple[float, float] = (0.0, 500.0)
    ur_z: tuple[float, float] = (500.0, 1000.0)
    ue_z: tuple[float, float] = (0.0, 1000.0)

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise ConfigError("region", "width and depth must be > 0")
        for name in ("ut_z", "ur_z", "ue_z"):
            lo, hi = getattr(self, name)
            if not (0 <= lo < hi):
                raise ConfigError(f"region.{name}", f"need 0 <= lo < hi, got ({lo}, {hi})")


# axis name -> (canonical name, unit shown in tables)
SWEEP_AXES = {
    "N": "N", "M": "M", "S": "S", "R": "S", "Q": "Q",
    "P0": "P0", "gamma": "gamma", "snr_threshold": "gamma",
    "noise": "noise", "sigma2": "noise", "alpha": "alpha",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    Sweep values for ``P0`` and ``noise`` are in dBm, for ``gamma`` in dB,
    the units these sweeps are usually quoted in.
    """

    n_ut: int = 12
    n_ur: int = 3
    n_ue: int = 2
    quota: int = 4
    params: PhysicalParams = field(default_factory=PhysicalParams)
    region: Region = field(default_factory=Region)
    repetitions: int = 100
    seed: int = 0
    stage1: tuple[str, ...] = ("PMA",)
    stage2: tuple[str, ...] = ("OCFA", "FGS", "DCS", "AS")
    sweep_axis: str | None = None
    sweep_values: tuple[float, ...] = ()
    quota_schedule: tuple[int, ...] | None = None
    delta: float | None = None
    dcs_q: tuple[int, ...] = (2, 3, 4, 5, 6)
    workers: int = 1

    def __post_init__(self):
        for name in ("n_ut", "n_ur", "n_ue"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        for s in self.stage1:
            if s not in STAGE1_SCHEMES:
                raise ConfigError("stage1", f"unknown scheme {s!r}")
        for s in self.stage2:
            if s not in STAGE2_SCHEMES:
                raise ConfigError("stage2", f"unknown scheme {s!r}")
        for q in self.dcs_q:
            if not 2 <= q <= 6:
                raise ConfigError("dcs_q", f"q must lie in [2, 6], got {q}")
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("delta", "must be > 0")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigError("sweep.axis", f"unknown axis {self.sweep_axis!r}")
            object.__setattr__(self, "sweep_axis", SWEEP_AXES[self.sweep_axis])
            if self.quota_schedule is not None and len(self.quota_schedule) != len(self.sweep_values):
                raise ConfigError("sweep.quota_schedule", "length must match sweep values")
            # validate every point eagerly so infeasible sweeps fail before any trial
            for _, _, cfg in self.points():
                cfg._check_quota()
        else:
            self._check_quota()

    def _check_quota(self):
        if self.quota < 1 or self.n_ur * self.quota < self.n_ut:
            raise InfeasibleConfigError(
                "quota", f"M*Q = {self.n_ur}*{self.quota} < N = {self.n_ut}")

    @property
    def schemes(self) -> list[tuple[str, str]]:
        return [(a, b) for a in self.stage1 for b in self.stage2]

    def at(self, axis: str, value: float, quota: int | None = None) -> ExperimentConfig:
        """Return a single-point copy with ``axis`` set to ``value``."""
        axis = SWEEP_AXES.get(axis, axis)
        p = self.params
        changes: dict = {"sweep_axis": None, "sweep_values": (), "quota_schedule": None}
        if axis == "N":
            changes["n_ut"] = int(value)
        elif axis == "M":
            changes["n_ur"] = int(value)
        elif axis == "S":
            changes["n_ue"] = int(value)
        elif axis == "Q":
            changes["quota"] = int(value)
        elif axis == "P0":
            changes["params"] = replace(p, power_budget=dbm_to_watts(value))
        elif axis == "gamma":
            changes["params"] = replace(p, snr_threshold=db_to_linear(value))
        elif axis == "noise":
            changes["params"] = replace(p, noise_power=dbm_to_watts(value))
        elif axis == "alpha":
            changes["params"] = replace(p, path_loss_exponent=float(value))
        else:
            raise ConfigError("sweep.axis", f"unknown axis {axis!r}")
        if quota is not None:
            changes["quota"] = int(quota)
        return replace(self, **changes)

    def points(self) -> Iterator[tuple[int, float, ExperimentConfig]]:
        """Yield ``(index, sweep_value, single_point_config)``.

        A config without a sweep is a single point labelled by its UT count.
        """
        if self.sweep_axis is None:
            yield 0, float(self.n_ut), self
            return
        for idx, value in enumerate(self.sweep_values):
            quota = self.quota_schedule[idx] if self.quota_schedule else None
            yield idx, float(value), self.at(self.sweep_axis, value, quota)
