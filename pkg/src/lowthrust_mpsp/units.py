"""Canonical units and the mission scenario.

Everything downstream works in heliocentric canonical units where the
gravitational parameter is exactly 1.  Physical inputs are converted once,
when the scenario is loaded.

Physical unit conventions used by :func:`to_canonical` / :func:`from_canonical`:

============  ==========
tag           unit
============  ==========
length        km
time          s
velocity      km/s
mass          kg
force         N
acceleration  m/s^2
============  ==========
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SECONDS_PER_DAY = 86400.0

UNIT_TAGS = ("length", "time", "velocity", "mass", "force", "acceleration")


class ScenarioError(ValueError):
    """Raised for an invalid or incomplete scenario definition."""


@dataclass(frozen=True)
class UnitSystem:
    """Canonical reference units.

    The velocity unit is derived as ``length_unit / time_unit`` so that the
    unit system is self-consistent to machine precision.
    """

    length_unit: float  # km per LU
    time_unit: float  # s per TU
    mass_unit: float  # kg per MU
    gravity_sea_level: float = 9.80665  # m/s^2
    velocity_unit: float = field(init=False)  # km/s per VU

    def __post_init__(self):
        for name in ("length_unit", "time_unit", "mass_unit", "gravity_sea_level"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0.0:
                raise ScenarioError(f"unit {name} must be strictly positive, got {val}")
        object.__setattr__(self, "velocity_unit", self.length_unit / self.time_unit)

    @property
    def force_unit(self) -> float:
        """Newtons per canonical force unit (MU * LU / TU^2)."""
        return self.mass_unit * self.length_unit * 1e3 / self.time_unit**2

    @property
    def acceleration_unit(self) -> float:
        """m/s^2 per canonical acceleration unit."""
        return self.length_unit * 1e3 / self.time_unit**2

    def scale(self, tag: str) -> float:
        try:
            return {
                "length": self.length_unit,
                "time": self.time_unit,
                "velocity": self.velocity_unit,
                "mass": self.mass_unit,
                "force": self.force_unit,
                "acceleration": self.acceleration_unit,
            }[tag]
        except KeyError:
            raise ScenarioError(f"unknown unit tag {tag!r}; expected one of {UNIT_TAGS}") from None


def to_canonical(q, tag: str, units: UnitSystem):
    """Convert a physical scalar or array (see module table) to canonical units."""
    scale = units.scale(tag)
    return np.asarray(q, dtype=float) / scale if np.ndim(q) else float(q) / scale


def from_canonical(q, tag: str, units: UnitSystem):
    """Inverse of :func:`to_canonical`."""
    scale = units.scale(tag)
    return np.asarray(q, dtype=float) * scale if np.ndim(q) else float(q) * scale


@dataclass(frozen=True)
class Scenario:
    """A fixed-time rendezvous problem in canonical units (mu = 1)."""

    units: UnitSystem
    t0: float
    tf: float
    r0: np.ndarray
    v0: np.ndarray
    m0: float
    rf: np.ndarray
    vf: np.ndarray
    thrust_max: float
    exhaust_velocity: float
    isp: float  # seconds, kept for reporting
    mu: float = 1.0
    name: str = ""

    def __post_init__(self):
        for name in ("r0", "v0", "rf", "vf"):
            arr = np.array(getattr(self, name), dtype=float).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.tf > self.t0:
            raise ScenarioError("final time must exceed initial time (tf <= t0)")
        if not self.m0 > 0.0:
            raise ScenarioError("non-positive initial mass")
        if not self.thrust_max > 0.0:
            raise ScenarioError("non-positive maximum thrust")
        if not self.exhaust_velocity > 0.0:
            raise ScenarioError("non-positive exhaust velocity")
        if self.mu != 1.0:
            raise ScenarioError("canonical gravitational parameter must be 1")

    @property
    def x0(self) -> np.ndarray:
        """Initial state [r, v, m]."""
        return np.concatenate([self.r0, self.v0, [self.m0]])

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)


_REQUIRED = ("g0_m_s2", "LU_km", "TU_s", "MU_kg", "m0_kg", "Tmax_N", "Isp_s",
             "r0_LU", "v0_VU", "rf_LU", "vf_VU")


def _parse_date(text: str) -> _dt.date:
    try:
        return _dt.date.fromisoformat(str(text)[:10])
    except ValueError:
        raise ScenarioError(f"cannot parse epoch {text!r}; expected YYYY-MM-DD") from None


def flight_days(config: Mapping[str, Any]) -> float:
    """Time of flight in days, from ``tof_days`` or the two calendar epochs."""
    if "tof_days" in config:
        return float(config["tof_days"])
    if "depart_epoch" in config and "arrive_epoch" in config:
        dep = _parse_date(config["depart_epoch"])
        arr = _parse_date(config["arrive_epoch"])
        return float((arr - dep).days)
    raise ScenarioError("missing field: tof_days or depart_epoch/arrive_epoch")


def load_scenario(config: Mapping[str, Any] | str | Path | None = None) -> Scenario:
    """Build a canonical :class:`Scenario` from a JSON document.

    ``config`` may be a mapping, a path to a JSON file, or None for the
    bundled Earth-L2 to Apophis mission.
    """
    if config is None:
        text = resources.files("lowthrust_mpsp").joinpath("data/apophis.json").read_text()
        config = json.loads(text)
    elif isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text())

    missing = [key for key in _REQUIRED if key not in config]
    if missing:
        raise ScenarioError(f"missing field(s): {', '.join(missing)}")

    if float(config["Isp_s"]) <= 0.0:
        raise ScenarioError("non-positive specific impulse")
    if float(config["Tmax_N"]) <= 0.0:
        raise ScenarioError("non-positive maximum thrust")
    if float(config["m0_kg"]) <= 0.0:
        raise ScenarioError("non-positive initial mass")
    if "mu_km3_s2" in config and float(config["mu_km3_s2"]) <= 0.0:
        raise ScenarioError("non-positive gravitational parameter")

    units = UnitSystem(
        length_unit=float(config["LU_km"]),
        time_unit=float(config["TU_s"]),
        mass_unit=float(config["MU_kg"]),
        gravity_sea_level=float(config["g0_m_s2"]),
    )
    days = flight_days(config)
    if days <= 0.0:
        raise ScenarioError("arrival must be after departure (tf <= t0)")

    isp = float(config["Isp_s"])
    c_km_s = isp * units.gravity_sea_level / 1e3
    return Scenario(
        units=units,
        t0=0.0,
        tf=to_canonical(days * SECONDS_PER_DAY, "time", units),
        r0=np.asarray(config["r0_LU"], dtype=float),
        v0=np.asarray(config["v0_VU"], dtype=float),
        m0=to_canonical(float(config["m0_kg"]), "mass", units),
        rf=np.asarray(config["rf_LU"], dtype=float),
        vf=np.asarray(config["vf_VU"], dtype=float),
        thrust_max=to_canonical(float(config["Tmax_N"]), "force", units),
        exhaust_velocity=to_canonical(c_km_s, "velocity", units),
        isp=isp,
        name=str(config.get("name", "")),
    )


def scenario_to_config(sc: Scenario) -> dict:
    """Serialise a scenario back to the JSON key set accepted by :func:`load_scenario`."""
    u = sc.units
    return {
        "name": sc.name,
        "g0_m_s2": u.gravity_sea_level,
        "LU_km": u.length_unit,
        "TU_s": u.time_unit,
        "MU_kg": u.mass_unit,
        "m0_kg": from_canonical(sc.m0, "mass", u),
        "Tmax_N": from_canonical(sc.thrust_max, "force", u),
        "Isp_s": sc.isp,
        "tof_days": from_canonical(sc.duration, "time", u) / SECONDS_PER_DAY,
        "r0_LU": sc.r0.tolist(),
        "v0_VU": sc.v0.tolist(),
        "rf_LU": sc.rf.tolist(),
        "vf_VU": sc.vf.tolist(),
    }
