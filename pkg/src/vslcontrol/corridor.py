"""Static corridor description: gantries, sensors, and segment speed limits.

A corridor is a directed stretch of highway instrumented with speed-limit
gantries and roadside radar sensors. All control logic downstream of this
module reasons in "agent index" space, where index 0 is the most downstream
gantry (the first one whose decision is taken during a control sweep), and
in "travel offset" space, where x = 0 is the upstream end of the corridor
and x grows in the direction of travel.

MILEPOST CONVENTIONS
--------------------
Mileposts are the signed highway reference markers. For a westbound (WB)
corridor, mileposts decrease in the direction of travel; for eastbound (EB)
they increase. This module is the only place that convention lives; use
``downstream_offset`` and ``travel_offset`` instead of comparing mileposts
directly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import yaml


class CorridorConfigError(ValueError):
    """Raised when a corridor description violates its invariants."""


@dataclass(frozen=True)
class Gantry:
    """One overhead speed-limit display. ``max_limit`` is segment-specific."""

    id: str
    milepost: float
    max_limit: int


@dataclass(frozen=True)
class Sensor:
    """One roadside radar unit reporting per-lane aggregate measurements."""

    id: str
    milepost: float
    lanes: int


@dataclass(frozen=True)
class CorridorConfig:
    name: str
    direction: str                      # "WB" or "EB"
    length_miles: float
    gantries: tuple[Gantry, ...]        # index 0 = most downstream
    sensors: tuple[Sensor, ...]
    lanes: int
    control_period_s: float = 30.0
    min_limit: int = 30
    max_limit_default: int = 70
    action_set: tuple[int, ...] = (30, 40, 50, 60, 70)
    a_diff: int = 10                    # max step-down between consecutive gantries

    def __post_init__(self):
        validate_corridor(self)

    # -- geometry helpers ---------------------------------------------------

    @property
    def sign(self) -> int:
        """+1 if mileposts decrease in the travel direction (WB), else -1."""
        return 1 if self.direction == "WB" else -1

    @property
    def upstream_milepost(self) -> float:
        mps = [g.milepost for g in self.gantries] + [s.milepost for s in self.sensors]
        return max(mps) if self.direction == "WB" else min(mps)

    def downstream_offset(self, from_milepost: float, to_milepost: float) -> float:
        """Miles by which ``to`` lies downstream of ``from`` (negative = upstream)."""
        return self.sign * (from_milepost - to_milepost)

    def travel_offset(self, milepost: float) -> float:
        """Distance in miles from the corridor's upstream end, along travel."""
        return self.sign * (self.upstream_milepost - milepost)

    def milepost_at(self, travel_x: float) -> float:
        return self.upstream_milepost - self.sign * travel_x

    def gantry_travel_offsets(self) -> list[float]:
        return [self.travel_offset(g.milepost) for g in self.gantries]

    def digest(self) -> str:
        """Stable content hash used to pin logs and snapshots to a corridor."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_corridor(config: CorridorConfig) -> None:
    if config.direction not in ("WB", "EB"):
        raise CorridorConfigError(f"direction must be WB or EB, got {config.direction!r}")
    if config.length_miles <= 0:
        raise CorridorConfigError("length_miles must be positive")
    if config.lanes < 1:
        raise CorridorConfigError("lanes must be >= 1")
    if not config.gantries:
        raise CorridorConfigError("corridor has no gantries")

    acts = config.action_set
    if any(a % 10 != 0 for a in acts) or list(acts) != sorted(set(acts)):
        raise CorridorConfigError("action_set must be strictly increasing multiples of 10")
    if acts[0] != config.min_limit or acts[-1] != config.max_limit_default:
        raise CorridorConfigError("action_set must span [min_limit, max_limit_default]")

    # Gantries must be stored most-downstream-first. For WB (travel toward
    # decreasing milepost) that is ascending milepost order, for EB descending.
    mps = [g.milepost for g in config.gantries]
    expected = sorted(mps) if config.direction == "WB" else sorted(mps, reverse=True)
    if mps != expected:
        raise CorridorConfigError("gantries must be ordered most-downstream-first")

    for g in config.gantries:
        if not (config.min_limit <= g.max_limit <= config.max_limit_default):
            raise CorridorConfigError(
                f"gantry {g.id}: max_limit {g.max_limit} outside "
                f"[{config.min_limit}, {config.max_limit_default}]"
            )

    for s in config.sensors:
        x = config.travel_offset(s.milepost)
        if x < -1e-9 or x > config.length_miles + 1e-9:
            raise CorridorConfigError(f"sensor {s.id} at MM {s.milepost} outside corridor extent")
    for g in config.gantries:
        x = config.travel_offset(g.milepost)
        if x < -1e-9 or x > config.length_miles + 1e-9:
            raise CorridorConfigError(f"gantry {g.id} at MM {g.milepost} outside corridor extent")


# -- sensor assignment -------------------------------------------------------

SENSOR_FALLBACK_RADIUS_MI = 0.3


def assign_critical_sensor(config: CorridorConfig, gantry: Gantry) -> str:
    """Pick the sensor that feeds a gantry's controller.

    Preference is the sensor with the smallest nonnegative downstream offset
    from the gantry, provided it lies within 0.3 miles downstream. Real
    deployments place these 0 to 0.2 miles downstream; the 0.3-mile radius
    absorbs the actual sensor spacing. If no such sensor exists the nearest
    sensor overall is used so that assignment stays total.
    """
    if not config.sensors:
        raise CorridorConfigError("corridor has no sensors")
    best_id, best_off = None, None
    for s in config.sensors:
        off = config.downstream_offset(gantry.milepost, s.milepost)
        if -1e-9 <= off <= SENSOR_FALLBACK_RADIUS_MI and (best_off is None or off < best_off):
            best_id, best_off = s.id, off
    if best_id is not None:
        return best_id
    nearest = min(config.sensors, key=lambda s: abs(config.downstream_offset(gantry.milepost, s.milepost)))
    return nearest.id


def critical_sensor_map(config: CorridorConfig) -> list[str]:
    """Sensor id per gantry, aligned with gantry (agent) indices."""
    return [assign_critical_sensor(config, g) for g in config.gantries]


def upstream_neighbor(config: CorridorConfig, gantry_index: int) -> int | None:
    """Index of the next gantry against the travel direction, None at the end.

    Indices are 0-based with 0 the most downstream gantry.
    """
    n = len(config.gantries)
    if not 0 <= gantry_index < n:
        raise IndexError(f"gantry index {gantry_index} out of range 0..{n - 1}")
    return gantry_index + 1 if gantry_index + 1 < n else None


# -- file format --------------------------------------------------------------

def corridor_to_dict(config: CorridorConfig) -> dict:
    d = asdict(config)
    d["gantries"] = [asdict(g) for g in config.gantries]
    d["sensors"] = [asdict(s) for s in config.sensors]
    d["action_set"] = list(config.action_set)
    return d


def corridor_from_dict(d: dict) -> CorridorConfig:
    try:
        gantries = tuple(Gantry(**g) for g in d["gantries"])
        sensors = tuple(Sensor(**s) for s in d["sensors"])
        kwargs = {k: v for k, v in d.items() if k not in ("gantries", "sensors", "action_set")}
        action_set = tuple(int(a) for a in d.get("action_set", (30, 40, 50, 60, 70)))
        return CorridorConfig(gantries=gantries, sensors=sensors, action_set=action_set, **kwargs)
    except (KeyError, TypeError) as exc:
        raise CorridorConfigError(f"malformed corridor config: {exc}") from exc


def load_corridor(path) -> CorridorConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise CorridorConfigError(f"{path}: not a corridor config document")
    return corridor_from_dict(data)


def save_corridor(config: CorridorConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(corridor_to_dict(config), fh, sort_keys=False)


# -- shipped deployment-scale layout ------------------------------------------

def build_i24_westbound() -> CorridorConfig:
    """The deployment-scale corridor: 17 WB miles, 34 gantries, 60 sensors.

    Gantries sit every half mile; sensors every 0.3 miles, phased so each
    gantry finds a sensor 0 to 0.2 miles downstream. The six most downstream
    gantries carry reduced maximum limits (55/65 mph), which breaks the
    homogeneous-agent assumption there and keeps the max-limit correction
    guard busy under free flow.
    """
    gantries = []
    for k in range(34):
        mp = 53.25 + 0.5 * k
        if k < 3:
            max_limit = 55
        elif k < 6:
            max_limit = 65
        else:
            max_limit = 70
        gantries.append(Gantry(id=f"G{k + 1:02d}", milepost=round(mp, 2), max_limit=max_limit))

    sensor_mps = [53.05 + 0.3 * j for j in range(57)]
    sensor_mps += [53.00, 69.95, 70.00]     # corridor end caps
    sensor_mps.sort()
    sensors = tuple(
        Sensor(id=f"S{j + 1:02d}", milepost=round(mp, 2), lanes=4) for j, mp in enumerate(sensor_mps)
    )

    return CorridorConfig(
        name="i24_wb_17mi",
        direction="WB",
        length_miles=17.0,
        gantries=tuple(gantries),
        sensors=sensors,
        lanes=4,
    )
