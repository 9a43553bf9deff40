"""Append-only decision and sensor log formats.

Both logs are line-delimited JSON with a mandatory first-line header. The
header pins the format name, version, corridor name/digest, and the control
period; every subsequent line is one record. Serialization is canonical
(sorted keys, no whitespace) so identical runs produce byte-identical files,
which is what the replay-determinism guarantee is checked against.

Decision record fields:
    tick, t_s, gantry, raw, sm, mslc, final, attr,
    obs {v, o, v_up, o_up, a_down}, max

Sensor record fields:
    t_s, sensor, speed [per lane], volume [per lane], occ [per lane]
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corridor import CorridorConfig
from .guards import Decision, ATTRIBUTIONS
from .policy import Observation
from .sim import SensorReading

DECISION_FORMAT = "vsl-decision-log"
SENSOR_FORMAT = "vsl-sensor-log"
LOG_VERSION = 1


class LogFormatError(ValueError):
    """Malformed log file; message carries the offending line number."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- decision logs ---------------------------------------------------------------


def decision_header(corridor: CorridorConfig, period_s: float | None = None) -> dict:
    return {
        "format": DECISION_FORMAT,
        "version": LOG_VERSION,
        "corridor": corridor.name,
        "corridor_digest": corridor.digest(),
        "direction": corridor.direction,
        "period_s": corridor.control_period_s if period_s is None else period_s,
        "gantry_ids": [g.id for g in corridor.gantries],
    }


def decision_to_record(d: Decision, period_s: float, max_limit: int) -> dict:
    # t_s is when the posted limit takes effect: tick k is decided from data
    # through (k+1)*period and displayed until the next record supersedes it.
    return {
        "tick": d.tick,
        "t_s": (d.tick + 1) * period_s,
        "gantry": d.gantry_id,
        "raw": d.raw_policy_action,
        "sm": d.after_sm,
        "mslc": d.after_mslc,
        "final": d.final,
        "attr": d.attribution,
        "obs": d.obs_used.to_dict(),
        "max": max_limit,
    }


def record_to_decision(rec: dict) -> Decision:
    obs = rec["obs"]
    return Decision(
        gantry_id=rec["gantry"],
        tick=rec["tick"],
        raw_policy_action=rec["raw"],
        after_sm=rec["sm"],
        after_mslc=rec["mslc"],
        final=rec["final"],
        attribution=rec["attr"],
        obs_used=Observation(obs["v"], obs["o"], obs["v_up"], obs["o_up"], obs["a_down"]),
    )


class DecisionLogWriter:
    """Streams decision records to an append-only JSONL file."""

    def __init__(self, path, corridor: CorridorConfig, period_s: float | None = None,
                 resume: bool = False):
        self.path = path
        self.period_s = corridor.control_period_s if period_s is None else period_s
        self._maxes = {g.id: g.max_limit for g in corridor.gantries}
        mode = "ab" if resume else "wb"
        self._fh = open(path, mode)
        if not resume:
            self._fh.write((_dumps(decision_header(corridor, self.period_s)) + "\n").encode())
            self._fh.flush()

    def write_tick(self, decisions: list[Decision], effective_max: list[int] | None = None) -> None:
        for i, d in enumerate(decisions):
            mx = effective_max[i] if effective_max is not None else self._maxes[d.gantry_id]
            self._fh.write((_dumps(decision_to_record(d, self.period_s, mx)) + "\n").encode())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class DecisionLog:
    header: dict
    records: list[dict]

    @property
    def period_s(self) -> float:
        return self.header["period_s"]

    @property
    def gantry_ids(self) -> list[str]:
        return self.header["gantry_ids"]

    def ticks(self) -> int:
        return 0 if not self.records else max(r["tick"] for r in self.records) + 1

    def limits_by_tick(self) -> dict[int, dict[str, int]]:
        out: dict[int, dict[str, int]] = {}
        for r in self.records:
            out.setdefault(r["tick"], {})[r["gantry"]] = r["final"]
        return out

    def display_series(self):
        """(effective_times sorted, {gantry_id: finals aligned to times}) for
        display-in-force lookups; a record's t_s is when it starts showing."""
        tick_times: dict[int, float] = {}
        for r in self.records:
            tick_times[r["tick"]] = r["t_s"]
        ticks = sorted(tick_times)
        t_index = {t: i for i, t in enumerate(ticks)}
        times = np.array([tick_times[t] for t in ticks], dtype=float)
        finals: dict[str, list] = {g: [None] * len(ticks) for g in self.gantry_ids}
        for r in self.records:
            finals[r["gantry"]][t_index[r["tick"]]] = r["final"]
        return times, finals


def _parse_jsonl(path, expected_format: str) -> tuple[dict, list[dict]]:
    records = []
    with open(path) as fh:
        first = fh.readline()
        if not first.strip():
            raise LogFormatError(f"{path}: empty file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"{path}: line 1: bad header: {exc}") from exc
        if header.get("format") != expected_format:
            raise LogFormatError(f"{path}: line 1: expected format {expected_format!r}")
        if header.get("version") != LOG_VERSION:
            raise LogFormatError(f"{path}: line 1: unsupported version {header.get('version')}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
    return header, records


def read_decision_log(path) -> DecisionLog:
    header, records = _parse_jsonl(path, DECISION_FORMAT)
    for lineno, rec in enumerate(records, start=2):
        missing = {"tick", "gantry", "final", "attr"} - rec.keys()
        if missing:
            raise LogFormatError(f"{path}: line {lineno}: missing fields {sorted(missing)}")
        if rec["attr"] not in ATTRIBUTIONS:
            raise LogFormatError(f"{path}: line {lineno}: unknown attribution {rec['attr']!r}")
    return DecisionLog(header, records)


def write_decision_log(path, corridor: CorridorConfig, decisions_by_tick,
                       period_s: float | None = None) -> None:
    with DecisionLogWriter(path, corridor, period_s) as w:
        for decisions in decisions_by_tick:
            w.write_tick(decisions)


# -- sensor logs -------------------------------------------------------------------


def sensor_header(corridor: CorridorConfig, period_s: float = 30.0) -> dict:
    return {
        "format": SENSOR_FORMAT,
        "version": LOG_VERSION,
        "corridor": corridor.name,
        "corridor_digest": corridor.digest(),
        "period_s": period_s,
        "sensor_ids": [s.id for s in corridor.sensors],
    }


def reading_to_record(r: SensorReading) -> dict:
    return {
        "t_s": r.timestamp_s,
        "sensor": r.sensor_id,
        "speed": list(r.speed_mph),
        "volume": list(r.volume_veh),
        "occ": list(r.occupancy),
    }


def record_to_reading(rec: dict) -> SensorReading:
    return SensorReading(
        sensor_id=rec["sensor"],
        timestamp_s=rec["t_s"],
        speed_mph=tuple(rec["speed"]),
        volume_veh=tuple(rec["volume"]),
        occupancy=tuple(rec["occ"]),
    )


def write_sensor_log(path, corridor: CorridorConfig, readings: list[SensorReading],
                     period_s: float = 30.0) -> None:
    with open(path, "wb") as fh:
        fh.write((_dumps(sensor_header(corridor, period_s)) + "\n").encode())
        for r in readings:
            fh.write((_dumps(reading_to_record(r)) + "\n").encode())


def read_sensor_log(path) -> tuple[dict, list[SensorReading]]:
    header, records = _parse_jsonl(path, SENSOR_FORMAT)
    readings = []
    for lineno, rec in enumerate(records, start=2):
        try:
            readings.append(record_to_reading(rec))
        except (KeyError, TypeError) as exc:
            raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
    return header, readings
