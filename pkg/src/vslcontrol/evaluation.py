"""Evaluation machinery: virtual trajectories, warning metrics, attribution
statistics, event response delay, and the five-experiment comparison matrix.

Warning semantics, from the perspective of one virtual vehicle driving
through one pair of consecutive gantries:

  - Situation to be warned: the vehicle's speed drops below the minimum
    limit (30 mph) somewhere between the two gantries. The upstream gantry
    should have displayed 30 at the instant the vehicle passed it.
  - Successful warning: it did. Missed warning: it did not.
  - Warning: a vehicle passes a gantry displaying 30 (counted per passage).
  - False warning: a warning where the vehicle's speed never fell below
    40 mph (minimum limit plus the allowable deviation) before the next
    gantry.

Displayed limits are sampled at the passage instant, closed on the left at
tick boundaries. Vehicles are seeded every 15 seconds per lane and
integrated through the speed field with a 1-second explicit step and a
2 mph floor so they always make progress.

The experiment matrix reproduces the evaluation-design comparison: one
closed-loop run provides the traffic; alternative controllers and input
granularities run open-loop against its recorded streams, exactly one
system at a time affecting the (simulated) road.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .corridor import CorridorConfig, critical_sensor_map
from .guards import Decision, GuardConfig, attribute, max_limit_correct
from .logs import DecisionLog, decision_to_record, decision_header
from .policy import Observation, PolicyParameters
from .speedfield import SpeedField, field_from_readings
from .episode import EpisodeResult, MarlController, run_episode

TRAJECTORY_DT_S = 1.0
TRAJECTORY_FLOOR_MPH = 2.0
SEED_INTERVAL_S = 15.0


# -- virtual trajectories ----------------------------------------------------------


@dataclass
class VirtualTrajectory:
    departure_t_s: float
    lane: int
    t_s: np.ndarray
    x_mi: np.ndarray
    v_mph: np.ndarray           # field speed at the sample, before flooring


def integrate_departures(fld: SpeedField, departures, lane: int = 0,
                         start_x: float | None = None) -> list[VirtualTrajectory]:
    """Integrate a batch of trajectories through a field, vectorized over vehicles.

    All vehicles start at ``start_x`` (default: field origin) at their
    departure times and advance with dx/dt = max(v(x, t), floor) until they
    leave the field in space or time.
    """
    departures = np.asarray(departures, dtype=np.float64)
    if departures.ndim == 0:
        departures = departures[None]
    x_start = fld.x0_mi if start_x is None else start_x
    if not (fld.t0_s <= departures.min() and departures.max() <= fld.t_end_s):
        raise ValueError("departure outside field time extent")
    if not (fld.x0_mi - 1e-9 <= x_start <= fld.x_end_mi):
        raise ValueError("start position outside field extent")

    n = len(departures)
    n_steps = int(math.floor((fld.t_end_s - departures.min()) / TRAJECTORY_DT_S)) + 2
    xs = np.full((n, n_steps), np.nan)
    vs = np.full((n, n_steps), np.nan)
    ts = np.full((n, n_steps), np.nan)

    cur_x = np.full(n, np.nan)
    done = np.zeros(n, dtype=bool)
    col = np.zeros(n, dtype=int)
    t = departures.min()
    for _ in range(n_steps):
        starting = (~done) & np.isnan(cur_x) & (departures <= t + 1e-9)
        cur_x[starting] = x_start
        active = (~done) & ~np.isnan(cur_x)
        if active.any():
            v = fld.sample(t, cur_x[active], lane)
            idx = np.flatnonzero(active)
            ts[idx, col[idx]] = t
            xs[idx, col[idx]] = cur_x[active]
            vs[idx, col[idx]] = v
            col[idx] += 1
            step_v = np.maximum(v, TRAJECTORY_FLOOR_MPH)
            cur_x[idx] = cur_x[idx] + step_v * TRAJECTORY_DT_S / 3600.0
            finished = idx[cur_x[idx] >= fld.x_end_mi - 1e-12]
            # Clip the crossing sample onto the boundary so passages at the
            # last gantry interpolate cleanly.
            for i in finished:
                j = col[i]
                if 1 <= j < n_steps:
                    v_i = max(vs[i, j - 1], TRAJECTORY_FLOOR_MPH)
                    dt_cross = (fld.x_end_mi - xs[i, j - 1]) / (v_i / 3600.0)
                    ts[i, j] = ts[i, j - 1] + dt_cross
                    xs[i, j] = fld.x_end_mi
                    vs[i, j] = fld.sample(ts[i, j], fld.x_end_mi, lane)
                    col[i] += 1
            done[finished] = True
        t += TRAJECTORY_DT_S
        if t > fld.t_end_s + 1e-9:
            break

    out = []
    for i in range(n):
        m = col[i]
        out.append(VirtualTrajectory(float(departures[i]), lane,
                                     ts[i, :m].copy(), xs[i, :m].copy(), vs[i, :m].copy()))
    return out


def virtual_trajectory(fld: SpeedField, depart_t_s: float, lane: int = 0,
                       start_x: float | None = None) -> VirtualTrajectory:
    return integrate_departures(fld, [depart_t_s], lane, start_x)[0]


# -- warning audit -------------------------------------------------------------------


@dataclass
class WarningRecord:
    lane: int
    departure_t_s: float
    gantry_id: str
    passage_t_s: float
    display_mph: float
    segment_min_mph: float
    situation: bool
    successful: bool
    warning: bool
    false_warning: bool


@dataclass
class WarningLedger:
    min_limit: float
    max_deviation: float
    records: list[WarningRecord] = field(default_factory=list)

    def _count(self, pred, lane=None) -> int:
        return sum(1 for r in self.records if pred(r) and (lane is None or r.lane == lane))

    def situations(self, lane=None) -> int:
        return self._count(lambda r: r.situation, lane)

    def successful(self, lane=None) -> int:
        return self._count(lambda r: r.successful, lane)

    def missed(self, lane=None) -> int:
        return self._count(lambda r: r.situation and not r.successful, lane)

    def warnings(self, lane=None) -> int:
        return self._count(lambda r: r.warning, lane)

    def false_warnings(self, lane=None) -> int:
        return self._count(lambda r: r.false_warning, lane)

    def swr(self, lane=None) -> float | None:
        n = self.situations(lane)
        return None if n == 0 else self.successful(lane) / n

    def fwr(self, lane=None) -> float | None:
        n = self.warnings(lane)
        return None if n == 0 else self.false_warnings(lane) / n

    def merge(self, other: "WarningLedger") -> "WarningLedger":
        return WarningLedger(self.min_limit, self.max_deviation, self.records + other.records)

    def summary(self) -> dict:
        lanes = sorted({r.lane for r in self.records})
        def pct(x):
            return None if x is None else round(100.0 * x, 2)
        return {
            "situations": self.situations(),
            "successful": self.successful(),
            "warnings": self.warnings(),
            "false_warnings": self.false_warnings(),
            "swr_pct": pct(self.swr()),
            "fwr_pct": pct(self.fwr()),
            "per_lane": {ln: {"swr_pct": pct(self.swr(ln)), "fwr_pct": pct(self.fwr(ln))}
                         for ln in lanes},
        }


class _DisplayLookup:
    """Display-in-force per gantry at arbitrary times, from a decision log."""

    def __init__(self, log: DecisionLog, corridor: CorridorConfig):
        self.times, finals = log.display_series()
        maxes = {g.id: g.max_limit for g in corridor.gantries}
        self.series = {}
        for gid, vals in finals.items():
            arr = np.array([maxes[gid] if v is None else v for v in vals], dtype=float)
            self.series[gid] = arr
        self.defaults = maxes

    def at(self, gantry_id: str, t_s: float) -> float:
        # Closed on the left: a record with t_s == t is already displayed.
        i = int(np.searchsorted(self.times, t_s, side="right")) - 1
        if i < 0:
            return float(self.defaults[gantry_id])
        return float(self.series[gantry_id][i])


def _gantries_in_field(corridor: CorridorConfig, fld: SpeedField):
    """(id, travel_x) of gantries inside the field, in driver (ascending x) order."""
    pairs = [(g.id, corridor.travel_offset(g.milepost)) for g in corridor.gantries]
    pairs = [(gid, x) for gid, x in pairs if fld.x0_mi - 1e-9 <= x <= fld.x_end_mi + 1e-9]
    return sorted(pairs, key=lambda p: p[1])


def warning_audit(fld: SpeedField, log: DecisionLog, corridor: CorridorConfig,
                  min_limit: float | None = None, max_deviation: float = 10.0,
                  seed_interval_s: float = SEED_INTERVAL_S,
                  per_display_tick: bool = False) -> WarningLedger:
    """Audit a decision log against a speed field.

    Vehicles are seeded per lane every ``seed_interval_s`` at the field
    origin. Counting is per vehicle passage by default; with
    ``per_display_tick`` a Warning is instead one (gantry, tick) posting the
    minimum limit, false only if every passing vehicle stayed above the
    deviation band.
    """
    min_limit = float(corridor.min_limit if min_limit is None else min_limit)
    gantries = _gantries_in_field(corridor, fld)
    if len(gantries) < 2:
        raise ValueError("field covers fewer than two gantries")
    lookup = _DisplayLookup(log, corridor)
    ledger = WarningLedger(min_limit, max_deviation)

    last_depart = fld.t_end_s - 1.0
    departures = np.arange(fld.t0_s, last_depart, seed_interval_s)
    for lane in range(fld.lanes):
        trajectories = integrate_departures(fld, departures, lane)
        for traj in trajectories:
            _audit_trajectory(traj, gantries, lookup, ledger, min_limit, max_deviation)

    if per_display_tick:
        _collapse_to_display_ticks(ledger, lookup, gantries, min_limit)
    return ledger


def _audit_trajectory(traj: VirtualTrajectory, gantries, lookup: _DisplayLookup,
                      ledger: WarningLedger, min_limit: float, max_deviation: float) -> None:
    xs, ts, vs = traj.x_mi, traj.t_s, traj.v_mph
    if len(xs) < 2:
        return
    cross_idx = np.searchsorted(xs, [x for _, x in gantries], side="left")
    cross_t = []
    for (gid, gx), idx in zip(gantries, cross_idx):
        if idx >= len(xs):
            cross_t.append(None)        # never reached this gantry
            continue
        if idx == 0:
            cross_t.append(float(ts[0]))
            continue
        x0, x1 = xs[idx - 1], xs[idx]
        t0, t1 = ts[idx - 1], ts[idx]
        w = 0.0 if x1 == x0 else (gx - x0) / (x1 - x0)
        cross_t.append(float(t0 + w * (t1 - t0)))

    for j in range(len(gantries) - 1):
        gid_up, x_up = gantries[j]
        _, x_down = gantries[j + 1]
        t_pass, t_next = cross_t[j], cross_t[j + 1]
        if t_pass is None or t_next is None:
            continue                     # segment not fully traversed
        seg = (xs >= x_up - 1e-12) & (xs <= x_down + 1e-12)
        if not seg.any():
            continue
        seg_min = float(vs[seg].min())
        display = lookup.at(gid_up, t_pass)
        situation = seg_min < min_limit
        warning = display == min_limit
        ledger.records.append(WarningRecord(
            lane=traj.lane, departure_t_s=traj.departure_t_s, gantry_id=gid_up,
            passage_t_s=t_pass, display_mph=display, segment_min_mph=seg_min,
            situation=situation,
            successful=situation and warning,
            warning=warning,
            false_warning=warning and seg_min > min_limit + max_deviation,
        ))


def _collapse_to_display_ticks(ledger: WarningLedger, lookup: _DisplayLookup,
                               gantries, min_limit: float) -> None:
    """Recount warnings per (gantry, tick) rather than per passage."""
    per_tick: dict[tuple, list[WarningRecord]] = {}
    for r in ledger.records:
        i = int(np.searchsorted(lookup.times, r.passage_t_s, side="right")) - 1
        per_tick.setdefault((r.gantry_id, i), []).append(r)
    upstream_ids = {gid for gid, _ in gantries[:-1]}
    collapsed: list[WarningRecord] = []
    for (gid, i), rs in per_tick.items():
        collapsed.extend(replace(r, warning=False, false_warning=False) for r in rs)
    for gid in upstream_ids:
        for i in range(len(lookup.times)):
            if lookup.series[gid][i] != min_limit:
                continue
            passed = [r for r in per_tick.get((gid, i), []) if r.warning]
            if not passed:
                continue
            all_false = all(r.false_warning for r in passed)
            collapsed.append(replace(passed[0], situation=False, successful=False,
                                     warning=True, false_warning=all_false))
    ledger.records = collapsed


# -- attribution statistics ------------------------------------------------------------


def attribution_report(log: DecisionLog, corridor: CorridorConfig,
                       include_reduced_max: bool = True,
                       peak_hours: tuple[float, float] | None = None,
                       day_length_s: float = 86400.0) -> dict:
    """Per-day mean and std of the POLICY/SM/MSLC/DB decision shares.

    ``include_reduced_max=False`` drops gantries whose configured maximum is
    below the corridor default (mirroring the exclude rows of effectiveness
    tables); ``peak_hours=(h0, h1)`` keeps only decisions whose effect time
    falls in that hour-of-day range.
    """
    reduced = {g.id for g in corridor.gantries if g.max_limit < corridor.max_limit_default}
    rows: dict[int, dict[str, int]] = {}
    total = 0
    for r in log.records:
        if not include_reduced_max and r["gantry"] in reduced:
            continue
        if peak_hours is not None:
            hour = (r["t_s"] % day_length_s) / 3600.0
            if not peak_hours[0] <= hour < peak_hours[1]:
                continue
        day = int(r["t_s"] // day_length_s)
        row = rows.setdefault(day, {a: 0 for a in ("POLICY", "SM", "MSLC", "DB")})
        row[r["attr"]] += 1
        total += 1

    shares = {a: [] for a in ("POLICY", "SM", "MSLC", "DB")}
    for day, counts in sorted(rows.items()):
        n = sum(counts.values())
        for a in shares:
            shares[a].append(100.0 * counts[a] / n if n else 0.0)
    report = {"days": len(rows), "decisions": total}
    for a, vals in shares.items():
        arr = np.asarray(vals)
        report[a] = {"mean_pct": float(arr.mean()) if len(arr) else 0.0,
                     "std_pct": float(arr.std()) if len(arr) else 0.0}
    report["share_sum_pct"] = float(sum(report[a]["mean_pct"] for a in shares))
    return report


# -- congestion events and response delay ------------------------------------------------


@dataclass(frozen=True)
class CongestionEvent:
    id: str
    onset_t_s: float
    location_mi: float          # travel offset
    end_t_s: float
    detected_by: str = "ground_truth"


def detect_events(fld: SpeedField, threshold_mph: float = 30.0,
                  min_duration_s: float = 60.0, min_length_mi: float = 0.1,
                  recurrent_masks: tuple = ()) -> list[CongestionEvent]:
    """Connected sub-threshold regions of the ground-truth field.

    ``recurrent_masks`` is a tuple of (t0, t1, x0, x1) boxes that are blanked
    before labeling, standing in for manually excluded recurring congestion.
    Onset is the earliest grid time of a region; its location is the mean
    position of the region's cells in that first row.
    """
    slow = fld.lane_min() < threshold_mph
    for t0, t1, x0, x1 in recurrent_masks:
        ti = ((fld.times() >= t0) & (fld.times() <= t1))
        xi = ((fld.xs() >= x0) & (fld.xs() <= x1))
        slow[np.ix_(ti, xi)] = False
    labels, n = ndimage.label(slow, structure=np.ones((3, 3), dtype=int))
    events = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        duration = (rows.max() - rows.min() + 1) * fld.dt_s
        extent = (cols.max() - cols.min() + 1) * fld.dx_mi
        if duration < min_duration_s or extent < min_length_mi:
            continue
        first_row = rows.min()
        loc = fld.x0_mi + cols[rows == first_row].mean() * fld.dx_mi
        events.append(CongestionEvent(
            id=f"E{len(events) + 1:03d}",
            onset_t_s=fld.t0_s + first_row * fld.dt_s,
            location_mi=float(loc),
            end_t_s=fld.t0_s + rows.max() * fld.dt_s,
        ))
    return events


def response_delay(events: list[CongestionEvent], log: DecisionLog,
                   corridor: CorridorConfig, radius_mi: float = 1.0,
                   horizon_s: float | None = None) -> dict:
    """Per-event delay until any gantry near the event posts below its max."""
    times, finals = log.display_series()
    maxes = {g.id: g.max_limit for g in corridor.gantries}
    gx = {g.id: corridor.travel_offset(g.milepost) for g in corridor.gantries}
    horizon = horizon_s if horizon_s is not None else (times[-1] if len(times) else 0.0)

    per_event = []
    for ev in events:
        nearby = [gid for gid in log.gantry_ids if abs(gx[gid] - ev.location_mi) <= radius_mi]
        delay, censored = None, True
        for i, t in enumerate(times):
            if t < ev.onset_t_s:
                continue
            if any(finals[gid][i] is not None and finals[gid][i] < maxes[gid] for gid in nearby):
                delay, censored = t - ev.onset_t_s, False
                break
        per_event.append({"event": ev.id, "onset_t_s": ev.onset_t_s,
                          "delay_s": delay if delay is not None else horizon - ev.onset_t_s,
                          "censored": censored, "gantries_considered": len(nearby)})

    measured = [e["delay_s"] for e in per_event if not e["censored"]]
    arr = np.asarray(measured, dtype=float)
    stats = {"n_events": len(per_event), "n_censored": sum(e["censored"] for e in per_event)}
    if len(arr):
        stats.update(mean_s=float(arr.mean()), std_s=float(arr.std()),
                     q1_s=float(np.percentile(arr, 25)), median_s=float(np.percentile(arr, 50)),
                     q3_s=float(np.percentile(arr, 75)), max_s=float(arr.max()))
    return {"events": per_event, "stats": stats}


# -- controllers used in comparisons -------------------------------------------------------


def quantize_to_action(v_mph: float, action_set=(30, 40, 50, 60, 70)) -> int:
    """Nearest legal limit to the measured speed; midpoints round up."""
    lo, hi = action_set[0], action_set[-1]
    q = int(math.floor(v_mph / 10.0 + 0.5)) * 10
    return int(min(max(q, lo), hi))


class RuleBasedController:
    """Benchmark controller: display a legal limit reflecting measured speed.

    The displayed value chases the quantized measurement with production-style
    display stability: the target is the quantization of the highest of the
    two most recent window speeds (a sustained drop is required before the
    display starts down), and the display moves at most one 10-mph step per
    control period. That transition behavior is what gives the deployed
    rule-based system its characteristic multi-minute response to sudden
    slowdowns; an instantly-jumping quantizer would not match it.
    """

    def __init__(self, guard_config: GuardConfig | None = None):
        self.guard_config = guard_config or GuardConfig()
        self._prev_speed: dict[str, float] = {}
        self._display: dict[str, int] = {}

    def decide(self, windows, corridor, tick, degraded=False) -> list[Decision]:
        decisions = []
        for i, g in enumerate(corridor.gantries):
            w = windows[i]
            current = self._display.get(g.id, g.max_limit)
            if degraded:
                raw = corridor.max_limit_default
            else:
                smoothed = max(w.speed_mph, self._prev_speed.get(g.id, w.speed_mph))
                target = quantize_to_action(smoothed, corridor.action_set)
                if target < current:
                    raw = current - 10
                elif target > current:
                    raw = current + 10
                else:
                    raw = current
                self._prev_speed[g.id] = w.speed_mph
            final = max_limit_correct(raw, g.max_limit)
            self._display[g.id] = final
            obs = Observation(w.speed_mph, w.occupancy, w.speed_mph, w.occupancy,
                              float(corridor.max_limit_default))
            decisions.append(Decision(g.id, tick, raw, raw, final, final,
                                      attribute(raw, raw, final, final), obs))
        return decisions


def perfect_foresight_log(fld: SpeedField, corridor: CorridorConfig,
                          min_limit: float | None = None,
                          seed_interval_s: float = SEED_INTERVAL_S,
                          period_s: float = 1.0) -> DecisionLog:
    """Oracle decision log built from the ground-truth field itself.

    Posts the minimum limit at a gantry exactly while a vehicle whose next
    segment dips below the minimum limit is passing, at a fine display
    period, and the default maximum otherwise. By construction it warns
    every situation and never falsely.
    """
    min_limit = float(corridor.min_limit if min_limit is None else min_limit)
    gantries = _gantries_in_field(corridor, fld)
    n_ticks = int(math.ceil((fld.t_end_s - fld.t0_s) / period_s))
    display = {gid: np.full(n_ticks, float(corridor.max_limit_default)) for gid, _ in gantries}

    departures = np.arange(fld.t0_s, fld.t_end_s - 1.0, seed_interval_s)
    for lane in range(fld.lanes):
        for traj in integrate_departures(fld, departures, lane):
            xs, ts, vs = traj.x_mi, traj.t_s, traj.v_mph
            if len(xs) < 2:
                continue
            cross_idx = np.searchsorted(xs, [x for _, x in gantries], side="left")
            for j in range(len(gantries) - 1):
                gid, gx = gantries[j]
                _, gx2 = gantries[j + 1]
                i0, i1 = cross_idx[j], cross_idx[j + 1]
                if i0 >= len(xs) or i1 >= len(xs):
                    continue
                seg = (xs >= gx - 1e-12) & (xs <= gx2 + 1e-12)
                if not seg.any() or vs[seg].min() >= min_limit:
                    continue
                if i0 == 0:
                    t_pass = ts[0]
                else:
                    x0, x1 = xs[i0 - 1], xs[i0]
                    w = 0.0 if x1 == x0 else (gx - x0) / (x1 - x0)
                    t_pass = ts[i0 - 1] + w * (ts[i0] - ts[i0 - 1])
                k = int((t_pass - fld.t0_s) / period_s)
                if 0 <= k < n_ticks:
                    display[gid][k] = min_limit

    header = decision_header(corridor, period_s)
    gantry_max = {g.id: g.max_limit for g in corridor.gantries}
    records = []
    for k in range(n_ticks):
        t_eff = fld.t0_s + k * period_s
        for gid, _ in gantries:
            v = int(display[gid][k])
            records.append({"tick": k, "t_s": t_eff, "gantry": gid, "raw": v, "sm": v,
                            "mslc": v, "final": v, "attr": "POLICY",
                            "obs": {"v": 0.0, "o": 0.0, "v_up": 0.0, "o_up": 0.0, "a_down": 70.0},
                            "max": gantry_max[gid]})
    return DecisionLog(header, records)


# -- experiment matrix -----------------------------------------------------------------


def decisions_to_log(corridor: CorridorConfig, decisions_by_tick,
                     period_s: float | None = None) -> DecisionLog:
    period = corridor.control_period_s if period_s is None else period_s
    maxes = {g.id: g.max_limit for g in corridor.gantries}
    records = [decision_to_record(d, period, maxes[d.gantry_id])
               for tick in decisions_by_tick for d in tick]
    return DecisionLog(decision_header(corridor, period), records)


def open_loop_decisions(episode: EpisodeResult, controller) -> DecisionLog:
    """Re-run a different controller on an episode's recorded windows."""
    decisions = [controller.decide(w, episode.corridor, t)
                 for t, w in enumerate(episode.windows)]
    return decisions_to_log(episode.corridor, decisions)


class FineInputMarlController(MarlController):
    """MARL pipeline fed speed from the fine field instead of sensor windows.

    Occupancy still comes from the radar windows (the fine source measures
    speed only). ``lane=None`` averages the field across lanes.
    """

    def __init__(self, policy, guard_config, fld: SpeedField, corridor: CorridorConfig,
                 lane: int | None = None):
        super().__init__(policy, guard_config)
        self.field = fld
        self.lane = lane
        sensor_x = {s.id: corridor.travel_offset(s.milepost) for s in corridor.sensors}
        self._x = [sensor_x[sid] for sid in critical_sensor_map(corridor)]

    def _fine_speed(self, x: float, t_s: float) -> float:
        x = float(np.clip(x, self.field.x0_mi, self.field.x_end_mi))
        t = float(np.clip(t_s, self.field.t0_s, self.field.t_end_s))
        if self.lane is not None:
            return float(self.field.sample(t, x, self.lane))
        return float(np.mean([self.field.sample(t, x, ln) for ln in range(self.field.lanes)]))

    def decide(self, windows, corridor, tick, degraded=False):
        t_s = (tick + 1) * corridor.control_period_s
        refined = [replace(w, speed_mph=self._fine_speed(x, t_s))
                   for w, x in zip(windows, self._x)]
        return super().decide(refined, corridor, tick, degraded)


def run_experiment_matrix(policy: PolicyParameters, scenarios,
                          guard_config: GuardConfig | None = None,
                          duration_s: float = 2700.0,
                          audit_kwargs: dict | None = None) -> dict:
    """The five-way comparison over a common set of simulated episodes.

      1  MARL, radar control input, radar-reconstructed evaluation field
      2  MARL, radar control input, ground-truth evaluation field
      3  rule-based benchmark (open loop on the same traffic), ground truth
      4  MARL, fine lane-average control input (open loop), ground truth
      5  MARL, fine lane-specific input and per-lane limits, ground truth

    ``scenarios`` is a list of (corridor, sim_config) pairs; one closed-loop
    MARL run per scenario provides the traffic every variant is measured on.
    Returns per-experiment pooled ledgers plus per-episode summaries.
    """
    guard_config = guard_config or GuardConfig()
    audit_kwargs = audit_kwargs or {}
    ledgers = {k: None for k in (1, 2, 3, 4, 5)}
    per_episode = {k: [] for k in (1, 2, 3, 4, 5)}

    def pool(k, ledger):
        ledgers[k] = ledger if ledgers[k] is None else ledgers[k].merge(ledger)
        per_episode[k].append(ledger.summary())

    for corridor, sim_config in scenarios:
        marl = MarlController(policy, guard_config)
        episode = run_episode(corridor, sim_config, marl, duration_s, guard_config)
        truth = episode.truth_field(lane_resolved=True)
        log_marl = decisions_to_log(corridor, episode.decisions)

        coarse = field_from_readings(episode.readings, corridor, 0.0, duration_s,
                                     period_s=sim_config.sensor_period_s, per_lane=True)
        pool(1, warning_audit(coarse, log_marl, corridor, **audit_kwargs))
        pool(2, warning_audit(truth, log_marl, corridor, **audit_kwargs))

        log_rule = open_loop_decisions(episode, RuleBasedController(guard_config))
        pool(3, warning_audit(truth, log_rule, corridor, **audit_kwargs))

        fine_avg = FineInputMarlController(policy, guard_config, truth, corridor)
        log_fine = open_loop_decisions(episode, fine_avg)
        pool(4, warning_audit(truth, log_fine, corridor, **audit_kwargs))

        lane_records = []
        for lane in range(truth.lanes):
            ctrl = FineInputMarlController(policy, guard_config, truth, corridor, lane=lane)
            log_lane = open_loop_decisions(episode, ctrl)
            lane_field = SpeedField(truth.t0_s, truth.dt_s, truth.x0_mi, truth.dx_mi,
                                    truth.values[:, :, lane])
            led = warning_audit(lane_field, log_lane, corridor, **audit_kwargs)
            for r in led.records:
                r.lane = lane
            lane_records.extend(led.records)
        lane_ledger = WarningLedger(float(corridor.min_limit), 10.0, lane_records)
        pool(5, lane_ledger)

    return {
        "experiments": {
            k: {"ledger": ledgers[k], "summary": ledgers[k].summary() if ledgers[k] else None,
                "episodes": per_episode[k]}
            for k in ledgers
        },
        "design": {
            1: "MARL / radar input / radar field",
            2: "MARL / radar input / ground-truth field",
            3: "rule benchmark / radar input / ground-truth field",
            4: "MARL / fine lane-average input / ground-truth field",
            5: "MARL / fine lane-specific input, per-lane limits / ground-truth field",
        },
    }


# -- time-space rendering ---------------------------------------------------------------


def render_time_space(source, out_csv=None, out_png=None, mask_non_policy: bool = False,
                      corridor: CorridorConfig | None = None) -> np.ndarray:
    """Emit a time-by-space grid (CSV and/or PNG) of posted limits or speeds.

    ``source`` is a DecisionLog (columns = gantries, most downstream first)
    or a SpeedField (columns = space bins, lane minimum shown). With
    ``mask_non_policy`` every decision not attributed to the policy renders
    as a blank cell, the usual way to see where safety guards took over.
    """
    if isinstance(source, DecisionLog):
        ticks = sorted({r["tick"] for r in source.records})
        t_index = {t: i for i, t in enumerate(ticks)}
        gids = source.gantry_ids
        g_index = {g: j for j, g in enumerate(gids)}
        grid = np.full((len(ticks), len(gids)), np.nan)
        for r in source.records:
            val = r["final"]
            if mask_non_policy and r["attr"] != "POLICY":
                val = np.nan
            grid[t_index[r["tick"]], g_index[r["gantry"]]] = val
        columns = gids
        row_labels = [(t + 1) * source.period_s for t in ticks]
        vmin, vmax = 25, 75
    elif isinstance(source, SpeedField):
        grid = source.lane_min()
        columns = [f"x={x:.2f}" for x in source.xs()]
        row_labels = list(source.times())
        vmin, vmax = 0, 80
    else:
        raise TypeError("source must be a DecisionLog or SpeedField")

    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", *columns])
            for t, row in zip(row_labels, grid):
                writer.writerow([t] + ["" if np.isnan(v) else repr(float(v)) for v in row])

    if out_png is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(10, 4))
        masked = np.ma.masked_invalid(grid.T)
        cmap = plt.cm.RdYlGn.copy()
        cmap.set_bad("white")
        im = ax.pcolormesh(np.arange(grid.shape[0] + 1), np.arange(grid.shape[1] + 1),
                           masked, cmap=cmap, vmin=vmin, vmax=vmax)
        ax.set_xlabel("tick" if isinstance(source, DecisionLog) else "time bin")
        ax.set_ylabel("gantry (downstream first)" if isinstance(source, DecisionLog) else "space bin")
        fig.colorbar(im, ax=ax, label="mph")
        fig.tight_layout()
        fig.savefig(out_png, dpi=120)
        plt.close(fig)

    return grid
