"""The deployed four-step control pipeline with per-decision attribution.

Every control tick runs:

  Step 1  preprocess   -- 90-second volume-weighted sensor windows, gap
                          filling, critical-sensor lookup per gantry
  Step 2  policy sweep -- masked policy evaluation downstream-to-upstream,
                          each output passed through speed matching before
                          it feeds the next agent upstream
  Step 3  max-limit    -- clip to the segment's (possibly overridden)
                          maximum permissible limit
  Step 4  debounce     -- remove single-gantry upward spikes in the
                          spatial profile

Each decision records the value after every stage and an attribution label:
the last stage that changed the value, or POLICY if none did. Attribution
shares over a log therefore partition exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .corridor import CorridorConfig, critical_sensor_map
from .policy import PolicyParameters, Observation, build_observation, valid_mask, act as policy_act
from .sim import SensorReading

ATTRIBUTIONS = ("POLICY", "SM", "MSLC", "DB")


@dataclass(frozen=True)
class SensorWindow:
    """One sensor's 90-second aggregate as seen by a controller."""

    sensor_id: str
    t_end_s: float
    speed_mph: float        # volume-weighted mean over lanes and intervals
    occupancy: float        # plain mean
    staleness_s: float
    interpolated: bool = False


@dataclass(frozen=True)
class GuardConfig:
    o_thred: float = 0.10               # occupancy gate for the 70-mph speed-match branch
    a_diff: int = 10
    staleness_limit_s: float = 300.0
    strict_stepdown_after_mslc: bool = False    # experimental, off by default
    sm_enabled: bool = True
    db_enabled: bool = True
    window_s: float = 90.0
    interval_s: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.o_thred < 1.0:
            raise ValueError("o_thred must be in (0, 1)")


@dataclass(frozen=True)
class Decision:
    gantry_id: str
    tick: int
    raw_policy_action: int
    after_sm: int
    after_mslc: int
    final: int
    attribution: str
    obs_used: Observation

    def __post_init__(self):
        if self.attribution not in ATTRIBUTIONS:
            raise ValueError(f"unknown attribution {self.attribution!r}")


def attribute(raw: int, after_sm: int, after_mslc: int, final: int) -> str:
    if final != after_mslc:
        return "DB"
    if after_mslc != after_sm:
        return "MSLC"
    if after_sm != raw:
        return "SM"
    return "POLICY"


# -- Step 1: preprocessing ---------------------------------------------------


class Preprocessor:
    """Turns the raw 30-second reading stream into per-gantry windows.

    Holds the last valid window per sensor so brief outages fall back to
    last-known values before the free-flow default kicks in. One instance
    per corridor direction; feed it every tick.
    """

    def __init__(self, corridor: CorridorConfig, config: GuardConfig):
        self.corridor = corridor
        self.config = config
        self._critical = critical_sensor_map(corridor)
        self._sensor_index = {s.id: s for s in corridor.sensors}
        self._order = sorted(corridor.sensors, key=lambda s: corridor.travel_offset(s.milepost))
        self._last_known: dict[str, SensorWindow] = {}

    def update(self, readings: list[SensorReading], now_s: float) -> tuple[list[SensorWindow], bool]:
        """Returns (per-gantry windows, degraded) for the tick ending at now_s.

        ``readings`` is the recent stream; only entries with timestamps in
        (now - window, now] contribute. Returns degraded=True when every
        sensor is stale beyond the configured limit, in which case the caller
        should post maximum limits.
        """
        cfg = self.config
        by_sensor: dict[str, list[SensorReading]] = {}
        for r in readings:
            if now_s - cfg.window_s < r.timestamp_s <= now_s:
                by_sensor.setdefault(r.sensor_id, []).append(r)

        fresh: dict[str, SensorWindow] = {}
        for sensor_id, rs in by_sensor.items():
            fresh[sensor_id] = self._aggregate(sensor_id, rs, now_s)
        self._last_known.update(fresh)

        windows: dict[str, SensorWindow] = dict(fresh)
        missing = [s for s in self._order if s.id not in windows]
        if missing:
            self._fill_missing(windows, missing, now_s)

        degraded = not fresh
        return [windows[sid] for sid in self._critical], degraded

    def _aggregate(self, sensor_id: str, rs: list[SensorReading], now_s: float) -> SensorWindow:
        vw_num = vw_den = 0.0
        speed_sum = occ_sum = 0.0
        n_lane_samples = 0
        newest = -math.inf
        for r in rs:
            newest = max(newest, r.timestamp_s)
            for v, q, o in zip(r.speed_mph, r.volume_veh, r.occupancy):
                vw_num += q * v
                vw_den += q
                speed_sum += v
                occ_sum += o
                n_lane_samples += 1
        # Zero total volume (empty road): fall back to the plain mean speed.
        speed = vw_num / vw_den if vw_den > 0 else speed_sum / n_lane_samples
        return SensorWindow(
            sensor_id=sensor_id,
            t_end_s=now_s,
            speed_mph=speed,
            occupancy=occ_sum / n_lane_samples,
            staleness_s=now_s - newest,
            interpolated=False,
        )

    def _fill_missing(self, windows: dict[str, SensorWindow], missing, now_s: float) -> None:
        cfg = self.config
        xs = [self.corridor.travel_offset(s.milepost) for s in self._order]
        valid = [(x, windows[s.id]) for x, s in zip(xs, self._order) if s.id in windows]
        for s in missing:
            x = self.corridor.travel_offset(s.milepost)
            left = max((pair for pair in valid if pair[0] <= x), key=lambda p: p[0], default=None)
            right = min((pair for pair in valid if pair[0] > x), key=lambda p: p[0], default=None)
            if left and right:
                span = right[0] - left[0]
                w = (x - left[0]) / span if span > 0 else 0.5
                speed = (1 - w) * left[1].speed_mph + w * right[1].speed_mph
                occ = (1 - w) * left[1].occupancy + w * right[1].occupancy
                windows[s.id] = SensorWindow(s.id, now_s, speed, occ, 0.0, interpolated=True)
                continue
            if left or right:
                src = (left or right)[1]
                windows[s.id] = SensorWindow(s.id, now_s, src.speed_mph, src.occupancy,
                                             src.staleness_s, interpolated=True)
                continue
            prev = self._last_known.get(s.id)
            if prev is not None and now_s - prev.t_end_s <= cfg.staleness_limit_s:
                windows[s.id] = replace(prev, staleness_s=now_s - prev.t_end_s, interpolated=True)
            else:
                windows[s.id] = SensorWindow(s.id, now_s, float(self.corridor.max_limit_default),
                                             0.0, math.inf, interpolated=True)


def preprocess(readings: list[SensorReading], corridor: CorridorConfig,
               config: GuardConfig, now_s: float) -> tuple[list[SensorWindow], bool]:
    """Stateless one-shot form of Preprocessor.update (no last-known memory)."""
    return Preprocessor(corridor, config).update(readings, now_s)


# -- Step 2: speed matching ----------------------------------------------------


def next_multiple_of_10(x: float) -> int:
    """Smallest multiple of 10 strictly greater than x (52 -> 60, 50 -> 60)."""
    return (math.floor(x / 10) + 1) * 10


def speed_match(a: int, a_down: float, v: float, o: float, config: GuardConfig) -> int:
    """Pull the extremes (30 and 70) toward the prevailing traffic speed.

    A 30 that undershoots actual speeds is raised toward traffic (but never
    above downstream+a_diff); a 70 posted over congested traffic is lowered
    to match. Everything else passes through.
    """
    if a == 30:
        return int(min(max(min(a_down + config.a_diff, next_multiple_of_10(v)), 30), 70))
    if a == 70 and o >= config.o_thred:
        return int(min(max(next_multiple_of_10(v), 30), 70))
    return a


# -- Step 3: maximum speed limit correction --------------------------------------


def max_limit_correct(v: int, max_limit: int) -> int:
    """Clip to the segment's maximum permissible limit."""
    return min(v, max_limit)


# -- Step 4: debounce -------------------------------------------------------------


def bounce_intervals(profile) -> list[tuple[int, int]]:
    """All (a, b) index pairs whose strict interior sits above both ends.

    A bounce of order b-a-1: every value strictly between positions a and b
    exceeds both boundary values. [30, 60, 50] is one bounce of order 1;
    [30, 60, 50, 40] is one bounce of order 2 whose inner triple does NOT
    count as an order-1 bounce on its own (it is not maximal).
    """
    n = len(profile)
    out = []
    for a in range(n - 2):
        interior_min = profile[a + 1]
        for b in range(a + 2, n):
            if interior_min > max(profile[a], profile[b]):
                out.append((a, b))
            interior_min = min(interior_min, profile[b])
    return out


def _maximal_order1(profile) -> int | None:
    """Leftmost spike index that is a maximal (uncontained) order-1 bounce."""
    intervals = bounce_intervals(profile)
    for a, b in intervals:
        if b - a != 2:
            continue
        contained = any(a2 <= a and b2 >= b and (a2, b2) != (a, b)
                        for a2, b2 in intervals)
        if not contained:
            return a + 1
    return None


def has_order1_bounce(profile) -> bool:
    return _maximal_order1(list(profile)) is not None


def debounce(profile: list[int]) -> list[int]:
    """Remove maximal order-1 bounces: lone spikes above both neighbors.

    A spike that is part of a wider bounce (order 2 or more) is permitted
    and left untouched. Corrections replace the spike with the larger
    boundary, strictly lowering one value, and repeat from the downstream
    end until a fixed point; termination is bounded by the finite, strictly
    decreasing value multiset.
    """
    out = list(profile)
    for _ in range(10 * max(1, len(out))):
        i = _maximal_order1(out)
        if i is None:
            break
        out[i] = max(out[i - 1], out[i + 1])
    return out


# -- full tick ---------------------------------------------------------------------


def run_tick(policy_params: PolicyParameters, windows: list[SensorWindow],
             corridor: CorridorConfig, guard_config: GuardConfig, tick: int,
             effective_max: list[int] | None = None, degraded: bool = False,
             mode: str = "argmax", rng=None) -> list[Decision]:
    """Execute one full control tick over preprocessed windows.

    ``effective_max`` carries operator overrides (defaults to each gantry's
    configured max). In degraded mode (all sensors stale) the pipeline posts
    maximum limits attributed to the max-limit correction stage.
    """
    gantries = corridor.gantries
    n = len(gantries)
    maxes = [g.max_limit for g in gantries] if effective_max is None else list(effective_max)
    if len(maxes) != n:
        raise ValueError("effective_max length must equal gantry count")

    if degraded:
        obs = Observation(float(corridor.max_limit_default), 0.0,
                          float(corridor.max_limit_default), 0.0,
                          float(corridor.max_limit_default))
        return [Decision(g.id, tick, corridor.max_limit_default, corridor.max_limit_default,
                         maxes[i], maxes[i], "MSLC", obs)
                for i, g in enumerate(gantries)]

    # Step 2: masked sweep; what propagates upstream is the post-speed-match value.
    raw: list[int] = []
    matched: list[int] = []
    obs_list: list[Observation] = []
    a_down = float(corridor.max_limit_default)
    for i in range(n):
        win_up = windows[i + 1] if i + 1 < n else windows[i]
        obs = build_observation(windows[i], win_up, a_down, policy_params.bounds)
        mask = valid_mask(a_down, policy_params.action_set, guard_config.a_diff)
        action, _, _ = policy_act(policy_params, obs, mask, mode, rng)
        sm = speed_match(action, a_down, windows[i].speed_mph, windows[i].occupancy,
                         guard_config) if guard_config.sm_enabled else action
        raw.append(action)
        matched.append(sm)
        obs_list.append(obs)
        a_down = float(sm)

    # Step 3: maximum-limit correction (cannot be disabled).
    corrected = [max_limit_correct(v, m) for v, m in zip(matched, maxes)]
    if guard_config.strict_stepdown_after_mslc:
        for i in range(1, n):
            corrected[i] = min(corrected[i], corrected[i - 1] + guard_config.a_diff)

    # Step 4: debounce.
    final = debounce(corrected) if guard_config.db_enabled else list(corrected)

    return [Decision(g.id, tick, raw[i], matched[i], corrected[i], final[i],
                     attribute(raw[i], matched[i], corrected[i], final[i]), obs_list[i])
            for i, g in enumerate(gantries)]
