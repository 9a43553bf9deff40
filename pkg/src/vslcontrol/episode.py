"""Synchronous closed- and open-loop episode execution.

This is the batch counterpart of the live gateway loop: step the simulator
in 30-second control periods, preprocess the sensor stream, run the guarded
control tick, and feed the posted limits back into the simulator (closed
loop) or just record them (open loop). Used by evaluation experiments,
fixture generation, and the ``simulate`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corridor import CorridorConfig
from .guards import Decision, GuardConfig, Preprocessor, SensorWindow, run_tick
from .policy import PolicyParameters
from .sim import SensorReading, SimConfig, SimulationEngine
from .speedfield import SpeedField, field_from_history


@dataclass
class EpisodeResult:
    corridor: CorridorConfig
    sim_config: SimConfig
    decisions: list[list[Decision]]              # per tick
    readings: list[SensorReading]                # full stream
    windows: list[list[SensorWindow]]            # per tick, per gantry
    history: tuple | None = None                 # (times, xs, speeds)

    def decision_records(self):
        for tick_decisions in self.decisions:
            yield from tick_decisions

    def truth_field(self, lane_resolved: bool = False) -> SpeedField:
        if self.history is None:
            raise ValueError("episode was run without history recording")
        times, xs, speeds = self.history
        offsets = self.sim_config.lane_speed_offsets_mph if lane_resolved else None
        if lane_resolved and offsets is None:
            offsets = tuple(0.0 for _ in range(self.corridor.lanes))
        return field_from_history(times, xs, speeds, lane_offsets_mph=offsets)

    def final_limits(self) -> np.ndarray:
        return np.array([[d.final for d in tick] for tick in self.decisions])


class MarlController:
    """Guarded policy controller: the deployed pipeline in argmax mode."""

    def __init__(self, policy: PolicyParameters, guard_config: GuardConfig):
        self.policy = policy
        self.guard_config = guard_config

    def decide(self, windows, corridor, tick, degraded=False) -> list[Decision]:
        return run_tick(self.policy, windows, corridor, self.guard_config, tick,
                        degraded=degraded)


def run_episode(corridor: CorridorConfig, sim_config: SimConfig, controller,
                duration_s: float, guard_config: GuardConfig | None = None,
                record_history: bool = True, closed_loop: bool = True,
                history_stride_s: float = 4.0) -> EpisodeResult:
    """Run one control episode.

    ``controller`` needs a ``decide(windows, corridor, tick, degraded)``
    method returning one Decision per gantry. The first control period runs
    under maximum limits (there is no sensor window yet to decide from).
    """
    guard_config = guard_config or GuardConfig()
    engine = SimulationEngine(corridor, sim_config)
    engine.record_history = record_history
    pre = Preprocessor(corridor, guard_config)

    period = corridor.control_period_s
    n_ticks = int(round(duration_s / period))
    substeps = int(round(period / sim_config.dt_s))

    limits = np.array([float(g.max_limit) for g in corridor.gantries])
    all_readings: list[SensorReading] = []
    recent: list[SensorReading] = []
    decisions: list[list[Decision]] = []
    windows_log: list[list[SensorWindow]] = []

    for tick in range(n_ticks):
        for _ in range(substeps):
            engine.step(limits if closed_loop else None)
        batch = engine.emit_sensor_readings()
        all_readings.extend(batch)
        recent.extend(batch)
        horizon = engine.t_s - 2 * guard_config.window_s
        recent = [r for r in recent if r.timestamp_s > horizon]

        windows, degraded = pre.update(recent, engine.t_s)
        tick_decisions = controller.decide(windows, corridor, tick, degraded)
        decisions.append(tick_decisions)
        windows_log.append(windows)
        limits = np.array([float(d.final) for d in tick_decisions])

    history = None
    if record_history:
        times, xs, speeds = engine.history()
        stride = max(1, int(round(history_stride_s / sim_config.dt_s)))
        history = (times[::stride], xs, speeds[::stride])
    return EpisodeResult(corridor, sim_config, decisions, all_readings, windows_log, history)
