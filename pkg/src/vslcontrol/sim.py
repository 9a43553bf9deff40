"""Desk-scale macroscopic corridor traffic simulator.

First-order cell-transmission dynamics on a single mainline with point-queue
on-ramps, capacity-reducing incidents, a convex speed-limit compliance model,
and synthetic radar sensor emission. The simulator is the stand-in for a
microscopic traffic model: deterministic given (config, seed), cheap enough
for reinforcement-learning rollouts, and faithful enough to exercise every
control and evaluation component downstream of it.

UNIT CONVENTIONS
----------------
  - space: miles; cells indexed 0..N-1 from the upstream end in the travel
    direction (travel offset coordinates, see corridor module)
  - time: seconds at the API surface, hours inside flux computations
  - density: veh/mile/lane, speed: mph, flow: veh/h/lane unless a variable
    is suffixed ``_total`` (veh/h across all lanes)

The fundamental diagram is trapezoidal: demand  D(k) = min(u*k, Q) and
supply S(k) = min(Q, w*(k_jam - k)) per lane, where u is the cell's
effective speed cap. Posted limits enter through u only:

    u = c_eff * VSL + (1 - c_eff) * free_flow,  c_eff = min(1, k_gain * compliance)

which encodes that a small fraction of compliant vehicles drags the average
speed part of the way toward the posted limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corridor import CorridorConfig, build_i24_westbound, Gantry, Sensor


class SimulationFault(RuntimeError):
    """Simulator state became invalid (NaN or negative density)."""


@dataclass(frozen=True)
class IncidentEvent:
    """Capacity reduction at one location over a time window.

    ``capacity_fraction`` is the fraction of capacity that REMAINS while the
    incident is active (0.5 means half the normal capacity).
    """

    id: str
    milepost: float
    start_s: float
    end_s: float
    capacity_fraction: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"incident {self.id}: start_s must precede end_s")
        if not 0.0 <= self.capacity_fraction < 1.0:
            raise ValueError(f"incident {self.id}: capacity_fraction must be in [0, 1)")


@dataclass(frozen=True)
class SensorReading:
    """One 30-second per-lane aggregate from one sensor."""

    sensor_id: str
    timestamp_s: float
    speed_mph: tuple[float, ...]
    volume_veh: tuple[float, ...]
    occupancy: tuple[float, ...]


@dataclass(frozen=True)
class SimConfig:
    cell_length_miles: float = 0.1
    free_flow_mph: float = 70.0
    jam_density_vpm_per_lane: float = 220.0
    backward_wave_mph: float = 15.0
    capacity_vphpl: float = 1900.0
    mainline_demand_profile: tuple[tuple[float, float], ...] = ((0.0, 1400.0),)
    ramps: tuple[tuple[float, tuple[tuple[float, float], ...], int], ...] = ()
    compliance_rate: float = 0.05
    compliance_gain: float = 4.0
    seed: int = 0
    dt_s: float = 1.0
    sensor_period_s: float = 30.0
    noise_sigma_mph: float = 0.0
    lane_speed_offsets_mph: tuple[float, ...] | None = None
    incidents: tuple[IncidentEvent, ...] = ()

    def __post_init__(self):
        k_crit = self.capacity_vphpl / self.free_flow_mph
        if k_crit >= self.jam_density_vpm_per_lane:
            raise ValueError("fundamental diagram inconsistent: critical density >= jam density")
        if self.capacity_vphpl > self.backward_wave_mph * (self.jam_density_vpm_per_lane - k_crit):
            raise ValueError("fundamental diagram inconsistent: supply branch cannot carry capacity")
        if self.free_flow_mph * self.dt_s / 3600.0 > self.cell_length_miles + 1e-12:
            raise ValueError("CFL violated: free_flow * dt exceeds cell length")
        if self.dt_s > 1.0 + 1e-12:
            raise ValueError("sub-step dt_s must be <= 1 s")
        if not 0.0 <= self.compliance_rate <= 1.0:
            raise ValueError("compliance_rate must be in [0, 1]")

    @property
    def effective_compliance(self) -> float:
        return min(1.0, self.compliance_gain * self.compliance_rate)


def _equilibrium_speed(k: np.ndarray, caps: np.ndarray, cfg: SimConfig) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        kk = np.maximum(k, 1e-9)
        v_cap_branch = np.where(k > 1e-9, cfg.capacity_vphpl / kk, np.inf)
        v_cong = np.where(k > 1e-9,
                          cfg.backward_wave_mph * (cfg.jam_density_vpm_per_lane - k) / kk,
                          np.inf)
    v = np.minimum(caps, np.minimum(v_cap_branch, v_cong))
    return np.clip(v, 0.0, None)


def _profile_rate(profile, t_s: float) -> float:
    """Step-function lookup: the rate of the last entry with start_s <= t."""
    rate = 0.0
    for start_s, value in profile:
        if t_s >= start_s:
            rate = value
        else:
            break
    return rate


@dataclass
class CellState:
    """Snapshot of one cell, mostly for inspection and tests."""

    density: float      # veh/mile/lane
    speed: float        # mph
    flow_out: float     # veh/h/lane


class SimulationEngine:
    """Steps a corridor's traffic state and emits synthetic sensor readings.

    One engine instance is owned and stepped by a single caller. The posted
    VSL profile is supplied per step (index 0 = most downstream gantry,
    matching corridor conventions).
    """

    def __init__(self, corridor: CorridorConfig, config: SimConfig):
        self.corridor = corridor
        self.config = config
        self.n_cells = int(round(corridor.length_miles / config.cell_length_miles))
        self.lanes = corridor.lanes
        self.t_s = 0.0
        self.density = np.zeros(self.n_cells)            # veh/mi/lane
        self.entry_queue_veh = 0.0
        self._rng = np.random.default_rng(config.seed)

        L = config.cell_length_miles
        centers = (np.arange(self.n_cells) + 0.5) * L
        self.cell_centers_x = centers

        # Gantry coverage: a cell obeys the most recently passed gantry,
        # i.e. the one with the largest travel offset <= the cell center.
        gx = np.asarray(corridor.gantry_travel_offsets())
        order = np.argsort(gx)
        self._gantry_order = order                       # ascending travel x
        idx = np.searchsorted(gx[order], centers, side="right") - 1
        self._cell_gantry = np.where(idx >= 0, order[idx], -1)

        # Ramps: (cell index, profile, lanes) plus a point queue each. Merges
        # into cell 0 would alias the upstream boundary, so clip to cell 1.
        self._ramps = []
        for milepost, profile, ramp_lanes in config.ramps:
            cell = int(np.clip(corridor.travel_offset(milepost) / L, 1, self.n_cells - 1))
            if any(r["cell"] == cell for r in self._ramps):
                raise ValueError(f"two ramps merge into cell {cell}")
            self._ramps.append({"cell": cell, "profile": profile, "lanes": ramp_lanes, "queue": 0.0})

        self._incident_cells = {
            inc.id: int(np.clip(corridor.travel_offset(inc.milepost) / L, 0, self.n_cells - 1))
            for inc in config.incidents
        }
        self._incidents = list(config.incidents)

        # Sensor placement and 30-s accumulators.
        self.sensor_cells = {
            s.id: int(np.clip(corridor.travel_offset(s.milepost) / L, 0, self.n_cells - 1))
            for s in corridor.sensors
        }
        self._acc_reset()

        self._lane_offsets = np.zeros(self.lanes)
        if config.lane_speed_offsets_mph is not None:
            if len(config.lane_speed_offsets_mph) != self.lanes:
                raise ValueError("lane_speed_offsets_mph length must equal lane count")
            self._lane_offsets = np.asarray(config.lane_speed_offsets_mph, dtype=float)

        # Speed history for ground-truth field extraction (1-s resolution).
        self.record_history = False
        self._history_t: list[float] = []
        self._history_v: list[np.ndarray] = []

        # Conservation bookkeeping.
        self.total_entered_veh = 0.0
        self.total_exited_veh = 0.0
        self._initial_stored = self._stored_veh()

    # -- state inspection ----------------------------------------------------

    def _stored_veh(self) -> float:
        return float(self.density.sum() * self.config.cell_length_miles * self.lanes)

    def conservation_residual(self) -> float:
        stored = self._stored_veh() - self._initial_stored
        return abs(self.total_entered_veh - self.total_exited_veh - stored)

    def add_incident(self, incident: IncidentEvent) -> None:
        cell = int(np.clip(self.corridor.travel_offset(incident.milepost) / self.config.cell_length_miles,
                           0, self.n_cells - 1))
        self._incidents.append(incident)
        self._incident_cells[incident.id] = cell

    def _capacity_per_lane(self) -> np.ndarray:
        cap = np.full(self.n_cells, self.config.capacity_vphpl)
        for inc in self._incidents:
            if inc.start_s <= self.t_s < inc.end_s:
                cell = self._incident_cells[inc.id]
                cap[cell] = min(cap[cell], self.config.capacity_vphpl * inc.capacity_fraction)
        return cap

    def speed_caps(self, vsl_profile) -> np.ndarray:
        """Effective per-cell speed cap (mph) under the compliance blend."""
        cfg = self.config
        caps = np.full(self.n_cells, cfg.free_flow_mph)
        if vsl_profile is not None:
            limits = np.asarray(vsl_profile, dtype=float)
            if limits.shape != (len(self.corridor.gantries),):
                raise ValueError("vsl_profile length must equal gantry count")
            covered = self._cell_gantry >= 0
            c_eff = cfg.effective_compliance
            blended = c_eff * limits[self._cell_gantry] + (1.0 - c_eff) * cfg.free_flow_mph
            caps = np.where(covered, blended, caps)
        return caps

    def cell_speeds(self, vsl_profile=None, caps=None) -> np.ndarray:
        """Equilibrium speed per cell from the trapezoidal diagram."""
        if caps is None:
            caps = self.speed_caps(vsl_profile)
        return _equilibrium_speed(self.density, caps, self.config)

    def cell_states(self, vsl_profile=None) -> list[CellState]:
        caps = self.speed_caps(vsl_profile)
        speeds = self.cell_speeds(caps=caps)
        flows = np.minimum(speeds * self.density, self._capacity_per_lane())
        return [CellState(float(k), float(v), float(q))
                for k, v, q in zip(self.density, speeds, flows)]

    # -- dynamics -------------------------------------------------------------

    def step(self, vsl_profile=None, dt_s: float | None = None) -> None:
        """Advance one sub-step under the given posted limits."""
        cfg = self.config
        dt = cfg.dt_s if dt_s is None else dt_s
        if dt > cfg.dt_s + 1e-12:
            raise ValueError("dt exceeds configured sub-step")
        dt_h = dt / 3600.0
        lanes = self.lanes
        L = cfg.cell_length_miles
        k = self.density

        caps = self.speed_caps(vsl_profile)
        cap_q = self._capacity_per_lane()

        speeds = _equilibrium_speed(k, caps, cfg)   # pre-update state, sampled over [t, t+dt)

        demand = np.minimum(caps * k, cap_q) * lanes                       # veh/h total
        supply = np.minimum(cap_q, cfg.backward_wave_mph
                            * (cfg.jam_density_vpm_per_lane - k)) * lanes
        supply = np.maximum(supply, 0.0)

        # Interior interface fluxes: cell i -> i+1.
        flux = np.minimum(demand[:-1], supply[1:])

        inflow = np.zeros(self.n_cells)
        outflow = np.zeros(self.n_cells)
        inflow[1:] += flux
        outflow[:-1] += flux

        # Upstream boundary: point queue fed by the demand profile.
        arrival = _profile_rate(cfg.mainline_demand_profile, self.t_s) * lanes
        self.entry_queue_veh += arrival * dt_h
        entry_flux = min(self.entry_queue_veh / dt_h, supply[0], cap_q[0] * lanes)
        self.entry_queue_veh -= entry_flux * dt_h
        inflow[0] += entry_flux

        # Ramp merges: proportional allocation of residual supply.
        ramp_fluxes = []
        for ramp in self._ramps:
            cell = ramp["cell"]
            ramp["queue"] += _profile_rate(ramp["profile"], self.t_s) * ramp["lanes"] * dt_h
            ramp_demand = min(ramp["queue"] / dt_h, cfg.capacity_vphpl * ramp["lanes"])
            main_in = inflow[cell]
            room = supply[cell]
            total = main_in + ramp_demand
            if total > room and total > 0:
                scale = room / total
                served_main = main_in * scale
                served_ramp = ramp_demand * scale
                # Unserved mainline flow stays put: undo part of the interface flux.
                deficit = main_in - served_main
                if cell > 0:
                    outflow[cell - 1] -= deficit
                else:
                    self.entry_queue_veh += deficit * dt_h
                inflow[cell] = served_main
            else:
                served_ramp = ramp_demand
            ramp["queue"] -= served_ramp * dt_h
            inflow[cell] += served_ramp
            ramp_fluxes.append(served_ramp)

        # Downstream boundary: free outflow at demand.
        exit_flux = demand[-1]
        outflow[-1] += exit_flux

        new_k = k + dt_h / (L * lanes) * (inflow - outflow)
        if not np.all(np.isfinite(new_k)):
            bad = int(np.argmax(~np.isfinite(new_k)))
            raise SimulationFault(f"non-finite density in cell {bad} at t={self.t_s:.0f}s")
        if np.any(new_k < -1e-9):
            bad = int(np.argmin(new_k))
            raise SimulationFault(f"negative density in cell {bad} at t={self.t_s:.0f}s")
        self.density = np.clip(new_k, 0.0, cfg.jam_density_vpm_per_lane)

        entered = (entry_flux + sum(ramp_fluxes)) * dt_h
        self.total_entered_veh += entered
        self.total_exited_veh += exit_flux * dt_h

        self._acc_time += dt
        self._acc_speed += speeds * dt
        self._acc_occ += (k / cfg.jam_density_vpm_per_lane) * dt
        self._acc_vol += (outflow / lanes) * dt_h        # served veh per lane

        if self.record_history:
            self._history_t.append(self.t_s)
            self._history_v.append(speeds.copy())

        self.t_s += dt

    def run(self, duration_s: float, vsl_profile=None) -> None:
        steps = int(round(duration_s / self.config.dt_s))
        for _ in range(steps):
            self.step(vsl_profile)

    # -- sensor emission -------------------------------------------------------

    def _acc_reset(self):
        self._acc_time = 0.0
        self._acc_speed = np.zeros(self.n_cells)
        self._acc_occ = np.zeros(self.n_cells)
        self._acc_vol = np.zeros(self.n_cells)

    def emit_sensor_readings(self) -> list[SensorReading]:
        """Flush the accumulated interval into per-lane readings.

        Call every ``sensor_period_s`` seconds of simulated time; the reading
        timestamp is the interval end. Speeds get the per-lane offsets and,
        when ``noise_sigma_mph`` > 0, truncated Gaussian noise.
        """
        cfg = self.config
        if self._acc_time <= 0:
            raise SimulationFault("no accumulated interval to emit")
        mean_speed = self._acc_speed / self._acc_time
        mean_occ = np.clip(self._acc_occ / self._acc_time, 0.0, 1.0)
        volume = self._acc_vol

        readings = []
        for sensor in self.corridor.sensors:
            cell = self.sensor_cells[sensor.id]
            lane_speeds = mean_speed[cell] + self._lane_offsets[: sensor.lanes]
            if cfg.noise_sigma_mph > 0:
                lane_speeds = lane_speeds + self._rng.normal(0.0, cfg.noise_sigma_mph, sensor.lanes)
            lane_speeds = np.clip(lane_speeds, 0.0, None)
            readings.append(SensorReading(
                sensor_id=sensor.id,
                timestamp_s=self.t_s,
                speed_mph=tuple(float(v) for v in lane_speeds),
                volume_veh=tuple(float(volume[cell]) for _ in range(sensor.lanes)),
                occupancy=tuple(float(mean_occ[cell]) for _ in range(sensor.lanes)),
            ))
        self._acc_reset()
        return readings

    # -- ground-truth extraction ------------------------------------------------

    def history(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times_s, cell_centers_x, speeds[t, cell]) recorded so far."""
        if not self._history_t:
            raise SimulationFault("history recording was not enabled")
        return (np.asarray(self._history_t),
                self.cell_centers_x.copy(),
                np.stack(self._history_v))


# -- canonical scenarios -------------------------------------------------------


def _training_corridor() -> CorridorConfig:
    gantries = tuple(
        Gantry(id=f"G{k + 1}", milepost=round(1.25 + 0.5 * k, 2), max_limit=70)
        for k in range(8)
    )
    sensors = tuple(
        Sensor(id=f"S{j + 1:02d}", milepost=round(0.05 + 0.3 * j, 2), lanes=4)
        for j in range(24)
    )
    return CorridorConfig(
        name="training_7mi",
        direction="WB",
        length_miles=7.0,
        gantries=gantries,
        sensors=sensors,
        lanes=4,
    )


def build_training_scenario(compliance_rate: float = 0.05, seed: int = 0,
                            noise_sigma_mph: float = 0.0) -> tuple[CorridorConfig, SimConfig]:
    """Seven-mile, four-lane stretch with one two-lane merge bottleneck.

    Mainline inflow runs at 1850 veh/lane/hr for the first hour to build a
    queue at the merge, then halves for the second hour so the queue clears.
    Eight agents sit at half-mile intervals upstream of the merge.
    """
    corridor = _training_corridor()
    config = SimConfig(
        mainline_demand_profile=((0.0, 1850.0), (3600.0, 925.0)),
        ramps=((1.0, ((0.0, 1000.0),), 2),),
        compliance_rate=compliance_rate,
        seed=seed,
        noise_sigma_mph=noise_sigma_mph,
    )
    return corridor, config


def build_testing_scenario(incidents: tuple[IncidentEvent, ...] = (),
                           compliance_rate: float = 0.05,
                           mainline_vphpl: float = 1400.0,
                           seed: int = 0,
                           noise_sigma_mph: float = 0.0,
                           lane_speed_offsets_mph: tuple[float, ...] | None = None,
                           ) -> tuple[CorridorConfig, SimConfig]:
    """Deployment-scale corridor (34 agents) with a configurable incident schedule."""
    corridor = build_i24_westbound()
    config = SimConfig(
        mainline_demand_profile=((0.0, mainline_vphpl),),
        incidents=tuple(incidents),
        compliance_rate=compliance_rate,
        seed=seed,
        noise_sigma_mph=noise_sigma_mph,
        lane_speed_offsets_mph=lane_speed_offsets_mph,
    )
    return corridor, config


def analytic_shockwave_speed_mph(config: SimConfig, demand_vphpl: float,
                                 bottleneck_flow_vphpl: float) -> float:
    """Queue-tail growth speed from the triangular/trapezoidal diagram.

    Used by tests as the independent check on queue dynamics: the interface
    between free-flow arrivals and the queued state moves at
    (q_up - q_queue) / (k_up - k_queue); negative values move upstream.
    """
    k_up = demand_vphpl / config.free_flow_mph
    k_queue = config.jam_density_vpm_per_lane - bottleneck_flow_vphpl / config.backward_wave_mph
    return (demand_vphpl - bottleneck_flow_vphpl) / (k_up - k_queue)
