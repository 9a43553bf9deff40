"""Corridor variable-speed-limit control toolkit.

Subpackages by responsibility:

  corridor    static corridor description (gantries, sensors, geometry)
  sim         macroscopic traffic simulator with synthetic radar sensors
  policy      shared multi-agent policy, action masking, weight files
  training    multi-agent PPO training and behavioral probes
  guards      deployed four-step control pipeline with attribution
  logs        decision/sensor log formats
  speedfield  dense time-space speed fields and their container format
  episode     batch closed/open-loop episode execution
  evaluation  trajectories, warning metrics, events, experiment matrix
  gateway     live websocket control service
"""

from .corridor import (CorridorConfig, Gantry, Sensor, assign_critical_sensor,
                       build_i24_westbound, load_corridor, save_corridor, upstream_neighbor)
from .guards import Decision, GuardConfig, SensorWindow, debounce, max_limit_correct, run_tick, speed_match
from .policy import (MaskedDistribution, NormalizationBounds, Observation, PolicyParameters,
                     act, build_observation, init_policy, invalid_actions, load_policy,
                     save_policy, sequential_sweep)
from .sim import (IncidentEvent, SensorReading, SimConfig, SimulationEngine,
                  build_testing_scenario, build_training_scenario)
from .speedfield import SpeedField, load_field, save_field

__version__ = "0.1.0"
