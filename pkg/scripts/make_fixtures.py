"""Regenerate the shipped corridor config and the morning-peak fixture.

The fixture is one hour of closed-loop operation on the 17-mile corridor
under peak demand with a mid-run incident: the recorded sensor stream, the
decision log the deployed pipeline produced from it, and the ground-truth
speed field. Replaying the sensor log through the same policy reproduces
the decision log byte for byte, which is what the replay-determinism tests
assert against.

Run from the repository root:  python scripts/make_fixtures.py
"""

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent

from vslcontrol.corridor import build_i24_westbound, save_corridor
from vslcontrol.episode import MarlController, run_episode
from vslcontrol.guards import GuardConfig
from vslcontrol.logs import write_decision_log, write_sensor_log
from vslcontrol.policy import load_policy
from vslcontrol.sim import IncidentEvent, build_testing_scenario
from vslcontrol.speedfield import save_field


def main():
    configs = ROOT / "configs"
    fixtures = ROOT / "fixtures"
    configs.mkdir(exist_ok=True)
    fixtures.mkdir(exist_ok=True)

    corridor = build_i24_westbound()
    save_corridor(corridor, configs / "i24_wb_17mi.yaml")
    print(f"wrote {configs / 'i24_wb_17mi.yaml'}")

    policy = load_policy(ROOT / "artifacts" / "trained_policy.vslw")
    incident = IncidentEvent(id="MORNING1", milepost=60.3, start_s=900.0, end_s=2700.0,
                             capacity_fraction=0.45)
    _, sim_config = build_testing_scenario(
        incidents=(incident,), mainline_vphpl=1650.0, seed=42, noise_sigma_mph=1.0,
        lane_speed_offsets_mph=(2.0, 1.0, -1.0, -2.0))

    episode = run_episode(corridor, sim_config, MarlController(policy, GuardConfig()),
                          duration_s=3600.0)
    write_sensor_log(fixtures / "morning_peak_sensors.jsonl", corridor, episode.readings)
    write_decision_log(fixtures / "morning_peak_decisions.jsonl", corridor, episode.decisions)
    names = ["morning_peak_sensors.jsonl", "morning_peak_decisions.jsonl"]
    if "--with-field" in sys.argv:
        save_field(episode.truth_field(lane_resolved=True), fixtures / "morning_peak_field.vslf")
        names.append("morning_peak_field.vslf")
    for name in names:
        size = (fixtures / name).stat().st_size
        print(f"wrote fixtures/{name} ({size / 1e6:.1f} MB)")


if __name__ == "__main__":
    sys.exit(main())
