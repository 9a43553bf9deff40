import json

import pytest
import yaml

from vslcontrol.cli import main
from vslcontrol.corridor import build_i24_westbound, save_corridor
from vslcontrol.policy import init_policy, save_policy


@pytest.fixture(scope="module")
def corridor_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "corridor.yaml"
    save_corridor(build_i24_westbound(), path)
    return path


@pytest.fixture(scope="module")
def policy_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "policy.vslw"
    save_policy(init_policy(seed=0), path)
    return path


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "scenario.yaml"
    doc = {
        "sim": {"mainline_demand_profile": [[0.0, 1700.0]], "seed": 4,
                "noise_sigma_mph": 1.0},
        "incidents": [{"id": "X", "milepost": 60.25, "start_s": 300.0, "end_s": 2400.0,
                       "capacity_fraction": 0.4}],
    }
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory, corridor_file, policy_file, scenario_file):
    out = tmp_path_factory.mktemp("run")
    rc = main(["simulate", "--corridor", str(corridor_file), "--policy", str(policy_file),
               "--scenario", str(scenario_file), "--duration", "1200",
               "--out-log", str(out / "decisions.jsonl"),
               "--out-sensor-log", str(out / "sensors.jsonl"),
               "--out-field", str(out / "field.vslf")])
    assert rc == 0
    return out


class TestCli:
    def test_simulate_outputs_exist(self, simulated):
        for name in ("decisions.jsonl", "sensors.jsonl", "field.vslf"):
            assert (simulated / name).stat().st_size > 0

    def test_evaluate_warnings(self, simulated, corridor_file, capsys):
        rc = main(["evaluate-warnings", "--corridor", str(corridor_file),
                   "--log", str(simulated / "decisions.jsonl"),
                   "--field", str(simulated / "field.vslf")])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert "swr_pct" in out and "situations" in out

    def test_evaluate_response(self, simulated, corridor_file, capsys):
        rc = main(["evaluate-response", "--corridor", str(corridor_file),
                   "--log", str(simulated / "decisions.jsonl"),
                   "--field", str(simulated / "field.vslf")])
        assert rc == 0
        first_line = capsys.readouterr().out
        assert "n_events" in first_line

    def test_report(self, simulated, corridor_file, capsys):
        rc = main(["report", "--corridor", str(corridor_file),
                   "--log", str(simulated / "decisions.jsonl")])
        assert rc == 0
        rep = json.loads(capsys.readouterr().out)
        assert abs(rep["share_sum_pct"] - 100.0) < 0.1

    def test_render(self, simulated, tmp_path, capsys):
        rc = main(["render", "--log", str(simulated / "decisions.jsonl"),
                   "--out-csv", str(tmp_path / "g.csv"),
                   "--out-png", str(tmp_path / "g.png"), "--mask-overrides"])
        assert rc == 0
        assert (tmp_path / "g.csv").stat().st_size > 0
        assert (tmp_path / "g.png").stat().st_size > 0

    def test_replay(self, simulated, corridor_file, policy_file, tmp_path, capsys):
        rc = main(["replay", "--corridor", str(corridor_file),
                   "--policy", str(policy_file),
                   "--fixture", str(simulated / "sensors.jsonl"),
                   "--out-dir", str(tmp_path / "replay")])
        assert rc == 0
        replayed = (tmp_path / "replay" / "decisions.jsonl").read_bytes()
        assert replayed == (simulated / "decisions.jsonl").read_bytes()

    def test_train_smoke(self, tmp_path, capsys):
        cfg = tmp_path / "train.json"
        cfg.write_text(json.dumps({"updates": 2, "episodes_per_update": 1,
                                   "episode_steps": 20, "seed": 3}))
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "p.vslw"),
                   "--curve", str(tmp_path / "curve.csv")])
        assert rc == 0
        assert (tmp_path / "p.vslw").stat().st_size > 0
        header = (tmp_path / "curve.csv").read_text().splitlines()[0]
        assert header == "update,mean_reward,entropy,kl"

    def test_error_paths_return_nonzero(self, tmp_path, capsys):
        rc = main(["replay", "--policy", str(tmp_path / "missing.vslw"),
                   "--fixture", str(tmp_path / "missing.jsonl")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
