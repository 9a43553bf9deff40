import json
import time

import numpy as np
import pytest

from vslcontrol.corridor import CorridorConfig, Gantry, Sensor
from vslcontrol.gateway import (GatewayService, GatewayError, build_app, ingest_fixture,
                                replay_fixture, wire_message)
from vslcontrol.guards import GuardConfig
from vslcontrol.logs import read_decision_log, write_sensor_log
from vslcontrol.policy import init_policy
from vslcontrol.sim import IncidentEvent, SimConfig
from vslcontrol.episode import MarlController, run_episode


def small_corridor(n=4):
    gantries = tuple(Gantry(f"G{i}", 4.0 - 0.5 * i, 70) for i in range(n))
    gantries = tuple(sorted(gantries, key=lambda g: g.milepost))
    sensors = tuple(Sensor(f"S{i}", 4.3 - 0.5 * i, 2) for i in range(n + 1))
    return CorridorConfig(name="gwtest", direction="WB", length_miles=5.0,
                          gantries=gantries, sensors=sensors, lanes=2)


def sim_config():
    return SimConfig(mainline_demand_profile=((0.0, 1300.0),), seed=3)


@pytest.fixture
def policy():
    return init_policy(seed=0)


def make_service(tmp_path, policy, mode="closed_loop", **kwargs):
    corridor = small_corridor()
    if mode == "closed_loop":
        kwargs.setdefault("sim_config", sim_config())
    return GatewayService(corridor, policy, GuardConfig(), mode, tmp_path / "logs", **kwargs)


class TestTickLoop:
    def test_tick_count_and_log(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=10)
        n = 0
        while service.tick_once() is not None:
            n += 1
        service.close()
        assert n == 10
        log = read_decision_log(tmp_path / "logs" / "decisions.jsonl")
        assert log.ticks() == 10
        assert len(log.records) == 10 * 4

    def test_two_hour_run_emits_240_batches(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=240)
        batches = []
        while True:
            d = service.tick_once()
            if d is None:
                break
            batches.append(d)
        service.close()
        assert len(batches) == 240
        assert batches[-1][0].tick == 239

    def test_decision_batch_payload_shape(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=2)
        decisions = service.tick_once()
        payload = service.decision_batch_payload(decisions)
        assert payload["tick"] == 0
        assert payload["t_s"] == 30.0
        assert len(payload["decisions"]) == 4
        service.close()


class TestCommands:
    def test_override_applies_at_next_tick_boundary(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=6)
        service.tick_once()
        result = service.queue_command(wire_message("MaxLimitOverride", 1,
                                                    {"gantry_id": "G1", "max_limit": 45}))
        assert result["ok"] and result["applies_at_tick"] == 1
        decisions = service.tick_once()
        byid = {d.gantry_id: d for d in decisions}
        assert byid["G1"].final <= 45
        # reset restores the configured maximum
        service.queue_command(wire_message("MaxLimitOverride", 2,
                                           {"gantry_id": "G1", "reset": True}))
        service.tick_once()
        assert service.overrides.effective_max["G1"] == 70
        service.close()

    def test_incident_command_slows_closed_loop_traffic(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=40)
        service.tick_once()
        service.queue_command(wire_message("IncidentCommand", 1,
                                           {"id": "OPS", "milepost": 2.0, "duration_s": 3000.0,
                                            "capacity_fraction": 0.25}))
        for _ in range(25):
            service.tick_once()
        speeds = service.engine.cell_speeds()
        assert speeds.min() < 30.0
        service.close()

    def test_guard_toggle_and_mslc_protection(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=4)
        ok = service.queue_command(wire_message("GuardToggle", 1,
                                                {"guard": "SM", "enabled": False}))
        assert ok["ok"]
        bad = service.queue_command(wire_message("GuardToggle", 2,
                                                 {"guard": "MSLC", "enabled": False}))
        assert not bad["ok"] and bad["reason"] == "mslc_cannot_be_disabled"
        service.tick_once()
        assert service.overrides.sm_enabled is False
        service.close()

    def test_malformed_commands_rejected_with_reason(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=2)
        cases = [
            ({"type": "MaxLimitOverride"}, "bad_version"),
            (wire_message("Nonsense", 1, {}), "unknown_type"),
            (wire_message("MaxLimitOverride", 1, {"gantry_id": "nope", "max_limit": 50}),
             "unknown_gantry"),
            (wire_message("MaxLimitOverride", 1, {"gantry_id": "G1", "max_limit": 95}),
             "limit_out_of_range"),
            (wire_message("IncidentCommand", 1, {"milepost": 2.0}), "malformed_incident"),
        ]
        for msg, reason in cases:
            out = service.queue_command(msg)
            assert not out["ok"]
            assert out["reason"] == reason
        # the loop is unaffected
        assert service.tick_once() is not None
        service.close()

    def test_commands_journaled(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=3)
        service.queue_command(wire_message("MaxLimitOverride", 1,
                                           {"gantry_id": "G2", "max_limit": 55}))
        service.tick_once()
        service.close()
        lines = (tmp_path / "logs" / "commands.jsonl").read_text().splitlines()
        entry = json.loads(lines[0])
        assert entry["command"]["payload"]["gantry_id"] == "G2"


class TestSnapshot:
    def test_fresh_snapshot(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=2)
        snap = service.snapshot_payload()
        assert snap["tick"] == 0
        assert snap["latest"] is None
        assert snap["corridor"]["digest"] == small_corridor().digest()

    def test_snapshot_reflects_latest_tick(self, tmp_path, policy):
        service = make_service(tmp_path, policy, max_ticks=5)
        service.tick_once()
        service.tick_once()
        snap = service.snapshot_payload()
        assert snap["tick"] == 2
        assert snap["latest"]["tick"] == 1
        service.close()


class TestReplay:
    def record_fixture(self, tmp_path, policy, ticks=20):
        corridor = small_corridor()
        controller = MarlController(policy, GuardConfig())
        episode = run_episode(corridor, sim_config(), controller, ticks * 30.0,
                              GuardConfig(), record_history=False)
        sensor_path = tmp_path / "sensors.jsonl"
        write_sensor_log(sensor_path, corridor, episode.readings)
        return corridor, sensor_path, episode

    def test_replay_reproduces_closed_loop_decisions_bit_identically(self, tmp_path, policy):
        corridor, sensor_path, episode = self.record_fixture(tmp_path, policy)
        n = replay_fixture(corridor, policy, GuardConfig(), sensor_path, tmp_path / "rep")
        assert n == 20
        log = read_decision_log(tmp_path / "rep" / "decisions.jsonl")
        replayed = {(r["tick"], r["gantry"]): r for r in log.records}
        for tick_decisions in episode.decisions:
            for d in tick_decisions:
                r = replayed[(d.tick, d.gantry_id)]
                assert (r["raw"], r["sm"], r["mslc"], r["final"], r["attr"]) == \
                    (d.raw_policy_action, d.after_sm, d.after_mslc, d.final, d.attribution)

    def test_replay_twice_byte_identical(self, tmp_path, policy):
        corridor, sensor_path, _ = self.record_fixture(tmp_path, policy)
        replay_fixture(corridor, policy, GuardConfig(), sensor_path, tmp_path / "r1")
        replay_fixture(corridor, policy, GuardConfig(), sensor_path, tmp_path / "r2")
        b1 = (tmp_path / "r1" / "decisions.jsonl").read_bytes()
        b2 = (tmp_path / "r2" / "decisions.jsonl").read_bytes()
        assert b1 == b2

    def test_crash_and_restart_no_duplicate_or_missing_ticks(self, tmp_path, policy):
        corridor, sensor_path, _ = self.record_fixture(tmp_path, policy)
        feed = ingest_fixture(sensor_path, corridor)

        interrupted = GatewayService(corridor, policy, GuardConfig(), "open_loop",
                                     tmp_path / "crash", feed=feed, max_ticks=8)
        while interrupted.tick_once() is not None:
            pass
        interrupted.close()

        resumed = GatewayService(corridor, policy, GuardConfig(), "open_loop",
                                 tmp_path / "crash", feed=feed, resume=True)
        n = 0
        while resumed.tick_once() is not None:
            n += 1
        resumed.close()
        assert n == 12

        log = read_decision_log(tmp_path / "crash" / "decisions.jsonl")
        ticks = [r["tick"] for r in log.records]
        assert sorted(set(ticks)) == list(range(20))
        assert len(ticks) == 20 * len(corridor.gantries)

        # identical bytes to an uninterrupted replay
        replay_fixture(corridor, policy, GuardConfig(), sensor_path, tmp_path / "full")
        assert (tmp_path / "crash" / "decisions.jsonl").read_bytes() == \
            (tmp_path / "full" / "decisions.jsonl").read_bytes()

    def test_fixture_validation(self, tmp_path, policy):
        corridor, sensor_path, _ = self.record_fixture(tmp_path, policy, ticks=3)
        feed = ingest_fixture(sensor_path, corridor)
        assert len(feed) == 3
        other = small_corridor()
        object.__setattr__(other, "name", "different")
        with pytest.raises(GatewayError, match="recorded on corridor"):
            ingest_fixture(sensor_path, other)

    def test_degraded_mode_posts_max_limits(self, tmp_path, policy):
        corridor, sensor_path, _ = self.record_fixture(tmp_path, policy, ticks=4)
        feed = ingest_fixture(sensor_path, corridor)
        # empty batches: every sensor silent
        silent = [(t, []) for t, _ in feed]
        service = GatewayService(corridor, policy, GuardConfig(staleness_limit_s=10.0),
                                 "open_loop", tmp_path / "deg", feed=silent)
        decisions = service.tick_once()
        assert all(d.final == g.max_limit for d, g in zip(decisions, corridor.gantries))
        assert all(d.attribution == "MSLC" for d in decisions)
        service.close()


class TestWebSocket:
    def client_and_service(self, tmp_path, policy, token=""):
        from starlette.testclient import TestClient
        service = make_service(tmp_path, policy, max_ticks=400)
        app = build_app(service, token=token, tick_interval_s=0.02)
        return TestClient(app), service

    def test_snapshot_then_stream_and_ack(self, tmp_path, policy):
        client, service = self.client_and_service(tmp_path, policy)
        with client:
            with client.websocket_connect("/ws") as ws:
                first = ws.receive_json()
                assert first["type"] == "Snapshot"
                assert first["v"] == 1

                ws.send_text(json.dumps(wire_message("MaxLimitOverride", 42,
                                                     {"gantry_id": "G0", "max_limit": 45})))
                seen_ack = False
                limit_seen = None
                seqs = []
                deadline = time.time() + 10.0
                while time.time() < deadline:
                    msg = ws.receive_json()
                    seqs.append(msg["seq"])
                    if msg["type"] == "Ack" and msg["payload"].get("ack_of") == 42:
                        seen_ack = True
                    if msg["type"] == "DecisionBatch" and seen_ack:
                        finals = {d["gantry"]: d["final"] for d in msg["payload"]["decisions"]}
                        if finals["G0"] <= 45:
                            limit_seen = finals["G0"]
                            break
                assert seen_ack
                assert limit_seen is not None and limit_seen <= 45
                assert seqs == sorted(seqs)          # strictly increasing per connection
        service.close()

    def test_malformed_json_gets_error(self, tmp_path, policy):
        client, service = self.client_and_service(tmp_path, policy)
        with client:
            with client.websocket_connect("/ws") as ws:
                ws.receive_json()
                ws.send_text("this is not json")
                deadline = time.time() + 5.0
                got_error = False
                while time.time() < deadline:
                    msg = ws.receive_json()
                    if msg["type"] == "Error" and msg["payload"].get("reason") == "bad_json":
                        got_error = True
                        break
                assert got_error
        service.close()

    def test_bad_token_rejected(self, tmp_path, policy):
        from starlette.websockets import WebSocketDisconnect
        client, service = self.client_and_service(tmp_path, policy, token="sekrit")
        with client:
            with pytest.raises(WebSocketDisconnect):
                with client.websocket_connect("/ws?token=wrong") as ws:
                    ws.receive_json()
            with client.websocket_connect("/ws?token=sekrit") as ws:
                assert ws.receive_json()["type"] == "Snapshot"
        service.close()
