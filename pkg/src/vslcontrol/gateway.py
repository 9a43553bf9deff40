"""Live control gateway: the long-running decision service.

Runs the guarded control pipeline on a 30-second cadence against either an
owned simulator (closed loop: posted limits feed back into traffic) or a
replayed sensor feed (open loop: decisions are logged but touch nothing),
persists every decision to an append-only journal, and serves operator
clients over a WebSocket wire protocol.

WIRE PROTOCOL
-------------
One JSON object per WebSocket text frame:

    {"v": 1, "type": <str>, "seq": <int>, "ts": <float>, "payload": {...}}

Server-to-client types: Snapshot (on connect), SensorBatch, DecisionBatch,
Heartbeat, Ack, Error. Client-to-server command types: IncidentCommand,
MaxLimitOverride, GuardToggle. Outbound ``seq`` increases strictly per
connection; every command is answered with an Ack (carrying ``ack_of`` and
``applies_at_tick``) or an Error with a reason code. Commands are queued and
take effect atomically at the next tick boundary; no decision within a tick
reflects a command received after that tick began.

Command payloads:

    IncidentCommand    {"id", "milepost", "duration_s", "capacity_fraction"}
    MaxLimitOverride   {"gantry_id", "max_limit"} or {"gantry_id", "reset": true}
    GuardToggle        {"guard": "SM"|"DB", "enabled": bool}

Environment: VSL_LISTEN (host:port), VSL_TOKEN (shared auth token),
VSL_LOG_DIR (journal directory).
"""

from __future__ import annotations

import asyncio
import json
import os
import threading
import time
from dataclasses import dataclass, replace, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .corridor import CorridorConfig
from .guards import Decision, GuardConfig, Preprocessor, run_tick
from .logs import (DecisionLogWriter, LogFormatError, read_decision_log, read_sensor_log,
                   decision_to_record)
from .policy import PolicyParameters
from .sim import IncidentEvent, SensorReading, SimConfig, SimulationEngine

WIRE_VERSION = 1
COMMAND_TYPES = ("IncidentCommand", "MaxLimitOverride", "GuardToggle")


class GatewayError(RuntimeError):
    pass


def wire_message(msg_type: str, seq: int, payload: dict, ts: float | None = None) -> dict:
    return {"v": WIRE_VERSION, "type": msg_type, "seq": seq,
            "ts": time.time() if ts is None else ts, "payload": payload}


@dataclass
class OverrideState:
    """Operator-imposed state consumed by the pipeline at each tick."""

    effective_max: dict[str, int]
    sm_enabled: bool = True
    db_enabled: bool = True
    incidents: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {"effective_max": dict(self.effective_max), "sm_enabled": self.sm_enabled,
                "db_enabled": self.db_enabled, "incidents": list(self.incidents)}


def ingest_fixture(sensor_log_path, corridor: CorridorConfig) -> list[tuple[float, list[SensorReading]]]:
    """Parse a recorded sensor log into a time-ordered replay feed."""
    header, readings = read_sensor_log(sensor_log_path)
    if header.get("corridor") != corridor.name:
        raise GatewayError(
            f"fixture was recorded on corridor {header.get('corridor')!r}, not {corridor.name!r}")
    groups: dict[float, list[SensorReading]] = {}
    for r in readings:
        groups.setdefault(r.timestamp_s, []).append(r)
    return sorted(groups.items())


class GatewayService:
    """Tick-by-tick control loop with journaling and operator commands.

    The core is synchronous (``tick_once``); the asyncio layer adds pacing
    and fan-out. ``mode`` is "closed_loop" (an owned simulator consumes the
    posted limits) or "open_loop" (a replayed feed, decisions logged only).
    """

    def __init__(self, corridor: CorridorConfig, policy: PolicyParameters,
                 guard_config: GuardConfig, mode: str, log_dir,
                 sim_config: SimConfig | None = None,
                 feed: list[tuple[float, list[SensorReading]]] | None = None,
                 max_ticks: int | None = None, resume: bool = False):
        if mode not in ("closed_loop", "open_loop"):
            raise GatewayError(f"unknown mode {mode!r}")
        if mode == "closed_loop" and sim_config is None:
            raise GatewayError("closed_loop mode needs a sim_config")
        if mode == "open_loop" and feed is None:
            raise GatewayError("open_loop mode needs a sensor feed")
        self.corridor = corridor
        self.policy = policy
        self.guard_config = guard_config
        self.mode = mode
        self.max_ticks = max_ticks
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.decision_log_path = self.log_dir / "decisions.jsonl"
        self.command_journal_path = self.log_dir / "commands.jsonl"

        self.period_s = corridor.control_period_s
        self.tick = 0
        self.overrides = OverrideState({g.id: g.max_limit for g in corridor.gantries})
        self.pre = Preprocessor(corridor, guard_config)
        self.pending_commands: list[tuple[dict, int]] = []   # (command payload, ack seq)
        self.last_decisions: list[Decision] | None = None
        self.last_readings: list[SensorReading] = []
        self._recent: list[SensorReading] = []
        self.engine = SimulationEngine(corridor, sim_config) if mode == "closed_loop" else None
        self.feed = list(feed) if feed is not None else None
        self._feed_pos = 0
        self.broadcast_hooks = []          # callables(message dict)
        self.stopped = False
        self._command_lock = threading.Lock()

        resume_ok = resume and self.decision_log_path.exists()
        if resume_ok:
            self._resume_from_journal()
        self.writer = DecisionLogWriter(self.decision_log_path, corridor,
                                        self.period_s, resume=resume_ok)

    # -- journal recovery ---------------------------------------------------

    def _resume_from_journal(self) -> None:
        log = read_decision_log(self.decision_log_path)
        done_ticks = sorted({r["tick"] for r in log.records})
        if done_ticks:
            self.tick = done_ticks[-1] + 1
        if self.command_journal_path.exists():
            with open(self.command_journal_path) as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._apply_command_now(entry["command"])
        if self.mode == "open_loop":
            # Replay the already-processed feed prefix so preprocessor state
            # (last-known windows) matches the pre-crash run exactly.
            while self._feed_pos < len(self.feed):
                t_s, batch = self.feed[self._feed_pos]
                if t_s > self.tick * self.period_s + 1e-9:
                    break
                self._recent.extend(batch)
                self._recent = [r for r in self._recent
                                if r.timestamp_s > t_s - 2 * self.guard_config.window_s]
                self.pre.update(self._recent, t_s)
                self._feed_pos += 1

    # -- command handling -----------------------------------------------------

    def validate_command(self, msg: dict) -> str | None:
        """Returns an error reason code, or None when the command is valid."""
        if not isinstance(msg, dict) or msg.get("v") != WIRE_VERSION:
            return "bad_version"
        if msg.get("type") not in COMMAND_TYPES:
            return "unknown_type"
        p = msg.get("payload")
        if not isinstance(p, dict):
            return "missing_payload"
        if msg["type"] == "MaxLimitOverride":
            if p.get("gantry_id") not in self.overrides.effective_max:
                return "unknown_gantry"
            if not p.get("reset"):
                lim = p.get("max_limit")
                if not isinstance(lim, (int, float)):
                    return "missing_limit"
                if not self.corridor.min_limit <= lim <= self.corridor.max_limit_default:
                    return "limit_out_of_range"
        elif msg["type"] == "GuardToggle":
            guard = p.get("guard")
            if guard == "MSLC":
                return "mslc_cannot_be_disabled"
            if guard not in ("SM", "DB"):
                return "unknown_guard"
            if not isinstance(p.get("enabled"), bool):
                return "missing_enabled"
        elif msg["type"] == "IncidentCommand":
            if self.mode != "closed_loop":
                return "incidents_require_closed_loop"
            try:
                float(p["milepost"]), float(p["duration_s"]), float(p["capacity_fraction"])
            except (KeyError, TypeError, ValueError):
                return "malformed_incident"
            if not 0.0 <= p["capacity_fraction"] < 1.0:
                return "capacity_fraction_out_of_range"
        return None

    def queue_command(self, msg: dict) -> dict:
        """Validate and queue; returns the Ack or Error payload to send back."""
        reason = self.validate_command(msg)
        if reason is not None:
            return {"ok": False, "reason": reason, "ack_of": msg.get("seq")}
        with self._command_lock:
            self.pending_commands.append((msg, msg.get("seq")))
            applies_at = self.tick
        return {"ok": True, "ack_of": msg.get("seq"), "applies_at_tick": applies_at}

    def _apply_command_now(self, msg: dict) -> None:
        p = msg["payload"]
        if msg["type"] == "MaxLimitOverride":
            gid = p["gantry_id"]
            if p.get("reset"):
                self.overrides.effective_max[gid] = next(
                    g.max_limit for g in self.corridor.gantries if g.id == gid)
            else:
                self.overrides.effective_max[gid] = int(p["max_limit"])
        elif msg["type"] == "GuardToggle":
            if p["guard"] == "SM":
                self.overrides.sm_enabled = p["enabled"]
            else:
                self.overrides.db_enabled = p["enabled"]
        elif msg["type"] == "IncidentCommand":
            now = self.tick * self.period_s
            event = IncidentEvent(
                id=str(p.get("id", f"OP{self.tick}")),
                milepost=float(p["milepost"]),
                start_s=now,
                end_s=now + float(p["duration_s"]),
                capacity_fraction=float(p["capacity_fraction"]),
            )
            if self.engine is not None:
                self.engine.add_incident(event)
            self.overrides.incidents.append({"id": event.id, "milepost": event.milepost,
                                             "start_s": event.start_s, "end_s": event.end_s,
                                             "capacity_fraction": event.capacity_fraction})

    def _drain_commands(self) -> None:
        with self._command_lock:
            pending, self.pending_commands = self.pending_commands, []
        applied = []
        for msg, _seq in pending:
            self._apply_command_now(msg)
            applied.append(msg)
        if applied:
            with open(self.command_journal_path, "a") as fh:
                for msg in applied:
                    fh.write(json.dumps({"tick_applied": self.tick, "command": msg},
                                        sort_keys=True) + "\n")

    # -- the control tick -----------------------------------------------------------

    def tick_once(self) -> list[Decision] | None:
        """Run one full control period; returns the decisions, or None at feed end."""
        if self.stopped or (self.max_ticks is not None and self.tick >= self.max_ticks):
            self.stopped = True
            return None
        t_deadline = time.monotonic() + 1.0
        self._drain_commands()

        if self.mode == "closed_loop":
            limits = (np.array([float(d.final) for d in self.last_decisions])
                      if self.last_decisions is not None
                      else np.array([float(self.overrides.effective_max[g.id])
                                     for g in self.corridor.gantries]))
            substeps = int(round(self.period_s / self.engine.config.dt_s))
            for _ in range(substeps):
                self.engine.step(limits)
            batch = self.engine.emit_sensor_readings()
            now_s = self.engine.t_s
        else:
            if self._feed_pos >= len(self.feed):
                self.stopped = True
                return None
            t_s, batch = self.feed[self._feed_pos]
            self._feed_pos += 1
            now_s = t_s

        self._recent.extend(batch)
        self._recent = [r for r in self._recent
                        if r.timestamp_s > now_s - 2 * self.guard_config.window_s]
        self.last_readings = batch
        windows, degraded = self.pre.update(self._recent, now_s)

        gc = replace(self.guard_config, sm_enabled=self.overrides.sm_enabled,
                     db_enabled=self.overrides.db_enabled)
        effective = [self.overrides.effective_max[g.id] for g in self.corridor.gantries]
        decisions = run_tick(self.policy, windows, self.corridor, gc, self.tick,
                             effective_max=effective, degraded=degraded, mode="argmax")
        self.writer.write_tick(decisions, effective_max=effective)
        self.last_decisions = decisions
        self.tick += 1
        if time.monotonic() > t_deadline:
            self._emit({"type": "Error", "payload": {"reason": "tick_deadline_exceeded",
                                                     "tick": self.tick - 1}})
        return decisions

    def _emit(self, partial: dict) -> None:
        for hook in self.broadcast_hooks:
            hook(partial)

    def decision_batch_payload(self, decisions: list[Decision]) -> dict:
        return {
            "tick": decisions[0].tick,
            "t_s": (decisions[0].tick + 1) * self.period_s,
            "decisions": [decision_to_record(d, self.period_s,
                                             self.overrides.effective_max[d.gantry_id])
                          for d in decisions],
        }

    def sensor_batch_payload(self) -> dict:
        return {"t_s": self.last_readings[0].timestamp_s if self.last_readings else None,
                "readings": [{"sensor": r.sensor_id, "t_s": r.timestamp_s,
                              "speed": list(r.speed_mph), "volume": list(r.volume_veh),
                              "occ": list(r.occupancy)} for r in self.last_readings]}

    def snapshot_payload(self) -> dict:
        latest = (self.decision_batch_payload(self.last_decisions)
                  if self.last_decisions else None)
        return {
            "corridor": {
                "name": self.corridor.name,
                "digest": self.corridor.digest(),
                "direction": self.corridor.direction,
                "lanes": self.corridor.lanes,
                "period_s": self.period_s,
                "gantries": [{"id": g.id, "milepost": g.milepost, "max_limit": g.max_limit,
                              "x": self.corridor.travel_offset(g.milepost)}
                             for g in self.corridor.gantries],
                "sensors": [{"id": s.id, "milepost": s.milepost,
                             "x": self.corridor.travel_offset(s.milepost)}
                            for s in self.corridor.sensors],
            },
            "mode": self.mode,
            "tick": self.tick,
            "overrides": self.overrides.to_payload(),
            "latest": latest,
        }

    def close(self) -> None:
        self.writer.close()


def replay_fixture(corridor: CorridorConfig, policy: PolicyParameters,
                   guard_config: GuardConfig, sensor_log_path, log_dir,
                   resume: bool = False) -> int:
    """Open-loop replay of a recorded sensor log; returns ticks processed.

    With ``resume`` the service continues an interrupted replay from its
    journal: already-logged ticks are skipped (their sensor data still flows
    through preprocessing so downstream decisions are bit-identical) and no
    tick is duplicated.
    """
    feed = ingest_fixture(sensor_log_path, corridor)
    service = GatewayService(corridor, policy, guard_config, "open_loop", log_dir,
                             feed=feed, resume=resume)
    n = 0
    while service.tick_once() is not None:
        n += 1
    service.close()
    return n


# -- asyncio / websocket layer ---------------------------------------------------------


def build_app(service: GatewayService, token: str = "", tick_interval_s: float | None = None,
              client_queue_size: int = 64):
    """FastAPI app exposing the wire protocol at /ws and health at /healthz.

    ``tick_interval_s`` is the wall-time pacing between control ticks
    (defaults to the corridor period; 0 runs as fast as possible, the usual
    setting for tests and accelerated demos).
    """
    import contextlib

    interval = service.period_s if tick_interval_s is None else tick_interval_s
    clients: dict[int, asyncio.Queue] = {}
    state = {"next_client": 0}

    async def broadcast(msg_type: str, payload: dict):
        for cid, q in list(clients.items()):
            msg = wire_message(msg_type, 0, payload)    # seq assigned per connection on send
            try:
                q.put_nowait(msg)
            except asyncio.QueueFull:
                # Slow consumer: drop the connection rather than the cadence.
                clients.pop(cid, None)

    async def control_loop():
        while not service.stopped:
            started = time.monotonic()
            decisions = await asyncio.to_thread(service.tick_once)
            if decisions is None:
                break
            await broadcast("SensorBatch", service.sensor_batch_payload())
            await broadcast("DecisionBatch", service.decision_batch_payload(decisions))
            await broadcast("Heartbeat", {"tick": service.tick, "mode": service.mode})
            if interval > 0:
                elapsed = time.monotonic() - started
                await asyncio.sleep(max(0.0, interval - elapsed))

    @contextlib.asynccontextmanager
    async def lifespan(_app):
        task = asyncio.create_task(control_loop())
        yield
        service.stopped = True
        task.cancel()

    app = FastAPI(title="vsl-gateway", lifespan=lifespan)

    @app.get("/healthz")
    async def healthz():
        return {"tick": service.tick, "mode": service.mode, "stopped": service.stopped}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        if token and ws.query_params.get("token") != token:
            await ws.close(code=1008)
            return
        await ws.accept()
        cid = state["next_client"]
        state["next_client"] += 1
        queue: asyncio.Queue = asyncio.Queue(maxsize=client_queue_size)
        clients[cid] = queue
        seq = 0

        async def send(msg: dict):
            nonlocal seq
            seq += 1
            msg = dict(msg, seq=seq)
            await ws.send_text(json.dumps(msg, sort_keys=True))

        await send(wire_message("Snapshot", 0, service.snapshot_payload()))

        async def pump():
            while True:
                msg = await queue.get()
                await send(msg)

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await send(wire_message("Error", 0, {"ok": False, "reason": "bad_json"}))
                    continue
                result = service.queue_command(msg)
                kind = "Ack" if result.get("ok") else "Error"
                await send(wire_message(kind, 0, result))
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            clients.pop(cid, None)

    return app


def service_from_env(corridor, policy, guard_config, mode, **kwargs) -> tuple[GatewayService, str, str]:
    listen = os.environ.get("VSL_LISTEN", "127.0.0.1:8700")
    token = os.environ.get("VSL_TOKEN", "")
    log_dir = os.environ.get("VSL_LOG_DIR", "gateway_logs")
    service = GatewayService(corridor, policy, guard_config, mode, log_dir, **kwargs)
    return service, listen, token
