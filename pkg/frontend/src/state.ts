/**
 * Console state: a pure reducer over incoming wire messages plus pending
 * operator commands. The console never computes a speed limit itself; every
 * rendered value originates from a DecisionBatch (or the Snapshot's latest
 * batch), and batches apply strictly in sequence order.
 */

import {
  AckPayload,
  DecisionBatchPayload,
  SnapshotPayload,
  WireMessage,
} from "./wire.js";

export interface TickRow {
  tick: number;
  t_s: number;
  finals: number[];      // aligned with corridor gantry order (downstream first)
  attrs: string[];
  speeds: number[];      // critical-sensor window speed per gantry
}

export interface PendingCommand {
  seq: number;
  type: string;
  summary: string;
  status: "pending" | "acked" | "rejected";
  reason?: string;
  appliesAtTick?: number;
}

export interface ConsoleState {
  connected: boolean;
  snapshot: SnapshotPayload | null;
  gantryIds: string[];
  rows: TickRow[];                   // rolling window, oldest first
  windowTicks: number;               // default 240 = 2 h at 30 s
  pending: PendingCommand[];
  lastSeq: number;
  droppedOutOfOrder: number;
  errors: string[];
}

export function initialState(windowTicks = 240): ConsoleState {
  return {
    connected: false,
    snapshot: null,
    gantryIds: [],
    rows: [],
    windowTicks,
    pending: [],
    lastSeq: 0,
    droppedOutOfOrder: 0,
    errors: [],
  };
}

function rowFromBatch(gantryIds: string[], payload: DecisionBatchPayload): TickRow {
  const byId = new Map(payload.decisions.map((d) => [d.gantry, d]));
  return {
    tick: payload.tick,
    t_s: payload.t_s,
    finals: gantryIds.map((g) => byId.get(g)?.final ?? NaN),
    attrs: gantryIds.map((g) => byId.get(g)?.attr ?? "POLICY"),
    speeds: gantryIds.map((g) => byId.get(g)?.obs.v ?? NaN),
  };
}

function pushRow(state: ConsoleState, row: TickRow): void {
  const last = state.rows[state.rows.length - 1];
  if (last !== undefined && row.tick <= last.tick) {
    return; // duplicate tick (reconnect overlap): first occurrence wins
  }
  state.rows.push(row);
  if (state.rows.length > state.windowTicks) {
    state.rows.splice(0, state.rows.length - state.windowTicks);
  }
}

/** Apply one wire message; mutates and returns the state. */
export function reduce(state: ConsoleState, msg: WireMessage): ConsoleState {
  if (msg.seq <= state.lastSeq) {
    state.droppedOutOfOrder += 1;
    return state;
  }
  state.lastSeq = msg.seq;

  switch (msg.type) {
    case "Snapshot": {
      const snap = msg.payload as unknown as SnapshotPayload;
      state.snapshot = snap;
      state.gantryIds = snap.corridor.gantries.map((g) => g.id);
      state.connected = true;
      // rebuild: drop rows that a fresh stream will re-deliver consistently
      state.rows = state.rows.filter((r) => snap.latest === null || r.tick <= snap.latest.tick);
      if (snap.latest !== null) {
        pushRow(state, rowFromBatch(state.gantryIds, snap.latest));
      }
      break;
    }
    case "DecisionBatch": {
      if (state.gantryIds.length > 0) {
        pushRow(state, rowFromBatch(state.gantryIds, msg.payload as unknown as DecisionBatchPayload));
      }
      break;
    }
    case "SensorBatch":
      break; // gantry-aligned speeds already arrive inside decision records
    case "Heartbeat":
      state.connected = true;
      break;
    case "Ack":
    case "Error": {
      const ack = msg.payload as unknown as AckPayload;
      const target = state.pending.find((p) => p.seq === ack.ack_of);
      if (target !== undefined) {
        target.status = ack.ok ? "acked" : "rejected";
        target.reason = ack.reason;
        target.appliesAtTick = ack.applies_at_tick;
      } else if (!ack.ok) {
        state.errors.push(ack.reason ?? "unknown error");
      }
      break;
    }
    default:
      break;
  }
  return state;
}

export function markDisconnected(state: ConsoleState): ConsoleState {
  state.connected = false;
  state.lastSeq = 0; // a new connection restarts its sequence numbers
  return state;
}

export function trackCommand(state: ConsoleState, seq: number, type: string, summary: string): void {
  state.pending.push({ seq, type, summary, status: "pending" });
  if (state.pending.length > 50) {
    state.pending.splice(0, state.pending.length - 50);
  }
}

/** Latest per-gantry displays, or null before any batch arrived. */
export function latestRow(state: ConsoleState): TickRow | null {
  return state.rows.length > 0 ? state.rows[state.rows.length - 1] : null;
}

// -- client-side command validation (mirror of the gateway's checks) --------

export function validateOverrideLimit(limit: number): string | null {
  if (!Number.isFinite(limit) || limit < 30 || limit > 70 || limit % 10 !== 0) {
    return "limit must be one of 30, 40, 50, 60, 70";
  }
  return null;
}

export function validateIncident(
  state: ConsoleState,
  milepost: number,
  durationS: number,
  capacityFraction: number,
): string | null {
  const snap = state.snapshot;
  if (snap === null) return "not connected";
  const mps = snap.corridor.gantries.map((g) => g.milepost);
  const lo = Math.min(...mps) - 1.0;
  const hi = Math.max(...mps) + 1.0;
  if (!(milepost >= lo && milepost <= hi)) return `milepost outside corridor (${lo}..${hi})`;
  if (!(durationS > 0)) return "duration must be positive";
  if (!(capacityFraction >= 0 && capacityFraction < 1)) return "capacity fraction must be in [0, 1)";
  return null;
}
