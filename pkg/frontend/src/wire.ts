/**
 * Wire protocol spoken by the control gateway.
 *
 * One JSON object per WebSocket text frame:
 *   { v: 1, type: string, seq: number, ts: number, payload: {...} }
 *
 * Server -> client: Snapshot, SensorBatch, DecisionBatch, Heartbeat, Ack, Error.
 * Client -> server: IncidentCommand, MaxLimitOverride, GuardToggle.
 */

export const WIRE_VERSION = 1;

export type Attribution = "POLICY" | "SM" | "MSLC" | "DB";

export interface WireMessage {
  v: number;
  type: string;
  seq: number;
  ts: number;
  payload: Record<string, unknown>;
}

export interface GantryInfo {
  id: string;
  milepost: number;
  max_limit: number;
  x: number;
}

export interface CorridorInfo {
  name: string;
  digest: string;
  direction: string;
  lanes: number;
  period_s: number;
  gantries: GantryInfo[];
  sensors: { id: string; milepost: number; x: number }[];
}

export interface DecisionRecord {
  tick: number;
  t_s: number;
  gantry: string;
  raw: number;
  sm: number;
  mslc: number;
  final: number;
  attr: Attribution;
  obs: { v: number; o: number; v_up: number; o_up: number; a_down: number };
  max: number;
}

export interface DecisionBatchPayload {
  tick: number;
  t_s: number;
  decisions: DecisionRecord[];
}

export interface SensorBatchPayload {
  t_s: number | null;
  readings: { sensor: string; t_s: number; speed: number[]; volume: number[]; occ: number[] }[];
}

export interface SnapshotPayload {
  corridor: CorridorInfo;
  mode: string;
  tick: number;
  overrides: {
    effective_max: Record<string, number>;
    sm_enabled: boolean;
    db_enabled: boolean;
    incidents: Record<string, unknown>[];
  };
  latest: DecisionBatchPayload | null;
}

export interface AckPayload {
  ok: boolean;
  ack_of?: number;
  applies_at_tick?: number;
  reason?: string;
}

export function parseMessage(raw: string): WireMessage {
  const msg = JSON.parse(raw) as WireMessage;
  if (msg.v !== WIRE_VERSION || typeof msg.type !== "string") {
    throw new Error(`unsupported wire message: ${raw.slice(0, 80)}`);
  }
  return msg;
}

export function command(
  type: "IncidentCommand" | "MaxLimitOverride" | "GuardToggle",
  seq: number,
  payload: Record<string, unknown>,
): string {
  const msg: WireMessage = { v: WIRE_VERSION, type, seq, ts: Date.now() / 1000, payload };
  return JSON.stringify(msg);
}
