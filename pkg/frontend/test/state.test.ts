import { describe, expect, it } from "vitest";

import { corridorStrip, gridMin, limitsGrid } from "../src/render.js";
import {
  initialState,
  latestRow,
  markDisconnected,
  reduce,
  trackCommand,
  validateIncident,
  validateOverrideLimit,
} from "../src/state.js";
import { WireMessage } from "../src/wire.js";

let seqCounter = 0;

function msg(type: string, payload: Record<string, unknown>, seq?: number): WireMessage {
  seqCounter = seq ?? seqCounter + 1;
  return { v: 1, type, seq: seqCounter, ts: 0, payload };
}

function snapshot(tick = 0, latest: Record<string, unknown> | null = null) {
  return msg("Snapshot", {
    corridor: {
      name: "t",
      digest: "d",
      direction: "WB",
      lanes: 4,
      period_s: 30,
      gantries: [
        { id: "G0", milepost: 55.0, max_limit: 70, x: 2.0 },
        { id: "G1", milepost: 55.5, max_limit: 70, x: 1.5 },
        { id: "G2", milepost: 56.0, max_limit: 55, x: 1.0 },
      ],
      sensors: [],
    },
    mode: "closed_loop",
    tick,
    overrides: { effective_max: { G0: 70, G1: 70, G2: 55 }, sm_enabled: true, db_enabled: true, incidents: [] },
    latest,
  });
}

function batch(tick: number, finals: number[], attrs?: string[], speeds?: number[]) {
  return msg("DecisionBatch", {
    tick,
    t_s: (tick + 1) * 30,
    decisions: finals.map((f, j) => ({
      tick,
      t_s: (tick + 1) * 30,
      gantry: `G${j}`,
      raw: f,
      sm: f,
      mslc: f,
      final: f,
      attr: attrs?.[j] ?? "POLICY",
      obs: { v: speeds?.[j] ?? 65, o: 0.1, v_up: 65, o_up: 0.1, a_down: 70 },
      max: j === 2 ? 55 : 70,
    })),
  });
}

describe("console state", () => {
  it("builds rows from snapshot plus stream in order", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    reduce(s, batch(0, [70, 70, 55]));
    reduce(s, batch(1, [60, 70, 55]));
    expect(s.rows.map((r) => r.tick)).toEqual([0, 1]);
    expect(latestRow(s)?.finals).toEqual([60, 70, 55]);
  });

  it("rendered limits come from the highest-sequence batch only", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    reduce(s, batch(0, [70, 70, 55]));
    const stale: WireMessage = { ...batch(1, [30, 30, 30]), seq: 1 }; // replayed old seq
    reduce(s, stale);
    expect(s.droppedOutOfOrder).toBe(1);
    expect(latestRow(s)?.finals).toEqual([70, 70, 55]);
  });

  it("rolling window caps retained ticks", () => {
    const s = initialState(5);
    reduce(s, snapshot(0));
    for (let t = 0; t < 12; t++) reduce(s, batch(t, [70, 70, 55]));
    expect(s.rows.length).toBe(5);
    expect(s.rows[0].tick).toBe(7);
  });

  it("reconnect rebuilds without duplicate or missing ticks", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    for (let t = 0; t < 4; t++) reduce(s, batch(t, [70, 70, 55]));
    markDisconnected(s);
    // new connection restarts seq; snapshot carries latest tick 4
    reduce(s, snapshot(5, (batch(4, [60, 70, 55]).payload as Record<string, unknown>)), );
    for (let t = 5; t < 8; t++) reduce(s, batch(t, [60, 60, 55]));
    const ticks = s.rows.map((r) => r.tick);
    expect(ticks).toEqual([0, 1, 2, 3, 4, 5, 6, 7]);
    expect(new Set(ticks).size).toBe(ticks.length);
  });

  it("acks resolve pending commands, errors carry reasons", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    trackCommand(s, 41, "MaxLimitOverride", "max 45 @ G1");
    reduce(s, msg("Ack", { ok: true, ack_of: 41, applies_at_tick: 3 }));
    expect(s.pending[0].status).toBe("acked");
    trackCommand(s, 42, "GuardToggle", "MSLC off");
    reduce(s, msg("Error", { ok: false, ack_of: 42, reason: "mslc_cannot_be_disabled" }));
    expect(s.pending[1].status).toBe("rejected");
    expect(s.pending[1].reason).toBe("mslc_cannot_be_disabled");
  });
});

describe("rendering view-models", () => {
  it("strip colors by attribution and shows sensor speeds", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    reduce(s, batch(2, [70, 60, 55], ["POLICY", "SM", "MSLC"], [68, 50, 44]));
    const strip = corridorStrip(s);
    expect(strip.map((c) => c.limit)).toEqual([70, 60, 55]);
    expect(strip.map((c) => c.attribution)).toEqual(["POLICY", "SM", "MSLC"]);
    expect(strip[2].sensorSpeed).toBe(44);
  });

  it("masked grid blanks exactly the non-policy cells", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    reduce(s, batch(0, [70, 60, 55], ["POLICY", "SM", "MSLC"]));
    const grid = limitsGrid(s, true);
    expect(grid.values[0][0]).toBe(70);
    expect(Number.isNaN(grid.values[0][1])).toBe(true);
    expect(Number.isNaN(grid.values[0][2])).toBe(true);
    const unmasked = limitsGrid(s, false);
    expect(unmasked.values[0]).toEqual([70, 60, 55]);
  });

  it("gridMin focuses near a gantry", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    reduce(s, batch(0, [70, 70, 70], undefined, [70, 20, 65]));
    expect(gridMin({ ...limitsGrid(s), values: [[70, 20, 65]] }, "G1", 0)).toBe(20);
  });
});

describe("client-side validation", () => {
  it("rejects limits off the legal menu", () => {
    expect(validateOverrideLimit(47)).not.toBeNull();
    expect(validateOverrideLimit(80)).not.toBeNull();
    expect(validateOverrideLimit(50)).toBeNull();
  });

  it("incident form checks ranges against the snapshot", () => {
    const s = initialState();
    reduce(s, snapshot(0));
    expect(validateIncident(s, 55.5, 600, 0.4)).toBeNull();
    expect(validateIncident(s, 99.0, 600, 0.4)).toMatch(/milepost/);
    expect(validateIncident(s, 55.5, -5, 0.4)).toMatch(/duration/);
    expect(validateIncident(s, 55.5, 600, 1.2)).toMatch(/capacity/);
  });
});
