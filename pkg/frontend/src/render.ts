/**
 * View-model construction: turns console state into plain cell grids that
 * the DOM layer paints. Kept free of document access so the exact pixels
 * the operator sees are testable as matrices.
 */

import { ConsoleState, latestRow } from "./state.js";

export interface StripCell {
  gantryId: string;
  limit: number;
  attribution: string;
  sensorSpeed: number;
  overridden: boolean;
}

const ATTR_COLORS: Record<string, string> = {
  POLICY: "#2e7d32",
  SM: "#f9a825",
  MSLC: "#c62828",
  DB: "#6a1b9a",
};

export function attributionColor(attr: string): string {
  return ATTR_COLORS[attr] ?? "#555";
}

export function speedColor(v: number): string {
  // green (fast) -> red (stopped), simple piecewise ramp
  if (!Number.isFinite(v)) return "#999";
  const t = Math.max(0, Math.min(1, v / 70));
  const r = Math.round(220 * (1 - t) + 30 * t);
  const g = Math.round(40 * (1 - t) + 170 * t);
  return `rgb(${r},${g},60)`;
}

/** Linear strip of gantries: current limit, attribution color, sensor speed. */
export function corridorStrip(state: ConsoleState): StripCell[] {
  const row = latestRow(state);
  const snap = state.snapshot;
  if (row === null || snap === null) return [];
  const overrides = snap.overrides.effective_max;
  return state.gantryIds.map((gid, j) => ({
    gantryId: gid,
    limit: row.finals[j],
    attribution: row.attrs[j],
    sensorSpeed: row.speeds[j],
    overridden: overrides[gid] !== snap.corridor.gantries[j].max_limit,
  }));
}

export interface TimeSpaceGrid {
  ticks: number[];
  gantryIds: string[];
  values: number[][];       // [tick][gantry], NaN = masked/blank
}

/** Posted limits over the rolling window; optionally blank non-policy cells. */
export function limitsGrid(state: ConsoleState, maskOverrides = false): TimeSpaceGrid {
  return {
    ticks: state.rows.map((r) => r.tick),
    gantryIds: state.gantryIds,
    values: state.rows.map((r) =>
      r.finals.map((v, j) => (maskOverrides && r.attrs[j] !== "POLICY" ? NaN : v)),
    ),
  };
}

/** Sensor speeds over the rolling window (critical sensor per gantry). */
export function speedsGrid(state: ConsoleState): TimeSpaceGrid {
  return {
    ticks: state.rows.map((r) => r.tick),
    gantryIds: state.gantryIds,
    values: state.rows.map((r) => r.speeds.slice()),
  };
}

export function gridMin(grid: TimeSpaceGrid, nearGantry?: string, radius = 2): number {
  let lo = Infinity;
  const focus = nearGantry === undefined ? -1 : grid.gantryIds.indexOf(nearGantry);
  for (const row of grid.values) {
    row.forEach((v, j) => {
      if (Number.isNaN(v)) return;
      if (focus >= 0 && Math.abs(j - focus) > radius) return;
      lo = Math.min(lo, v);
    });
  }
  return lo;
}
