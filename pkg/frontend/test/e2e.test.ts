/**
 * End-to-end operator loop against a live gateway (acceptance criterion for
 * the console): boots the python websocket service in accelerated
 * closed-loop mode, connects the real client/state/render pipeline through
 * a real WebSocket, sends a max-limit override and an incident, and asserts
 *
 *   - the affected gantry's displayed limit respects the override at the
 *     next tick, and
 *   - the sensor-speed heatmap shows the slowdown forming near the injected
 *     milepost within the sensor lag.
 *
 * No headless browser ships in this environment, so the "browser level" is
 * the exact modules the browser bundle runs (client, state, render) over
 * the `ws` WebSocket implementation.
 */

import { ChildProcess, spawn } from "node:child_process";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GatewayClient, WebSocketLike } from "../src/client.js";
import { corridorStrip, gridMin, speedsGrid } from "../src/render.js";

const ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");
const PORT = 8731;
const TOKEN = "console-e2e";

let gateway: ChildProcess;

async function waitForHealth(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/healthz`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("gateway did not come up");
}

function makeClient(onUpdate?: () => void): GatewayClient {
  const client = new GatewayClient({
    url: `ws://127.0.0.1:${PORT}/ws?token=${TOKEN}`,
    makeSocket: (url) => new WebSocket(url) as unknown as WebSocketLike,
    reconnectDelayMs: 200,
    onUpdate,
  });
  client.connect();
  return client;
}

async function until(cond: () => boolean, timeoutMs = 30000, what = "condition"): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (cond()) return;
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`timed out waiting for ${what}`);
}

beforeAll(async () => {
  gateway = spawn(
    "python3",
    ["-m", "vslcontrol.cli", "run-live",
     "--mode", "closed",
     "--policy", path.join(ROOT, "artifacts", "trained_policy.vslw"),
     "--corridor", path.join(ROOT, "configs", "i24_wb_17mi.yaml"),
     "--listen", `127.0.0.1:${PORT}`,
     "--tick-interval", "0.05",
     "--max-ticks", "4000"],
    {
      cwd: ROOT,
      env: { ...process.env, VSL_TOKEN: TOKEN, VSL_LOG_DIR: path.join(ROOT, "frontend", ".e2e-logs") },
      stdio: ["ignore", "pipe", "pipe"],
    },
  );
  gateway.stderr?.on("data", (d) => process.stderr.write(`[gateway] ${d}`));
  await waitForHealth();
}, 60000);

afterAll(() => {
  gateway?.kill("SIGTERM");
});

describe("operator loop against a live gateway", () => {
  it("snapshot arrives and the strip renders every gantry", async () => {
    const client = makeClient();
    await until(() => client.state.snapshot !== null, 30000, "snapshot");
    await until(() => client.state.rows.length >= 2, 30000, "first decision batches");
    const strip = corridorStrip(client.state);
    expect(strip.length).toBe(34);
    expect(strip.every((c) => c.limit >= 30 && c.limit <= 70)).toBe(true);
    client.close();
  });

  it("override shows up on the affected gantry by the next tick", async () => {
    const client = makeClient();
    await until(() => client.state.rows.length >= 1, 30000, "stream");
    const tickWhenSent = client.state.rows[client.state.rows.length - 1].tick;
    const seq = client.sendOverride("G12", 40);
    await until(
      () => client.state.pending.find((p) => p.seq === seq)?.status === "acked",
      30000, "override ack",
    );
    await until(() => {
      const row = client.state.rows[client.state.rows.length - 1];
      return row.tick > tickWhenSent && row.finals[client.state.gantryIds.indexOf("G12")] <= 40;
    }, 30000, "override visible");
    // every subsequent row respects the override
    const idx = client.state.gantryIds.indexOf("G12");
    const after = client.state.rows.filter((r) => r.tick > tickWhenSent + 1);
    expect(after.length).toBeGreaterThan(0);
    expect(after.every((r) => r.finals[idx] <= 40)).toBe(true);

    client.sendOverrideReset("G12");
    client.close();
  });

  it("client-side validation rejects an illegal limit without sending", async () => {
    const client = makeClient();
    await until(() => client.state.snapshot !== null, 30000, "snapshot");
    const before = client.state.pending.length;
    expect(() => client.sendOverride("G12", 47)).toThrow(/limit/);
    expect(client.state.pending.length).toBe(before);
    client.close();
  });

  it("incident injection produces a visible slowdown near its milepost", async () => {
    const client = makeClient();
    await until(() => client.state.snapshot !== null && client.state.rows.length >= 1,
                30000, "stream");
    // nearest gantry to MM 59.0 is G12 at 58.75 (its sensor sits just downstream)
    const seq = client.sendIncident(59.0, 3000, 0.2, "E2E");
    await until(
      () => client.state.pending.find((p) => p.seq === seq)?.status === "acked",
      30000, "incident ack",
    );
    await until(() => {
      const lo = gridMin(speedsGrid(client.state), "G12", 2);
      return Number.isFinite(lo) && lo < 40;
    }, 60000, "slowdown in heatmap near G12");
    // limits near the incident must have reacted below the maximum too
    const idx = client.state.gantryIds.indexOf("G12");
    const recent = client.state.rows.slice(-5);
    const nearby = recent.some((r) =>
      r.finals.slice(Math.max(0, idx - 2), idx + 3).some((v) => v < 70));
    expect(nearby).toBe(true);
    client.close();
  }, 90000);
});
