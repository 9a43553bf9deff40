/**
 * Browser bootstrap: connects to the gateway named in the query string
 * (?gateway=host:port&token=...), paints the corridor strip and the two
 * time-space heatmaps, and wires the operator forms.
 */

import { GatewayClient } from "./client.js";
import { attributionColor, corridorStrip, limitsGrid, speedColor, speedsGrid } from "./render.js";
import { ConsoleState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function paintStrip(state: ConsoleState): void {
  const host = el<HTMLDivElement>("strip");
  host.replaceChildren();
  for (const cell of corridorStrip(state)) {
    const box = document.createElement("div");
    box.className = "gantry";
    box.style.borderColor = attributionColor(cell.attribution);
    if (cell.overridden) box.classList.add("overridden");
    box.title = `${cell.gantryId} (${cell.attribution})`;
    const limit = document.createElement("div");
    limit.className = "limit";
    limit.textContent = String(cell.limit);
    const speed = document.createElement("div");
    speed.className = "speed";
    speed.style.background = speedColor(cell.sensorSpeed);
    speed.textContent = `${cell.sensorSpeed.toFixed(0)}`;
    box.append(limit, speed);
    host.appendChild(box);
  }
}

function paintGrid(canvasId: string, values: number[][], vmax: number): void {
  const canvas = el<HTMLCanvasElement>(canvasId);
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const nT = values.length;
  const nG = nT > 0 ? values[0].length : 0;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (nT === 0 || nG === 0) return;
  const w = canvas.width / Math.max(nT, 240);
  const h = canvas.height / nG;
  values.forEach((row, i) => {
    row.forEach((v, j) => {
      ctx.fillStyle = Number.isNaN(v) ? "#ffffff" : speedColor((v / vmax) * 70);
      // gantry 0 is most downstream; draw it at the bottom
      ctx.fillRect(i * w, (nG - 1 - j) * h, Math.ceil(w), Math.ceil(h));
    });
  });
}

function paintPending(state: ConsoleState): void {
  const host = el<HTMLUListElement>("pending");
  host.replaceChildren();
  for (const p of state.pending.slice(-8).reverse()) {
    const li = document.createElement("li");
    li.className = p.status;
    li.textContent = `${p.summary} — ${p.status}${p.reason ? ` (${p.reason})` : ""}`;
    host.appendChild(li);
  }
}

function paint(state: ConsoleState): void {
  el<HTMLSpanElement>("status").textContent = state.connected
    ? `connected · tick ${state.snapshot?.tick ?? "?"} · ${state.snapshot?.mode ?? ""}`
    : "disconnected, retrying…";
  paintStrip(state);
  const mask = el<HTMLInputElement>("mask-overrides").checked;
  paintGrid("limits", limitsGrid(state, mask).values, 70);
  paintGrid("speeds", speedsGrid(state).values, 70);
  paintPending(state);
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const gateway = params.get("gateway") ?? "127.0.0.1:8700";
  const token = params.get("token") ?? "";
  const url = `ws://${gateway}/ws${token ? `?token=${encodeURIComponent(token)}` : ""}`;

  const client = new GatewayClient({
    url,
    makeSocket: (u) => new WebSocket(u) as unknown as import("./client.js").WebSocketLike,
    onUpdate: paint,
  });
  client.connect();

  el<HTMLButtonElement>("send-override").onclick = () => {
    try {
      client.sendOverride(
        el<HTMLInputElement>("override-gantry").value,
        Number(el<HTMLInputElement>("override-limit").value),
      );
    } catch (err) {
      alert(String(err));
    }
  };
  el<HTMLButtonElement>("send-incident").onclick = () => {
    try {
      client.sendIncident(
        Number(el<HTMLInputElement>("incident-mp").value),
        Number(el<HTMLInputElement>("incident-duration").value),
        Number(el<HTMLInputElement>("incident-capacity").value),
      );
    } catch (err) {
      alert(String(err));
    }
  };
  el<HTMLInputElement>("toggle-sm").onchange = (ev) =>
    client.sendToggle("SM", (ev.target as HTMLInputElement).checked);
  el<HTMLInputElement>("toggle-db").onchange = (ev) =>
    client.sendToggle("DB", (ev.target as HTMLInputElement).checked);
  el<HTMLInputElement>("mask-overrides").onchange = () => paint(client.state);
}

start();
