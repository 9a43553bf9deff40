/**
 * Gateway client: websocket lifecycle, command dispatch, state ownership.
 * Works with the browser WebSocket or any compatible implementation (the
 * tests inject the `ws` package), and reconnects with fresh state rebuilt
 * from the server Snapshot so the rendered window never contains duplicate
 * or missing ticks.
 */

import {
  ConsoleState,
  initialState,
  markDisconnected,
  reduce,
  trackCommand,
  validateIncident,
  validateOverrideLimit,
} from "./state.js";
import { command, parseMessage } from "./wire.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => WebSocketLike;

export interface GatewayClientOptions {
  url: string;
  makeSocket: SocketFactory;
  windowTicks?: number;
  reconnectDelayMs?: number;
  onUpdate?: (state: ConsoleState) => void;
}

export class GatewayClient {
  readonly state: ConsoleState;
  private socket: WebSocketLike | null = null;
  private nextSeq = 1;
  private closed = false;

  constructor(private readonly opts: GatewayClientOptions) {
    this.state = initialState(opts.windowTicks ?? 240);
  }

  connect(): void {
    const sock = this.opts.makeSocket(this.opts.url);
    this.socket = sock;
    sock.onmessage = (ev) => {
      reduce(this.state, parseMessage(String(ev.data)));
      this.opts.onUpdate?.(this.state);
    };
    sock.onclose = () => {
      markDisconnected(this.state);
      this.opts.onUpdate?.(this.state);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.opts.reconnectDelayMs ?? 1000);
      }
    };
    sock.onerror = () => {
      /* onclose follows and handles reconnect */
    };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }

  private dispatch(type: "IncidentCommand" | "MaxLimitOverride" | "GuardToggle",
                   payload: Record<string, unknown>, summary: string): number {
    if (this.socket === null) throw new Error("not connected");
    const seq = this.nextSeq++;
    trackCommand(this.state, seq, type, summary);
    this.socket.send(command(type, seq, payload));
    this.opts.onUpdate?.(this.state);
    return seq;
  }

  /** Returns the command seq, or throws on client-side validation failure. */
  sendOverride(gantryId: string, maxLimit: number): number {
    const bad = validateOverrideLimit(maxLimit);
    if (bad !== null) throw new Error(bad);
    return this.dispatch("MaxLimitOverride", { gantry_id: gantryId, max_limit: maxLimit },
                         `max ${maxLimit} @ ${gantryId}`);
  }

  sendOverrideReset(gantryId: string): number {
    return this.dispatch("MaxLimitOverride", { gantry_id: gantryId, reset: true },
                         `reset max @ ${gantryId}`);
  }

  sendIncident(milepost: number, durationS: number, capacityFraction: number, id?: string): number {
    const bad = validateIncident(this.state, milepost, durationS, capacityFraction);
    if (bad !== null) throw new Error(bad);
    return this.dispatch("IncidentCommand",
                         { id: id ?? `OP-${Date.now()}`, milepost, duration_s: durationS,
                           capacity_fraction: capacityFraction },
                         `incident @ MM ${milepost}`);
  }

  sendToggle(guard: "SM" | "DB", enabled: boolean): number {
    return this.dispatch("GuardToggle", { guard, enabled },
                         `${guard} ${enabled ? "on" : "off"}`);
  }
}
