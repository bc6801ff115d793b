// Live session stream: WebSocket frames delivered strictly in sequence order
// (a small reorder buffer absorbs bursty delivery), with a polling fallback
// over the transcript endpoint when WebSockets are unavailable.

import type { ApiClient } from "./api.js";
import type { Message, RunEventFrame } from "./types.js";

export const WS_SUBPROTOCOL = "agentloom.v1";

export interface WebSocketLike {
  onopen: ((ev?: any) => void) | null;
  onmessage: ((ev: { data: any }) => void) | null;
  onerror: ((ev?: any) => void) | null;
  onclose: ((ev?: any) => void) | null;
  send(data: string): void;
  close(code?: number, reason?: string): void;
}

export type WsFactory = (url: string, protocols: string[]) => WebSocketLike;

const defaultWsFactory: WsFactory = (url, protocols) => {
  const ctor = (globalThis as any).WebSocket;
  if (!ctor) throw new Error("WebSocket is not available");
  return new ctor(url, protocols);
};

export interface SessionStreamOptions {
  api: ApiClient;
  sessionId: string;
  onEvent: (event: RunEventFrame) => void;
  onFallback?: () => void;
  wsFactory?: WsFactory;
  pollIntervalMs?: number;
}

export class SessionStream {
  private ws: WebSocketLike | null = null;
  private expected: number | null = null;
  private buffer = new Map<number, RunEventFrame>();
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private seenMessageIds = new Set<string>();
  private stopped = false;

  constructor(private readonly opts: SessionStreamOptions) {}

  start(): void {
    const factory = this.opts.wsFactory ?? defaultWsFactory;
    let sawFrame = false;
    try {
      this.ws = factory(this.opts.api.wsUrl(this.opts.sessionId), [WS_SUBPROTOCOL]);
    } catch {
      this.startPolling();
      return;
    }
    this.ws.onmessage = (ev) => {
      sawFrame = true;
      let frame: RunEventFrame;
      try {
        frame = JSON.parse(String(ev.data));
      } catch {
        return;
      }
      this.deliverOrdered(frame);
    };
    const degrade = () => {
      if (!this.stopped && !sawFrame) this.startPolling();
    };
    this.ws.onerror = degrade;
    this.ws.onclose = degrade;
  }

  stop(): void {
    this.stopped = true;
    if (this.pollTimer !== null) clearInterval(this.pollTimer);
    this.ws?.close();
  }

  sendHumanInput(content: string): void {
    this.ws?.send(JSON.stringify({ kind: "human_input", content }));
  }

  cancel(): void {
    this.ws?.send(JSON.stringify({ kind: "cancel" }));
  }

  /** Deliver in strict sequence order; hold later frames until gaps fill. */
  private deliverOrdered(frame: RunEventFrame): void {
    if (this.expected === null) this.expected = frame.sequence;
    this.buffer.set(frame.sequence, frame);
    while (this.expected !== null && this.buffer.has(this.expected)) {
      const next = this.buffer.get(this.expected)!;
      this.buffer.delete(this.expected);
      this.opts.onEvent(next);
      if (next.kind === "run_finished" || next.kind === "run_error") {
        // sequences restart at 0 for the next run on this session
        this.expected = null;
        this.buffer.clear();
      } else {
        this.expected += 1;
      }
    }
  }

  private startPolling(): void {
    if (this.pollTimer !== null) return;
    this.opts.onFallback?.();
    let synthetic = 0;
    const tick = async () => {
      try {
        const msgs = await this.opts.api.messages(this.opts.sessionId);
        for (const m of msgs) {
          if (this.seenMessageIds.has(m.id)) continue;
          this.seenMessageIds.add(m.id);
          this.opts.onEvent({
            kind: "message",
            sequence: synthetic++,
            payload: m as unknown as Record<string, any>,
          });
        }
      } catch {
        // transient; next tick retries
      }
    };
    void tick();
    this.pollTimer = setInterval(tick, this.opts.pollIntervalMs ?? 800);
  }
}

export function messageFromEvent(event: RunEventFrame): Message | null {
  return event.kind === "message" ? (event.payload as unknown as Message) : null;
}
