import { describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionStream, type WebSocketLike } from "../src/events.js";
import { SessionViewState } from "../src/transcript.js";
import type { RunEventFrame } from "../src/types.js";

function messageEvent(seq: number, id: string): RunEventFrame {
  return {
    kind: "message",
    sequence: seq,
    payload: { id, sender: "a", recipient: "b", role: "assistant", content: id },
  };
}

const finished = (seq: number): RunEventFrame => ({
  kind: "run_finished",
  sequence: seq,
  payload: { status: "terminated_keyword" },
});

class FakeSocket implements WebSocketLike {
  onopen: ((ev?: any) => void) | null = null;
  onmessage: ((ev: { data: any }) => void) | null = null;
  onerror: ((ev?: any) => void) | null = null;
  onclose: ((ev?: any) => void) | null = null;
  sent: string[] = [];
  send(data: string) {
    this.sent.push(data);
  }
  close() {
    this.onclose?.();
  }
  push(frame: RunEventFrame) {
    this.onmessage?.({ data: JSON.stringify(frame) });
  }
}

function streamWith(socket: FakeSocket) {
  const seen: RunEventFrame[] = [];
  const stream = new SessionStream({
    api: new ApiClient("http://example.invalid"),
    sessionId: "s1",
    onEvent: (e) => seen.push(e),
    wsFactory: () => socket,
  });
  stream.start();
  return { stream, seen };
}

describe("ordered delivery", () => {
  it("delivers bursty out-of-order frames strictly by sequence", () => {
    const socket = new FakeSocket();
    const { seen } = streamWith(socket);
    socket.push(messageEvent(0, "m0"));
    socket.push(messageEvent(2, "m2")); // burst arrives ahead of m1
    socket.push(messageEvent(3, "m3"));
    socket.push(messageEvent(1, "m1"));
    socket.push(finished(4));
    expect(seen.map((e) => e.sequence)).toEqual([0, 1, 2, 3, 4]);
  });

  it("resets expectations after a terminal event (next run restarts at 0)", () => {
    const socket = new FakeSocket();
    const { seen } = streamWith(socket);
    socket.push(messageEvent(0, "m0"));
    socket.push(finished(1));
    socket.push(messageEvent(0, "n0"));
    socket.push(finished(1));
    expect(seen.map((e) => e.kind)).toEqual([
      "message", "run_finished", "message", "run_finished",
    ]);
  });

  it("adopts the first observed sequence when joining mid-run", () => {
    const socket = new FakeSocket();
    const { seen } = streamWith(socket);
    socket.push(messageEvent(5, "m5"));
    socket.push(messageEvent(6, "m6"));
    expect(seen).toHaveLength(2);
  });

  it("sends human input and cancel frames", () => {
    const socket = new FakeSocket();
    const { stream } = streamWith(socket);
    stream.sendHumanInput("go on");
    stream.cancel();
    expect(socket.sent.map((s) => JSON.parse(s).kind)).toEqual(["human_input", "cancel"]);
  });
});

describe("polling fallback", () => {
  it("degrades to the transcript endpoint when the socket errors first", async () => {
    vi.useFakeTimers();
    const messages = [
      { id: "m0", sender: "a", recipient: "b", role: "user", content: "one" },
      { id: "m1", sender: "b", recipient: "a", role: "assistant", content: "two" },
    ];
    const fetchFn = vi.fn(async () =>
      new Response(JSON.stringify({ status: "ok", data: { items: messages }, message: "" })));
    const seen: RunEventFrame[] = [];
    let fallback = false;
    const socket = new FakeSocket();
    const stream = new SessionStream({
      api: new ApiClient("http://example.invalid", fetchFn as any),
      sessionId: "s1",
      onEvent: (e) => seen.push(e),
      onFallback: () => (fallback = true),
      wsFactory: () => socket,
      pollIntervalMs: 100,
    });
    stream.start();
    socket.onerror?.(new Error("no ws"));
    await vi.advanceTimersByTimeAsync(250);
    stream.stop();
    vi.useRealTimers();
    expect(fallback).toBe(true);
    expect(seen.filter((e) => e.kind === "message").map((e) => e.payload.id)).toEqual(["m0", "m1"]);
  });
});

describe("SessionViewState", () => {
  it("tracks messages, tools, artifacts, input, and status", () => {
    const state = new SessionViewState();
    state.apply(messageEvent(0, "m0"));
    state.apply({ kind: "tool_started", sequence: 1, payload: { agent: "b", skill: "echo" } });
    state.apply({
      kind: "tool_finished",
      sequence: 2,
      payload: { agent: "b", skill: "echo", result: { status: "success" } },
    });
    state.apply({
      kind: "artifact",
      sequence: 3,
      payload: { agent: "b", artifact: { path: "x.png", bytes: 3, media_kind: "image" } },
    });
    state.apply({ kind: "human_input_requested", sequence: 4, payload: { agent: "p", prompt: "?" } });
    expect(state.pendingInput?.agent).toBe("p");
    state.apply(finished(5));
    expect(state.renderedOrder()).toEqual(["m0"]);
    expect(state.toolActivity).toEqual([{ agent: "b", skill: "echo", status: "success" }]);
    expect(state.artifacts[0].path).toBe("x.png");
    expect(state.pendingInput).toBeNull();
    expect(state.lastRunStatus).toBe("terminated_keyword");
  });

  it("deduplicates replayed message ids", () => {
    const state = new SessionViewState();
    state.apply(messageEvent(0, "m0"));
    state.apply(messageEvent(0, "m0"));
    expect(state.renderedOrder()).toEqual(["m0"]);
  });
});
