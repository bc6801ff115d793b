// [SECONDARY acceptance] Playground live view against the live backend: every
// message event of a mock run renders in order, and the profiler chart binds
// exactly the /profile payload.

import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { chartRows } from "../src/charts.js";
import { SessionStream } from "../src/events.js";
import { SessionViewState } from "../src/transcript.js";
import type { Entity, RunEventFrame, RunResult } from "../src/types.js";
import { type Backend, startBackend } from "./server.js";

let backend: Backend;
let api: ApiClient;

const wsFactory = (url: string, protocols: string[]) =>
  new WebSocket(url, protocols) as any;

beforeAll(async () => {
  backend = await startBackend();
  api = new ApiClient(backend.baseUrl);
});

afterAll(async () => {
  await backend.stop();
});

async function makeStack(): Promise<{ workflow: Entity; session: Entity }> {
  const script = backend.scriptFile("playground.json", [
    { content: "drafting pages", tool_calls: [{ name: "leave_artifact", arguments: {} }] },
    { content: "pages look good" },
    { content: "shipping it TERMINATE" },
  ]);
  const model = await api.create("models", {
    name: "scripted", provider: "mock", model_name: "scripted-playground", base_url: script,
  });
  const skill = await api.create("skills", {
    name: "leave_artifact", description: "writes a file",
    language: "shell", source: "echo art > art.txt",
  });
  const proxy = await api.create("agents", {
    name: "user_proxy", type: "user_proxy", code_execution: false,
  });
  const assistant = await api.create("agents", {
    name: "assistant", type: "assistant", model_ref: model.id, skill_refs: [skill.id],
  });
  const workflow = await api.create("workflows", {
    name: "playground flow", pattern: "autonomous_chat",
    initiator_ref: proxy.id, receiver_ref: assistant.id,
  });
  const session = await api.create("sessions", { workflow_ref: workflow.id, name: "live" });
  return { workflow, session };
}

describe("playground live view", () => {
  it("renders every message event in order and the chart equals /profile", async () => {
    const { session } = await makeStack();
    const state = new SessionViewState();
    const received: RunEventFrame[] = [];
    let terminal: ((value: void) => void) | null = null;
    const done = new Promise<void>((resolve) => (terminal = resolve));

    const stream = new SessionStream({
      api,
      sessionId: session.id,
      wsFactory,
      onEvent: (event) => {
        received.push(event);
        state.apply(event);
        if (event.kind === "run_finished" || event.kind === "run_error") terminal?.();
      },
    });
    stream.start();
    await new Promise((r) => setTimeout(r, 300)); // let the socket attach

    const result: RunResult = await api.runTask(session.id, "make a tiny book");
    await done;
    stream.stop();

    // every message event, rendered, in event order
    const messageEventIds = received
      .filter((e) => e.kind === "message")
      .map((e) => String(e.payload.id));
    expect(state.renderedOrder()).toEqual(messageEventIds);
    expect(messageEventIds).toEqual(result.transcript.map((m) => m.id));
    expect(state.lastRunStatus).toBe("terminated_keyword");

    // tool lifecycle and artifact made it into the view state
    expect(state.toolActivity).toEqual([
      { agent: "assistant", skill: "leave_artifact", status: "success" },
    ]);
    expect(state.artifacts.map((a) => a.path)).toEqual(["art.txt"]);

    // the artifact link resolves to a server-served file
    const artifact = await fetch(api.fileUrl(session.id, "art.txt"));
    expect(artifact.status).toBe(200);
    expect((await artifact.text()).trim()).toBe("art");

    // profiler chart binds exactly the /profile payload
    const payload = await api.profile(session.id);
    const rows = chartRows(payload);
    expect(rows.map((r) => r.agent)).toEqual(Object.keys(payload.per_agent).sort());
    for (const row of rows) {
      const stats = payload.per_agent[row.agent];
      expect(row.messages).toBe(stats.messages);
      expect(row.cost).toBe(stats.cost);
      expect(row.tool_success).toBe(stats.tool_success);
      expect(row.tool_failure).toBe(stats.tool_failure);
    }
    expect(payload.total_messages).toBe(state.messages.length);
  }, 90_000);

  it("reload reconstructs the same transcript from the server", async () => {
    const { session } = await makeStack();
    await api.runTask(session.id, "second run");
    const fresh = new SessionViewState();
    for (const msg of await api.messages(session.id)) {
      fresh.apply({ kind: "message", sequence: -1, payload: msg as any });
    }
    const persisted = await api.messages(session.id);
    expect(fresh.renderedOrder()).toEqual(persisted.map((m) => m.id));
    expect(fresh.messages.length).toBeGreaterThan(0);
  }, 90_000);
});
