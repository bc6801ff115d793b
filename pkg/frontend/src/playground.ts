// Playground view: sessions, live observe stream, human input, artifacts,
// and the profiler tab. All rendering mirrors SessionViewState, which is fed
// by the ordered event stream (or the polling fallback).

import { ApiClient, ApiError } from "./api.js";
import { barChartSvg, chartRows } from "./charts.js";
import { clear, el, toast } from "./dom.js";
import { SessionStream } from "./events.js";
import { SessionViewState } from "./transcript.js";
import type { Entity, Message } from "./types.js";

export class PlaygroundView {
  private sessions: Entity[] = [];
  private workflows: Entity[] = [];
  private current: Entity | null = null;
  private state = new SessionViewState();
  private stream: SessionStream | null = null;
  private running = false;

  private transcriptBox = el("div", { class: "transcript" });
  private toolsBox = el("div", { class: "tool-activity" });
  private artifactsBox = el("div", { class: "artifacts" });
  private profilerBox = el("div", { class: "profiler" });
  private inputPrompt = el("div", { class: "input-prompt hidden" });
  private statusLine = el("div", { class: "status-line" }, "no session selected");

  constructor(private readonly api: ApiClient, private readonly root: HTMLElement) {}

  async refresh(preselect?: string): Promise<void> {
    this.workflows = await this.api.list("workflows");
    this.sessions = await this.api.list("sessions");
    this.render();
    if (preselect) {
      const hit = this.sessions.find((s) => s.id === preselect);
      if (hit) await this.select(hit);
    }
  }

  /** Used by the build view's inline test-run: session per workflow, reused. */
  async testRun(workflowId: string): Promise<void> {
    const existing = this.sessions.find(
      (s) => s.payload.workflow_ref === workflowId && s.payload.name?.startsWith("test:"));
    const wf = this.workflows.find((w) => w.id === workflowId);
    const session = existing ?? (await this.api.create("sessions", {
      workflow_ref: workflowId,
      name: `test: ${wf?.payload.name ?? workflowId.slice(0, 8)}`,
    }));
    await this.refresh(session.id);
  }

  private render(): void {
    clear(this.root);
    const sessionList = el("div", { class: "session-list" });
    for (const session of this.sessions) {
      sessionList.append(el("button", {
        class: `session-item${this.current?.id === session.id ? " active" : ""}`,
        onclick: () => void this.select(session),
      }, `${session.payload.name || session.id.slice(0, 8)} · ${session.payload.status}`));
    }

    const workflowPick = el("select", {});
    for (const wf of this.workflows) {
      workflowPick.append(el("option", { value: wf.id }, String(wf.payload.name)));
    }
    const newSession = el("div", { class: "new-session" },
      workflowPick,
      el("button", {
        onclick: async () => {
          if (!workflowPick.value) return;
          const session = await this.api.create("sessions", { workflow_ref: workflowPick.value, name: "" });
          await this.refresh(session.id);
        },
      }, "new session"),
    );

    const taskInput = el("input", { type: "text", placeholder: "Describe the task…", class: "task-input" });
    const sendButton = el("button", {
      class: "primary",
      onclick: () => void this.runTask(taskInput.value),
    }, "run");
    taskInput.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") void this.runTask(taskInput.value);
    });

    const humanReply = el("input", { type: "text", placeholder: "Your reply…" });
    clear(this.inputPrompt).append(
      el("span", { class: "prompt-label" }, "agent is waiting for your input: "),
      humanReply,
      el("button", {
        class: "primary",
        onclick: () => {
          this.stream?.sendHumanInput(humanReply.value);
          humanReply.value = "";
          this.inputPrompt.classList.add("hidden");
        },
      }, "send"),
    );

    this.root.append(
      el("div", { class: "playground" },
        el("aside", { class: "playground-side" }, el("h3", {}, "Sessions"), sessionList, newSession),
        el("main", { class: "playground-main" },
          this.statusLine,
          el("div", { class: "observe" },
            el("section", {}, el("h4", {}, "Messages"), this.transcriptBox),
            el("section", {}, el("h4", {}, "Actions"), this.toolsBox,
              el("h4", {}, "Artifacts"), this.artifactsBox),
          ),
          this.inputPrompt,
          el("div", { class: "composer" }, taskInput, sendButton,
            el("button", { onclick: () => this.stream?.cancel() }, "cancel run"),
            el("button", { onclick: () => void this.showProfiler() }, "profiler")),
          this.profilerBox,
        ),
      ),
    );
  }

  private async select(session: Entity): Promise<void> {
    this.current = session;
    this.state = new SessionViewState();
    this.stream?.stop();
    clear(this.profilerBox);
    this.statusLine.textContent = `session ${session.payload.name || session.id.slice(0, 8)}`;

    // reload always reconstructs state from the server
    const history = await this.api.messages(session.id);
    for (const msg of history) {
      this.state.apply({ kind: "message", sequence: -1, payload: msg as any });
    }
    this.redraw();

    this.stream = new SessionStream({
      api: this.api,
      sessionId: session.id,
      onEvent: (event) => {
        this.state.apply(event);
        this.redraw();
      },
      onFallback: () => toast("live stream unavailable; polling the transcript", "error"),
    });
    this.stream.start();
    this.render();
  }

  private async runTask(task: string): Promise<void> {
    if (!this.current) {
      toast("select a session first", "error");
      return;
    }
    if (!task.trim() || this.running) return;
    this.running = true;
    this.statusLine.textContent = "running…";
    try {
      const result = await this.api.runTask(this.current.id, task);
      this.statusLine.textContent = `run finished: ${result.status}`;
    } catch (e) {
      this.statusLine.textContent = e instanceof ApiError ? e.message : String(e);
    } finally {
      this.running = false;
    }
  }

  private redraw(): void {
    clear(this.transcriptBox);
    for (const msg of this.state.messages) {
      this.transcriptBox.append(renderMessage(msg));
    }
    this.transcriptBox.scrollTop = this.transcriptBox.scrollHeight;

    clear(this.toolsBox);
    for (const tool of this.state.toolActivity) {
      this.toolsBox.append(el("div", { class: `tool tool-${tool.status}` },
        `${tool.agent} → ${tool.skill}: ${tool.status}`));
    }

    clear(this.artifactsBox);
    for (const artifact of this.state.artifacts) {
      if (!this.current) break;
      this.artifactsBox.append(el("a", {
        href: this.api.fileUrl(this.current.id, artifact.path),
        target: "_blank",
        class: `artifact artifact-${artifact.media_kind}`,
      }, `${artifact.path} (${artifact.media_kind}, ${artifact.bytes} B)`));
    }

    if (this.state.pendingInput) {
      this.inputPrompt.classList.remove("hidden");
      const label = this.inputPrompt.querySelector(".prompt-label");
      if (label) label.textContent = `${this.state.pendingInput.agent} is waiting for your input: `;
    } else {
      this.inputPrompt.classList.add("hidden");
    }
    if (this.state.lastRunStatus) {
      this.statusLine.textContent = `last run: ${this.state.lastRunStatus}` +
        (this.state.lastError ? ` (${this.state.lastError})` : "");
    }
  }

  private async showProfiler(): Promise<void> {
    if (!this.current) return;
    const report = await this.api.profile(this.current.id);
    this.state.profileSnapshot = report;
    const rows = chartRows(report);
    clear(this.profilerBox).append(
      el("h4", {}, `Profiler — ${report.total_messages} messages, ` +
        `$${report.total_cost.toFixed(4)}${report.estimated ? " (estimated)" : ""}, ` +
        `${report.duration_s.toFixed(1)}s`),
      chartPanel("messages", rows),
      chartPanel("cost", rows),
      chartPanel("tool_success", rows),
      chartPanel("tool_failure", rows),
    );
  }
}

function chartPanel(metric: "messages" | "cost" | "tool_success" | "tool_failure",
                    rows: ReturnType<typeof chartRows>): HTMLElement {
  const panel = el("figure", { class: "chart-panel" });
  panel.innerHTML = barChartSvg(rows, metric);
  panel.append(el("figcaption", {}, metric.replace("_", " ")));
  return panel;
}

function renderMessage(msg: Message): HTMLElement {
  const who = msg.role === "tool" ? `${msg.sender} → ${msg.recipient}` : msg.sender;
  return el("div", { class: `message role-${msg.role}`, dataset: { id: msg.id } },
    el("div", { class: "message-head" }, `${who} · turn ${msg.turn_index}`),
    el("pre", { class: "message-body" }, msg.content || "∅"),
    msg.tool_result
      ? el("div", { class: `tool-result tool-${msg.tool_result.status}` },
          `exit ${msg.tool_result.exit_code} in ${msg.tool_result.duration_s.toFixed(2)}s`)
      : null,
  );
}
