// Session view state: the pure model behind the observe panel. Events go in,
// ordered render state comes out; the DOM layer only mirrors this.

import type { ArtifactRef, Message, ProfileReport, RunEventFrame } from "./types.js";

export interface ToolActivity {
  agent: string;
  skill: string;
  status: "running" | "success" | "failure";
}

export class SessionViewState {
  messages: Message[] = [];
  toolActivity: ToolActivity[] = [];
  artifacts: ArtifactRef[] = [];
  pendingInput: { agent: string; prompt: string } | null = null;
  lastRunStatus: string | null = null;
  lastError: string | null = null;
  profileSnapshot: ProfileReport | null = null;
  private seenMessageIds = new Set<string>();

  apply(event: RunEventFrame): void {
    switch (event.kind) {
      case "message": {
        const msg = event.payload as unknown as Message;
        if (!this.seenMessageIds.has(msg.id)) {
          this.seenMessageIds.add(msg.id);
          this.messages.push(msg);
        }
        break;
      }
      case "tool_started":
        this.toolActivity.push({
          agent: String(event.payload.agent),
          skill: String(event.payload.skill),
          status: "running",
        });
        break;
      case "tool_finished": {
        const status = event.payload.result?.status === "success" ? "success" : "failure";
        const open = [...this.toolActivity]
          .reverse()
          .find((t) => t.status === "running" && t.skill === event.payload.skill);
        if (open) open.status = status;
        break;
      }
      case "artifact":
        this.artifacts.push(event.payload.artifact as ArtifactRef);
        break;
      case "human_input_requested":
        this.pendingInput = {
          agent: String(event.payload.agent),
          prompt: String(event.payload.prompt ?? ""),
        };
        break;
      case "run_finished":
        this.lastRunStatus = String(event.payload.status);
        this.pendingInput = null;
        break;
      case "run_error":
        this.lastRunStatus = "error";
        this.lastError = String(event.payload.message ?? event.payload.code ?? "run error");
        this.pendingInput = null;
        break;
    }
  }

  /** Message ids in render order — must equal event arrival order. */
  renderedOrder(): string[] {
    return this.messages.map((m) => m.id);
  }
}
