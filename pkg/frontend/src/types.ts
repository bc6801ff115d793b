// Wire types mirroring the server's canonical JSON forms.

export type EntityKind = "model" | "skill" | "memory" | "agent" | "workflow" | "session";

export const KIND_PLURAL: Record<EntityKind, string> = {
  model: "models",
  skill: "skills",
  memory: "memories",
  agent: "agents",
  workflow: "workflows",
  session: "sessions",
};

export interface Entity {
  kind: EntityKind;
  id: string;
  payload: Record<string, any>;
  created_at: string;
  updated_at: string;
  tags: string[];
}

export interface Usage {
  prompt_tokens: number;
  completion_tokens: number;
  usage_estimated: boolean;
}

export interface ToolResult {
  status: "success" | "failure";
  exit_code: number;
  stdout: string;
  stderr: string;
  duration_s: number;
  artifacts: ArtifactRef[];
  failure_kind: string | null;
}

export interface ArtifactRef {
  path: string;
  bytes: number;
  media_kind: "image" | "code" | "document" | "data" | "other";
}

export interface Message {
  id: string;
  session_ref: string;
  sender: string;
  recipient: string;
  role: "user" | "assistant" | "tool";
  content: string;
  turn_index: number;
  created_at: string;
  usage: Usage;
  tool_calls: { name: string; arguments: Record<string, any> }[];
  tool_result: ToolResult | null;
  model: string | null;
}

export type EventKind =
  | "message"
  | "tool_started"
  | "tool_finished"
  | "artifact"
  | "human_input_requested"
  | "run_finished"
  | "run_error";

export interface RunEventFrame {
  kind: EventKind;
  sequence: number;
  payload: Record<string, any>;
}

export interface AgentStats {
  messages: number;
  prompt_tokens: number;
  completion_tokens: number;
  cost: number;
  tool_calls: number;
  tool_success: number;
  tool_failure: number;
}

export interface ProfileReport {
  total_messages: number;
  per_agent: Record<string, AgentStats>;
  total_cost: number;
  estimated: boolean;
  duration_s: number;
}

export interface RunResult {
  status: string;
  final_message: Message | null;
  transcript: Message[];
  profile: ProfileReport;
}

export interface GalleryItem {
  kind: string;
  payload: string;
  title: string;
  description: string;
  version: string;
}
