// Drag-and-drop attachment rules. Ports are typed by entity kind: a drop is
// either rejected with no network traffic, or applied as exactly one update
// to the target entity. Persisted payloads are the single source of truth;
// the canvas only ever renders links that exist on the server.

import type { ApiClient } from "./api.js";
import type { Entity } from "./types.js";

export type WorkflowSlot = "initiator" | "receiver" | "sequence";

export type DropDecision =
  | { ok: false; reason: string }
  | { ok: true; description: string; apply: () => Promise<Entity> };

function strip(payload: Record<string, any>): Record<string, any> {
  const { message_refs: _refs, ...rest } = payload;
  return rest;
}

export function planDrop(
  api: ApiClient,
  source: Entity,
  target: Entity,
  slot?: WorkflowSlot,
): DropDecision {
  if (source.kind === "model" && target.kind === "agent") {
    const payload = { ...strip(target.payload), model_ref: source.id };
    return {
      ok: true,
      description: `attach model to ${target.payload.name}`,
      apply: () => api.update("agents", target.id, payload),
    };
  }

  if (source.kind === "skill" && target.kind === "agent") {
    const refs: string[] = [...(target.payload.skill_refs ?? [])];
    if (refs.includes(source.id)) {
      return { ok: false, reason: "skill already attached" };
    }
    refs.push(source.id);
    return {
      ok: true,
      description: `attach skill to ${target.payload.name}`,
      apply: () => api.update("agents", target.id, { ...strip(target.payload), skill_refs: refs }),
    };
  }

  if (source.kind === "memory" && target.kind === "agent") {
    return {
      ok: true,
      description: `attach memory to ${target.payload.name}`,
      apply: () => api.update("agents", target.id, { ...strip(target.payload), memory_ref: source.id }),
    };
  }

  if (source.kind === "agent" && target.kind === "agent") {
    if (target.payload.type !== "group_chat") {
      return { ok: false, reason: "agents only attach to group chats" };
    }
    if (source.payload.type === "group_chat") {
      return { ok: false, reason: "group chats may not nest" };
    }
    const members: string[] = [...(target.payload.members ?? [])];
    if (members.includes(source.id)) {
      return { ok: false, reason: "already a member" };
    }
    members.push(source.id);
    return {
      ok: true,
      description: `add ${source.payload.name} to ${target.payload.name}`,
      apply: () => api.update("agents", target.id, { ...strip(target.payload), members }),
    };
  }

  if (source.kind === "agent" && target.kind === "workflow") {
    const payload = { ...strip(target.payload) };
    if (payload.pattern === "sequential_chat") {
      const sequence: string[] = [...(payload.sequence ?? []), source.id];
      return {
        ok: true,
        description: `append ${source.payload.name} to the sequence`,
        apply: () => api.update("workflows", target.id, { ...payload, sequence }),
      };
    }
    let field: "initiator_ref" | "receiver_ref";
    if (slot === "initiator") field = "initiator_ref";
    else if (slot === "receiver") field = "receiver_ref";
    else if (!payload.receiver_ref) field = "receiver_ref";
    else if (!payload.initiator_ref) field = "initiator_ref";
    else field = "receiver_ref";
    if (payload[field] === source.id) {
      return { ok: false, reason: `already the ${field.replace("_ref", "")}` };
    }
    return {
      ok: true,
      description: `set ${source.payload.name} as ${field.replace("_ref", "")}`,
      apply: () => api.update("workflows", target.id, { ...payload, [field]: source.id }),
    };
  }

  return { ok: false, reason: `${source.kind} does not attach to ${target.kind}` };
}
