// Build view: define entities with forms, compose them by dragging chips onto
// compatible targets. Every successful drop issues exactly one update; the
// canvas re-renders from the server afterwards, so it only ever shows
// persisted attachments. Node positions live in the workflow's opaque "ui"
// object and are never interpreted by the engine.

import { ApiClient, ApiError } from "./api.js";
import { planDrop } from "./drop.js";
import { clear, el, toast } from "./dom.js";
import type { Entity, EntityKind } from "./types.js";

const FORM_FIELDS: Record<string, { name: string; label: string; kind: "text" | "textarea" | "select" | "number"; options?: string[]; placeholder?: string }[]> = {
  model: [
    { name: "name", label: "Name", kind: "text" },
    { name: "provider", label: "Provider", kind: "select", options: ["mock", "openai-compatible"] },
    { name: "model_name", label: "Model name", kind: "text", placeholder: "gpt-4o-mini" },
    { name: "base_url", label: "Base URL / mock script path", kind: "text" },
    { name: "api_key_ref", label: "API key env var", kind: "text", placeholder: "OPENAI_API_KEY" },
  ],
  skill: [
    { name: "name", label: "Name (function identifier)", kind: "text" },
    { name: "description", label: "Description", kind: "text" },
    { name: "language", label: "Language", kind: "select", options: ["shell", "interpreted-script"] },
    { name: "source", label: "Source", kind: "textarea" },
  ],
  memory: [
    { name: "kind", label: "Kind", kind: "select", options: ["short-term-transcript", "naive-store"] },
    { name: "capacity", label: "Capacity", kind: "number" },
  ],
  agent: [
    { name: "name", label: "Name", kind: "text" },
    { name: "type", label: "Type", kind: "select", options: ["user_proxy", "assistant", "group_chat"] },
    { name: "system_message", label: "System message", kind: "textarea" },
    { name: "human_input_mode", label: "Human input", kind: "select", options: ["never", "always", "on_termination"] },
  ],
  workflow: [
    { name: "name", label: "Name", kind: "text" },
    { name: "pattern", label: "Pattern", kind: "select", options: ["autonomous_chat", "sequential_chat"] },
  ],
};

const BUILD_KINDS: { kind: EntityKind; plural: string; title: string }[] = [
  { kind: "model", plural: "models", title: "Models" },
  { kind: "skill", plural: "skills", title: "Skills" },
  { kind: "memory", plural: "memories", title: "Memories" },
  { kind: "agent", plural: "agents", title: "Agents" },
  { kind: "workflow", plural: "workflows", title: "Workflows" },
];

export class BuildView {
  private entities = new Map<string, Entity[]>();
  private dragSource: Entity | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly onTestRun: (workflowId: string) => void,
  ) {}

  async refresh(): Promise<void> {
    for (const { plural } of BUILD_KINDS) {
      this.entities.set(plural, await this.api.list(plural));
    }
    this.render();
  }

  private byId(id: string): Entity | undefined {
    for (const list of this.entities.values()) {
      const hit = list.find((e) => e.id === id);
      if (hit) return hit;
    }
    return undefined;
  }

  private render(): void {
    clear(this.root);
    const columns = el("div", { class: "build-columns" });
    for (const section of BUILD_KINDS) {
      columns.append(this.renderColumn(section.kind, section.plural, section.title));
    }
    this.root.append(columns);
  }

  private renderColumn(kind: EntityKind, plural: string, title: string): HTMLElement {
    const list = el("div", { class: "entity-list" });
    for (const entity of this.entities.get(plural) ?? []) {
      list.append(this.renderCard(entity, plural));
    }
    const addButton = el("button", {
      class: "add-entity",
      onclick: () => this.openForm(kind, plural),
    }, `+ ${title.slice(0, -1)}`);
    return el("section", { class: "build-column", dataset: { kind } },
      el("h3", {}, title), list, addButton);
  }

  private renderCard(entity: Entity, plural: string): HTMLElement {
    const name = entity.payload.name ?? entity.payload.kind ?? entity.id.slice(0, 8);
    const card = el("div", {
      class: `entity-card kind-${entity.kind}`,
      draggable: true,
      dataset: { id: entity.id, kind: entity.kind },
      ondragstart: (ev: DragEvent) => {
        this.dragSource = entity;
        ev.dataTransfer?.setData("text/plain", entity.id);
      },
      ondragover: (ev: DragEvent) => {
        if (!this.dragSource) return;
        const decision = planDrop(this.api, this.dragSource, entity);
        if (decision.ok) {
          ev.preventDefault();
          card.classList.add("drop-ok");
        } else {
          card.classList.add("drop-reject");
        }
      },
      ondragleave: () => card.classList.remove("drop-ok", "drop-reject"),
      ondrop: (ev: DragEvent) => {
        ev.preventDefault();
        card.classList.remove("drop-ok", "drop-reject");
        void this.handleDrop(entity);
      },
    },
      el("div", { class: "entity-name" }, String(name)),
      el("div", { class: "entity-meta" }, this.describe(entity)),
      el("div", { class: "entity-actions" },
        el("button", { onclick: () => this.openForm(entity.kind, plural, entity) }, "edit"),
        el("button", {
          onclick: async () => {
            try {
              await this.api.delete(plural, entity.id);
              toast(`deleted ${name}`);
            } catch (e) {
              toast(e instanceof ApiError ? e.message : String(e), "error");
            }
            await this.refresh();
          },
        }, "delete"),
        entity.kind === "workflow"
          ? el("button", { class: "primary", onclick: () => this.onTestRun(entity.id) }, "test run")
          : null,
        entity.kind !== "session"
          ? el("button", {
              onclick: async () => {
                const doc = await this.api.exportDocument(plural, entity.id);
                downloadText(`${name}.json`, doc);
              },
            }, "export")
          : null,
      ),
    );
    return card;
  }

  private describe(entity: Entity): string {
    const p = entity.payload;
    switch (entity.kind) {
      case "model":
        return `${p.provider} · ${p.model_name}`;
      case "skill":
        return p.language;
      case "memory":
        return `${p.kind}${p.capacity ? ` ×${p.capacity}` : ""}`;
      case "agent": {
        const bits = [p.type];
        if (p.model_ref) bits.push(`model: ${this.refName(p.model_ref)}`);
        if (p.skill_refs?.length) bits.push(`skills: ${p.skill_refs.map((r: string) => this.refName(r)).join(", ")}`);
        if (p.memory_ref) bits.push("memory");
        if (p.members?.length) bits.push(`members: ${p.members.map((r: string) => this.refName(r)).join(", ")}`);
        return bits.join(" · ");
      }
      case "workflow": {
        const bits = [p.pattern];
        if (p.initiator_ref) bits.push(`initiator: ${this.refName(p.initiator_ref)}`);
        if (p.receiver_ref) bits.push(`receiver: ${this.refName(p.receiver_ref)}`);
        if (p.sequence?.length) bits.push(`sequence: ${p.sequence.map((r: string) => this.refName(r)).join(" → ")}`);
        return bits.join(" · ");
      }
      default:
        return "";
    }
  }

  private refName(id: string): string {
    return String(this.byId(id)?.payload.name ?? id.slice(0, 8));
  }

  private async handleDrop(target: Entity): Promise<void> {
    const source = this.dragSource;
    this.dragSource = null;
    if (!source || source.id === target.id) return;
    const decision = planDrop(this.api, source, target);
    if (!decision.ok) {
      toast(decision.reason, "error");
      return; // rejected visually, no API call
    }
    try {
      await decision.apply();
      toast(decision.description);
    } catch (e) {
      toast(e instanceof ApiError ? e.message : String(e), "error");
    }
    await this.refresh();
  }

  private openForm(kind: EntityKind, plural: string, existing?: Entity): void {
    const fields = FORM_FIELDS[kind] ?? [];
    const form = el("form", { class: "entity-form" });
    const inputs = new Map<string, HTMLInputElement | HTMLTextAreaElement | HTMLSelectElement>();
    for (const field of fields) {
      let input: HTMLInputElement | HTMLTextAreaElement | HTMLSelectElement;
      const current = existing?.payload[field.name];
      if (field.kind === "select") {
        input = el("select", {});
        for (const option of field.options ?? []) {
          input.append(el("option", { value: option, selected: current === option }, option));
        }
      } else if (field.kind === "textarea") {
        input = el("textarea", { rows: 5, value: current ?? "" });
      } else {
        input = el("input", { type: field.kind === "number" ? "number" : "text",
                              value: current ?? "", placeholder: field.placeholder ?? "" });
      }
      input.name = field.name;
      inputs.set(field.name, input);
      form.append(el("label", {}, field.label, input));
    }
    const error = el("div", { class: "form-error" });
    const dialog = el("dialog", { class: "form-dialog" },
      el("h3", {}, existing ? `Edit ${kind}` : `New ${kind}`),
      form,
      error,
      el("div", { class: "form-actions" },
        el("button", {
          class: "primary",
          onclick: async (ev: Event) => {
            ev.preventDefault();
            const payload: Record<string, any> = existing ? { ...existing.payload } : {};
            delete payload.message_refs;
            for (const [name, input] of inputs) {
              const raw = input.value;
              if (raw === "") {
                delete payload[name];
              } else {
                payload[name] = (input as HTMLInputElement).type === "number" ? Number(raw) : raw;
              }
            }
            try {
              if (existing) await this.api.update(plural, existing.id, payload);
              else await this.api.create(plural, payload);
              dialog.close();
              dialog.remove();
              await this.refresh();
            } catch (e) {
              // server validation errors surface inline at the offending field
              error.textContent = e instanceof ApiError ? e.message : String(e);
            }
          },
        }, "save"),
        el("button", { onclick: (ev: Event) => { ev.preventDefault(); dialog.close(); dialog.remove(); } }, "cancel"),
      ),
    );
    document.body.append(dialog);
    dialog.showModal();
  }
}

export function downloadText(filename: string, text: string): void {
  const url = URL.createObjectURL(new Blob([text], { type: "application/json" }));
  const a = el("a", { href: url, download: filename });
  document.body.append(a);
  a.click();
  a.remove();
  URL.revokeObjectURL(url);
}
