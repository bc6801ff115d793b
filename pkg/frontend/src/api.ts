// Thin typed client over the REST envelope {status, data, message, code}.

import type { Entity, GalleryItem, Message, ProfileReport, RunResult } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly code: string,
    public readonly status: number,
    public readonly data: any = null,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "Content-Type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    let envelope: any;
    try {
      envelope = await resp.json();
    } catch {
      throw new ApiError(`invalid response from ${path}`, "bad_envelope", resp.status);
    }
    if (envelope.status !== "ok") {
      throw new ApiError(
        envelope.message ?? "request failed",
        envelope.code ?? "error",
        resp.status,
        envelope.data ?? null,
      );
    }
    return envelope.data as T;
  }

  list(plural: string, query = ""): Promise<Entity[]> {
    return this.request<{ items: Entity[] }>("GET", `/api/${plural}${query}`).then((d) => d.items);
  }

  get(plural: string, id: string): Promise<Entity> {
    return this.request("GET", `/api/${plural}/${id}`);
  }

  create(plural: string, payload: Record<string, any>): Promise<Entity> {
    return this.request("POST", `/api/${plural}`, payload);
  }

  /** POST with id = update; the server bumps updated_at. */
  update(plural: string, id: string, payload: Record<string, any>): Promise<Entity> {
    return this.request("POST", `/api/${plural}`, { ...payload, id });
  }

  delete(plural: string, id: string, force = false): Promise<{ deleted: string }> {
    return this.request("DELETE", `/api/${plural}/${id}${force ? "?force=true" : ""}`);
  }

  runTask(sessionId: string, task: string): Promise<RunResult> {
    return this.request("POST", `/api/sessions/${sessionId}/run`, { task });
  }

  messages(sessionId: string): Promise<Message[]> {
    return this.request<{ items: Message[] }>("GET", `/api/sessions/${sessionId}/messages`).then(
      (d) => d.items,
    );
  }

  profile(sessionId: string): Promise<ProfileReport> {
    return this.request("GET", `/api/sessions/${sessionId}/profile`);
  }

  exportDocument(plural: string, id: string): Promise<string> {
    return this.request<{ document: string }>("GET", `/api/${plural}/${id}/export`).then(
      (d) => d.document,
    );
  }

  importDocument(plural: string, document: string, title = ""): Promise<GalleryItem> {
    return this.request("POST", `/api/${plural}/import`, { document, title });
  }

  fileUrl(sessionId: string, path: string): string {
    return `${this.baseUrl}/api/sessions/${sessionId}/files/${path}`;
  }

  wsUrl(sessionId: string): string {
    const base = this.baseUrl || (typeof location !== "undefined" ? location.origin : "");
    return `${base.replace(/^http/, "ws")}/api/ws/sessions/${sessionId}`;
  }
}
