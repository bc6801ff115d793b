"""DBManager: durable CRUD over an embedded single-file SQLite store.

Entities (models, skills, memories, agents, workflows, sessions) are stored
as canonical JSON payloads with referential links checked on every write:
creating an agent that points at a missing model fails, deleting a model
still referenced by an agent conflicts unless force-cascaded. Session
messages live in an append-only table keyed (session_id, seq).

Every operation opens its own connection (WAL mode), so concurrent readers
and writers across threads and processes are safe; message appends are
serialized by an immediate transaction.
"""

from __future__ import annotations

import json
import os
import sqlite3
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentloom import schema
from agentloom.messages import Message, now_iso
from agentloom.schema import (
    Issue,
    Registry,
    SpecError,
    WorkflowSpec,
)

KINDS = ("model", "skill", "memory", "agent", "workflow", "session")
SESSION_STATUSES = ("idle", "running", "awaiting_human")

# kind -> plural used in document arrays / API routes
PLURAL = {"model": "models", "skill": "skills", "memory": "memories",
          "agent": "agents", "workflow": "workflows", "session": "sessions"}
SINGULAR = {v: k for k, v in PLURAL.items()}


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    def __init__(self, kind: str, entity_id: str):
        super().__init__(f"{kind} {entity_id!r} not found")
        self.kind = kind
        self.entity_id = entity_id


class ValidationFailed(StoreError):
    def __init__(self, issues: Iterable[Issue] | None = None, message: str | None = None):
        self.issues = tuple(issues or ())
        detail = message or "; ".join(f"{i.path}: {i.message}" for i in self.issues)
        super().__init__(detail or "validation failed")


class ConflictError(StoreError):
    def __init__(self, kind: str, entity_id: str, referrers: list[tuple[str, str]]):
        names = ", ".join(f"{k}:{i}" for k, i in referrers)
        super().__init__(f"{kind} {entity_id!r} is still referenced by {names}")
        self.referrers = referrers


@dataclass(frozen=True)
class Entity:
    kind: str
    id: str
    payload: dict
    created_at: str
    updated_at: str
    tags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "id": self.id, "payload": self.payload,
                "created_at": self.created_at, "updated_at": self.updated_at,
                "tags": list(self.tags)}


@dataclass(frozen=True)
class GalleryItem:
    kind: str
    payload: str  # a self-contained exported document
    title: str
    description: str
    version: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload, "title": self.title,
                "description": self.description, "version": self.version}


def default_data_dir() -> Path:
    base = os.environ.get("XDG_DATA_HOME") or os.path.join(os.path.expanduser("~"), ".local", "share")
    return Path(base) / "agentloom"


def default_db_path() -> Path:
    return Path(os.environ.get("AGENTLOOM_DB") or default_data_dir() / "agentloom.db")


_SCHEMA_SQL = """
CREATE TABLE IF NOT EXISTS entities (
  kind TEXT NOT NULL,
  id TEXT NOT NULL,
  payload TEXT NOT NULL,
  created_at TEXT NOT NULL,
  updated_at TEXT NOT NULL,
  tags TEXT NOT NULL DEFAULT '[]',
  PRIMARY KEY (kind, id)
);
CREATE TABLE IF NOT EXISTS messages (
  session_id TEXT NOT NULL,
  seq INTEGER NOT NULL,
  id TEXT NOT NULL,
  payload TEXT NOT NULL,
  PRIMARY KEY (session_id, seq)
);
"""


class DBManager:
    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else default_db_path()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with self._connect() as conn:
                conn.executescript(_SCHEMA_SQL)
        except sqlite3.Error as e:
            raise StoreError(f"cannot open database at {self.path}: {e}") from e

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=10.0)
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA foreign_keys=ON")
        return conn

    # -- payload validation ------------------------------------------------

    def _normalize(self, kind: str, payload: Mapping[str, Any], entity_id: str) -> dict:
        """Parse, validate, and canonicalize a payload; refs resolve against the store."""
        if kind not in KINDS:
            raise ValidationFailed(message=f"unknown entity kind {kind!r}")
        data = dict(payload)
        data["id"] = entity_id
        try:
            if kind in ("model", "skill", "memory", "agent"):
                value = schema.parse_entity(kind, data)
                issues = [i for i in schema.entity_value_issues(kind, value, kind)
                          if i.severity == "error"]
                issues.extend(self._ref_issues(kind, value))
                if issues:
                    raise ValidationFailed(issues)
                return schema.entity_to_dict(kind, value)
            if kind == "workflow":
                spec = schema.parse_workflow_core(data, Registry())
                issues = self._workflow_ref_issues(spec)
                if issues:
                    raise ValidationFailed(issues)
                return schema.workflow_core_to_dict(spec)
            return self._normalize_session(data)
        except SpecError as e:
            raise ValidationFailed(message=str(e)) from e

    def _normalize_session(self, data: dict) -> dict:
        allowed = {"id", "workflow_ref", "name", "status", "workdir"}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationFailed(message=f"session: unknown field {sorted(unknown)[0]!r}")
        workflow_ref = data.get("workflow_ref")
        if not isinstance(workflow_ref, str) or not workflow_ref:
            raise ValidationFailed(message="session.workflow_ref: required")
        if not self._exists("workflow", workflow_ref):
            raise ValidationFailed(
                issues=[Issue("error", "session.workflow_ref",
                              f"references unknown workflow {workflow_ref!r}")])
        status = data.get("status", "idle")
        if status not in SESSION_STATUSES:
            raise ValidationFailed(message=f"session.status: unknown value {status!r}")
        return {"id": data["id"], "workflow_ref": workflow_ref,
                "name": str(data.get("name", "")), "status": status,
                "workdir": str(data.get("workdir", ""))}

    def _ref_issues(self, kind: str, value: Any) -> list[Issue]:
        issues = []
        if kind == "agent":
            if value.model_ref and not self._exists("model", value.model_ref):
                issues.append(Issue("error", "agent.model_ref",
                                    f"references unknown model {value.model_ref!r}"))
            for i, ref in enumerate(value.skill_refs):
                if not self._exists("skill", ref):
                    issues.append(Issue("error", f"agent.skill_refs[{i}]",
                                        f"references unknown skill {ref!r}"))
            if value.memory_ref and not self._exists("memory", value.memory_ref):
                issues.append(Issue("error", "agent.memory_ref",
                                    f"references unknown memory {value.memory_ref!r}"))
            for i, ref in enumerate(value.members):
                member = self._try_get("agent", ref)
                if member is None:
                    issues.append(Issue("error", f"agent.members[{i}]",
                                        f"references unknown agent {ref!r}"))
                elif member.payload.get("type") == "group_chat":
                    issues.append(Issue("error", f"agent.members[{i}]", "group chats may not nest"))
        return issues

    def _workflow_ref_issues(self, spec: WorkflowSpec) -> list[Issue]:
        # Drafts are storable: the build view composes workflows incrementally,
        # so missing initiator/receiver/sequence is fine at rest. Completeness
        # is enforced when the workflow is instantiated for a run or exported.
        drafting_gaps = ("required for autonomous_chat", "sequence length must be ≥ 1")
        issues = [i for i in schema.validate(spec).errors()
                  if not i.message.startswith("references unknown")
                  and i.message not in drafting_gaps]
        for path, ref in (("workflow.initiator_ref", spec.initiator_ref),
                          ("workflow.receiver_ref", spec.receiver_ref)):
            if ref is not None and not self._exists("agent", ref):
                issues.append(Issue("error", path, f"references unknown agent {ref!r}"))
        for i, ref in enumerate(spec.sequence):
            if not self._exists("agent", ref):
                issues.append(Issue("error", f"workflow.sequence[{i}]",
                                    f"references unknown agent {ref!r}"))
        return issues

    # -- CRUD ----------------------------------------------------------------

    def create(self, kind: str, payload: Mapping[str, Any], tags: Iterable[str] = ()) -> Entity:
        entity_id = str(uuid.uuid4())
        normalized = self._normalize(kind, payload, entity_id)
        now = now_iso()
        entity = Entity(kind=kind, id=entity_id, payload=normalized,
                        created_at=now, updated_at=now, tags=tuple(tags))
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO entities (kind, id, payload, created_at, updated_at, tags) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (kind, entity_id, json.dumps(normalized, ensure_ascii=False),
                 now, now, json.dumps(list(entity.tags))))
        return entity

    def get(self, kind: str, entity_id: str) -> Entity:
        entity = self._try_get(kind, entity_id)
        if entity is None:
            raise NotFoundError(kind, entity_id)
        if kind == "session":
            refs = [m.id for m in self.load_history(entity_id)]
            payload = dict(entity.payload)
            payload["message_refs"] = refs
            entity = Entity(kind=entity.kind, id=entity.id, payload=payload,
                            created_at=entity.created_at, updated_at=entity.updated_at,
                            tags=entity.tags)
        return entity

    def _try_get(self, kind: str, entity_id: str) -> Entity | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT payload, created_at, updated_at, tags FROM entities "
                "WHERE kind = ? AND id = ?", (kind, entity_id)).fetchone()
        if row is None:
            return None
        return Entity(kind=kind, id=entity_id, payload=json.loads(row[0]),
                      created_at=row[1], updated_at=row[2], tags=tuple(json.loads(row[3])))

    def _exists(self, kind: str, entity_id: str) -> bool:
        with self._connect() as conn:
            row = conn.execute("SELECT 1 FROM entities WHERE kind = ? AND id = ?",
                               (kind, entity_id)).fetchone()
        return row is not None

    def list(self, kind: str, name_contains: str | None = None,
             tag: str | None = None) -> list[Entity]:
        if kind not in KINDS:
            raise ValidationFailed(message=f"unknown entity kind {kind!r}")
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT id, payload, created_at, updated_at, tags FROM entities "
                "WHERE kind = ? ORDER BY created_at DESC, rowid DESC", (kind,)).fetchall()
        out = []
        for row in rows:
            entity = Entity(kind=kind, id=row[0], payload=json.loads(row[1]),
                            created_at=row[2], updated_at=row[3], tags=tuple(json.loads(row[4])))
            if name_contains and name_contains.lower() not in str(
                    entity.payload.get("name", "")).lower():
                continue
            if tag and tag not in entity.tags:
                continue
            out.append(entity)
        return out

    def update(self, kind: str, entity_id: str, payload: Mapping[str, Any],
               tags: Iterable[str] | None = None) -> Entity:
        existing = self._try_get(kind, entity_id)
        if existing is None:
            raise NotFoundError(kind, entity_id)
        normalized = self._normalize(kind, payload, entity_id)
        now = now_iso()
        new_tags = existing.tags if tags is None else tuple(tags)
        with self._connect() as conn:
            conn.execute(
                "UPDATE entities SET payload = ?, updated_at = ?, tags = ? "
                "WHERE kind = ? AND id = ?",
                (json.dumps(normalized, ensure_ascii=False), now,
                 json.dumps(list(new_tags)), kind, entity_id))
        return Entity(kind=kind, id=entity_id, payload=normalized,
                      created_at=existing.created_at, updated_at=now, tags=new_tags)

    def delete(self, kind: str, entity_id: str, force: bool = False) -> None:
        if not self._exists(kind, entity_id):
            raise NotFoundError(kind, entity_id)
        referrers = self.referrers(kind, entity_id)
        if referrers and not force:
            raise ConflictError(kind, entity_id, referrers)
        for ref_kind, ref_id in referrers:
            if self._exists(ref_kind, ref_id):
                self.delete(ref_kind, ref_id, force=True)
        with self._connect() as conn:
            conn.execute("DELETE FROM entities WHERE kind = ? AND id = ?", (kind, entity_id))
            if kind == "session":
                conn.execute("DELETE FROM messages WHERE session_id = ?", (entity_id,))

    def referrers(self, kind: str, entity_id: str) -> list[tuple[str, str]]:
        """Entities whose payload references (kind, entity_id)."""
        out: list[tuple[str, str]] = []
        if kind == "model":
            out += [("agent", a.id) for a in self.list("agent")
                    if a.payload.get("model_ref") == entity_id]
        elif kind == "skill":
            out += [("agent", a.id) for a in self.list("agent")
                    if entity_id in a.payload.get("skill_refs", [])]
        elif kind == "memory":
            out += [("agent", a.id) for a in self.list("agent")
                    if a.payload.get("memory_ref") == entity_id]
        elif kind == "agent":
            out += [("agent", a.id) for a in self.list("agent")
                    if entity_id in a.payload.get("members", [])]
            for w in self.list("workflow"):
                refs = {w.payload.get("initiator_ref"), w.payload.get("receiver_ref")}
                refs.update(w.payload.get("sequence", []))
                if entity_id in refs:
                    out.append(("workflow", w.id))
        elif kind == "workflow":
            out += [("session", s.id) for s in self.list("session")
                    if s.payload.get("workflow_ref") == entity_id]
        return out

    def audit(self) -> list[str]:
        """Full-scan referential integrity check; returns violations (empty = clean)."""
        violations = []

        def check(ok: bool, owner: Entity, field: str, target: str):
            if not ok:
                violations.append(f"{owner.kind}:{owner.id}.{field} -> missing {target}")

        for a in self.list("agent"):
            p = a.payload
            if p.get("model_ref"):
                check(self._exists("model", p["model_ref"]), a, "model_ref", p["model_ref"])
            for ref in p.get("skill_refs", []):
                check(self._exists("skill", ref), a, "skill_refs", ref)
            if p.get("memory_ref"):
                check(self._exists("memory", p["memory_ref"]), a, "memory_ref", p["memory_ref"])
            for ref in p.get("members", []):
                check(self._exists("agent", ref), a, "members", ref)
        for w in self.list("workflow"):
            p = w.payload
            for field in ("initiator_ref", "receiver_ref"):
                if p.get(field):
                    check(self._exists("agent", p[field]), w, field, p[field])
            for ref in p.get("sequence", []):
                check(self._exists("agent", ref), w, "sequence", ref)
        for s in self.list("session"):
            ref = s.payload.get("workflow_ref", "")
            check(self._exists("workflow", ref), s, "workflow_ref", ref)
        return violations

    # -- session messages ------------------------------------------------------

    def append_message(self, session_id: str, msg: Message) -> None:
        if not self._exists("session", session_id):
            raise NotFoundError("session", session_id)
        payload = json.dumps(msg.to_dict(), ensure_ascii=False)
        with self._connect() as conn:
            conn.execute("BEGIN IMMEDIATE")
            conn.execute(
                "INSERT INTO messages (session_id, seq, id, payload) VALUES "
                "(?, (SELECT COALESCE(MAX(seq), -1) + 1 FROM messages WHERE session_id = ?), ?, ?)",
                (session_id, session_id, msg.id, payload))

    def load_history(self, session_id: str) -> list[Message]:
        if not self._exists("session", session_id):
            raise NotFoundError("session", session_id)
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT payload FROM messages WHERE session_id = ? ORDER BY seq",
                (session_id,)).fetchall()
        return [Message.from_dict(json.loads(r[0])) for r in rows]

    def set_session_status(self, session_id: str, status: str) -> None:
        session = self.get("session", session_id)
        payload = {k: v for k, v in session.payload.items() if k != "message_refs"}
        payload["status"] = status
        self.update("session", session_id, payload)

    def sweep_running_sessions(self) -> list[str]:
        """Startup recovery: no session can still be running after a restart."""
        swept = []
        for s in self.list("session"):
            if s.payload.get("status") in ("running", "awaiting_human"):
                self.set_session_status(s.id, "idle")
                swept.append(s.id)
        return swept

    # -- workflow resolution and gallery ----------------------------------------

    def resolve_workflow(self, workflow_id: str) -> WorkflowSpec:
        """Materialize a stored workflow into a self-contained spec by
        embedding every transitively referenced entity."""
        wf = self.get("workflow", workflow_id)
        agent_ids: list[str] = []

        def visit(ref: str):
            if ref in agent_ids:
                return
            agent_ids.append(ref)
            payload = self.get("agent", ref).payload
            for member in payload.get("members", []):
                visit(member)

        core = wf.payload
        for ref in filter(None, (core.get("initiator_ref"), core.get("receiver_ref"))):
            visit(ref)
        for ref in core.get("sequence", []):
            visit(ref)

        agents = [schema.parse_entity("agent", self.get("agent", aid).payload) for aid in agent_ids]
        model_ids = sorted({a.model_ref for a in agents if a.model_ref})
        skill_ids = sorted({ref for a in agents for ref in a.skill_refs})
        memory_ids = sorted({a.memory_ref for a in agents if a.memory_ref})
        registry = Registry(
            models=tuple(schema.parse_entity("model", self.get("model", i).payload) for i in model_ids),
            skills=tuple(schema.parse_entity("skill", self.get("skill", i).payload) for i in skill_ids),
            memories=tuple(schema.parse_entity("memory", self.get("memory", i).payload) for i in memory_ids),
            agents=tuple(sorted(agents, key=lambda a: a.id)),
        )
        return schema.parse_workflow_core(core, registry)

    def export_gallery(self, kind: str, entity_id: str) -> str:
        if kind == "workflow":
            return schema.export_workflow(self.resolve_workflow(entity_id))
        if kind == "session":
            raise ValidationFailed(message="sessions cannot be exported as gallery items")
        entity = self.get(kind, entity_id)
        if kind == "agent":
            registry = self._agent_bundle_registry(entity_id)
        else:
            value = schema.parse_entity(kind, entity.payload)
            registry = Registry(**{PLURAL[kind]: (value,)})
        return schema.export_bundle(registry)

    def _agent_bundle_registry(self, agent_id: str) -> Registry:
        agent_ids: list[str] = []

        def visit(ref: str):
            if ref in agent_ids:
                return
            agent_ids.append(ref)
            for member in self.get("agent", ref).payload.get("members", []):
                visit(member)

        visit(agent_id)
        agents = [schema.parse_entity("agent", self.get("agent", a).payload) for a in agent_ids]
        model_ids = sorted({a.model_ref for a in agents if a.model_ref})
        skill_ids = sorted({r for a in agents for r in a.skill_refs})
        memory_ids = sorted({a.memory_ref for a in agents if a.memory_ref})
        return Registry(
            models=tuple(schema.parse_entity("model", self.get("model", i).payload) for i in model_ids),
            skills=tuple(schema.parse_entity("skill", self.get("skill", i).payload) for i in skill_ids),
            memories=tuple(schema.parse_entity("memory", self.get("memory", i).payload) for i in memory_ids),
            agents=tuple(sorted(agents, key=lambda a: a.id)),
        )

    def import_gallery(self, doc: str, title: str = "", description: str = "") -> GalleryItem:
        """Import a self-contained document, assigning fresh ids throughout.

        The returned item's payload is the re-exported document carrying the
        new ids, so callers can locate the created entities.
        """
        bundle = schema.parse_bundle(doc)
        if bundle.workflow is not None:
            report = schema.validate(bundle.workflow)
        else:
            report = schema.validate_registry(bundle.registry)
        if not report.ok:
            raise ValidationFailed(report.errors())

        id_map: dict[str, str] = {}
        reg = bundle.registry
        for m in reg.models:
            id_map[m.id] = self.create("model", schema.model_to_dict(m)).id
        for s in reg.skills:
            id_map[s.id] = self.create("skill", schema.skill_to_dict(s)).id
        for mem in reg.memories:
            id_map[mem.id] = self.create("memory", schema.memory_to_dict(mem)).id
        # members may reference other agents: create non-group agents first
        for a in sorted(reg.agents, key=lambda a: a.type == "group_chat"):
            payload = schema.agent_to_dict(a)
            if payload.get("model_ref"):
                payload["model_ref"] = id_map[payload["model_ref"]]
            payload["skill_refs"] = [id_map[r] for r in payload.get("skill_refs", [])]
            if payload.get("memory_ref"):
                payload["memory_ref"] = id_map[payload["memory_ref"]]
            if payload.get("members"):
                payload["members"] = [id_map[r] for r in payload["members"]]
            id_map[a.id] = self.create("agent", payload).id

        if bundle.workflow is not None:
            core = schema.workflow_core_to_dict(bundle.workflow)
            for field in ("initiator_ref", "receiver_ref"):
                if core.get(field):
                    core[field] = id_map[core[field]]
            if core.get("sequence"):
                core["sequence"] = [id_map[r] for r in core["sequence"]]
            new_id = self.create("workflow", core).id
            payload_doc = schema.export_workflow(self.resolve_workflow(new_id))
            kind, item_title = "workflow", bundle.workflow.name
        else:
            ids_by_kind: dict[str, list[str]] = {}
            for kind_name, entities in (("model", reg.models), ("skill", reg.skills),
                                        ("memory", reg.memories), ("agent", reg.agents)):
                ids_by_kind[kind_name] = [id_map[e.id] for e in entities]
            registry = Registry(
                models=tuple(schema.parse_entity("model", self.get("model", i).payload)
                             for i in ids_by_kind["model"]),
                skills=tuple(schema.parse_entity("skill", self.get("skill", i).payload)
                             for i in ids_by_kind["skill"]),
                memories=tuple(schema.parse_entity("memory", self.get("memory", i).payload)
                               for i in ids_by_kind["memory"]),
                agents=tuple(schema.parse_entity("agent", self.get("agent", i).payload)
                             for i in ids_by_kind["agent"]),
            )
            payload_doc = schema.export_bundle(registry)
            first = next((e for group in (reg.agents, reg.skills, reg.models, reg.memories)
                          for e in group), None)
            kind = "bundle"
            item_title = getattr(first, "name", "") if first is not None else ""

        return GalleryItem(kind=kind, payload=payload_doc, title=title or item_title,
                           description=description, version=bundle.version)
