"""Transcript and event types shared by the engine, profiler, store, and server.

Canonical serialization rule: dict fields in declared order, one JSON object
per message/event, compact separators on the wire.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Mapping

from agentloom.backends import ToolCall, Usage
from agentloom.toolruntime import ToolResult

EVENT_KINDS = ("message", "tool_started", "tool_finished", "artifact",
               "human_input_requested", "run_finished", "run_error")

RUN_STATUSES = ("completed", "terminated_keyword", "max_turns_reached", "error", "awaiting_human")


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def new_id() -> str:
    return str(uuid.uuid4())


@dataclass(frozen=True)
class Message:
    id: str
    session_ref: str
    sender: str
    recipient: str
    role: str  # user | assistant | tool
    content: str
    turn_index: int
    created_at: str
    usage: Usage = field(default_factory=Usage)
    tool_calls: tuple[ToolCall, ...] = ()
    tool_result: ToolResult | None = None
    model: str | None = None  # model_name that produced this message, if any

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "session_ref": self.session_ref,
            "sender": self.sender,
            "recipient": self.recipient,
            "role": self.role,
            "content": self.content,
            "turn_index": self.turn_index,
            "created_at": self.created_at,
            "usage": self.usage.to_dict(),
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "tool_result": self.tool_result.to_dict() if self.tool_result else None,
            "model": self.model,
        }

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "Message":
        return Message(
            id=str(obj["id"]),
            session_ref=str(obj["session_ref"]),
            sender=str(obj["sender"]),
            recipient=str(obj["recipient"]),
            role=str(obj["role"]),
            content=str(obj["content"]),
            turn_index=int(obj["turn_index"]),
            created_at=str(obj["created_at"]),
            usage=Usage.from_dict(obj.get("usage") or {}),
            tool_calls=tuple(ToolCall(name=str(c["name"]), arguments=dict(c.get("arguments", {})))
                             for c in obj.get("tool_calls", [])),
            tool_result=ToolResult.from_dict(obj["tool_result"]) if obj.get("tool_result") else None,
            model=obj.get("model"),
        )


@dataclass(frozen=True)
class RunEvent:
    kind: str
    payload: Mapping[str, Any]
    sequence: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sequence": self.sequence, "payload": dict(self.payload)}

    def to_frame(self) -> str:
        """One canonical-serialized event per WebSocket text frame."""
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "RunEvent":
        return RunEvent(kind=str(obj["kind"]), payload=dict(obj.get("payload", {})),
                        sequence=int(obj["sequence"]))

    @staticmethod
    def from_frame(frame: str) -> "RunEvent":
        return RunEvent.from_dict(json.loads(frame))


def normalize_message_dict(obj: Mapping[str, Any]) -> dict:
    """Blank out run-unique fields (ids, timestamps) for stream/store comparisons."""
    out = dict(obj)
    out["id"] = "<id>"
    out["session_ref"] = "<session>"
    out["created_at"] = "<ts>"
    if out.get("tool_result"):
        tr = dict(out["tool_result"])
        tr["duration_s"] = 0.0
        out["tool_result"] = tr
    return out


def anonymize(msg: Message) -> Message:
    return replace(msg, id="<id>", session_ref="<session>", created_at="<ts>")
