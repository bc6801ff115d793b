"""Chat-completion backends: a uniform interface over openai-compatible HTTP
providers and a deterministic scripted mock for tests and offline demos.

Every completion leaves with usage populated — taken from the provider when
present, otherwise estimated and flagged via ``usage_estimated``.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from agentloom.schema import ModelConfig, SkillSpec, SpecSchemaError

RETRY_BASE_DELAY_S = 0.5
RETRY_MAX_ATTEMPTS = 2

_sleep = time.sleep  # patched in tests


class BackendError(Exception):
    def __init__(self, message: str, status: int | None = None, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class BackendConfigError(Exception):
    """Backend cannot be constructed (missing env var, unreadable script, ...)."""


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    usage_estimated: bool = False

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens,
                "usage_estimated": self.usage_estimated}

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "Usage":
        return Usage(prompt_tokens=int(obj.get("prompt_tokens", 0)),
                     completion_tokens=int(obj.get("completion_tokens", 0)),
                     usage_estimated=bool(obj.get("usage_estimated", False)))


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": dict(self.arguments)}


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant | tool
    content: str


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str = ""
    parameters: Mapping[str, Any] = field(default_factory=lambda: {"type": "object", "additionalProperties": True})

    @staticmethod
    def for_skill(skill: SkillSpec) -> "ToolSchema":
        return ToolSchema(name=skill.name, description=skill.description)


@dataclass(frozen=True)
class ChatRequest:
    model: ModelConfig
    messages: tuple[ChatMessage, ...]
    tool_schemas: tuple[ToolSchema, ...] = ()

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest.messages must be non-empty")


@dataclass(frozen=True)
class Completion:
    content: str
    tool_calls: tuple[ToolCall, ...] = ()
    usage: Usage | None = None


@dataclass(frozen=True)
class MockScript:
    steps: tuple[Completion, ...]
    exhausted_behavior: str = "repeat_last"  # repeat_last | error

    def __post_init__(self):
        if not self.steps:
            raise ValueError("MockScript.steps must be non-empty")
        if self.exhausted_behavior not in ("repeat_last", "error"):
            raise ValueError(f"unknown exhausted_behavior {self.exhausted_behavior!r}")


def estimate_tokens(text: str) -> int:
    """Deterministic fallback token count: ceil(utf-8 bytes / 4)."""
    return (len(text.encode("utf-8")) + 3) // 4


def _estimate_usage(req: ChatRequest, content: str) -> Usage:
    prompt = sum(estimate_tokens(m.content) for m in req.messages)
    return Usage(prompt_tokens=prompt, completion_tokens=estimate_tokens(content), usage_estimated=True)


class Backend(Protocol):
    def complete(self, req: ChatRequest) -> Completion: ...


class MockBackend:
    """Replays a fixed script of completions; safe for concurrent callers."""

    def __init__(self, script: MockScript):
        self.script = script
        self._lock = threading.Lock()
        self._cursor = 0
        self.calls: list[ChatRequest] = []  # recorded prompts, for assertions

    def complete(self, req: ChatRequest) -> Completion:
        with self._lock:
            self.calls.append(req)
            steps = self.script.steps
            if self._cursor >= len(steps):
                if self.script.exhausted_behavior == "error":
                    raise BackendError(f"mock script exhausted after {len(steps)} steps")
                step = steps[-1]
            else:
                step = steps[self._cursor]
            self._cursor += 1
        if step.usage is None:
            return replace(step, usage=_estimate_usage(req, step.content))
        return step


DEFAULT_MOCK_SCRIPT = MockScript(steps=(Completion(content="Acknowledged. TERMINATE"),))


def parse_mock_script(data: str | Mapping[str, Any]) -> MockScript:
    """Parse a mock script document: {"steps": [...], "exhausted_behavior": ...}."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise SpecSchemaError("", f"mock script is not valid JSON: {e}") from e
    if not isinstance(data, Mapping):
        raise SpecSchemaError("", "mock script must be an object")
    raw_steps = data.get("steps")
    if not isinstance(raw_steps, list) or not raw_steps:
        raise SpecSchemaError("steps", "mock script needs a non-empty steps array")
    steps = []
    for i, s in enumerate(raw_steps):
        if not isinstance(s, Mapping):
            raise SpecSchemaError(f"steps[{i}]", "expected an object")
        calls = tuple(
            ToolCall(name=str(c["name"]), arguments=dict(c.get("arguments", {})))
            for c in s.get("tool_calls", [])
        )
        usage = Usage.from_dict(s["usage"]) if s.get("usage") is not None else None
        steps.append(Completion(content=str(s.get("content", "")), tool_calls=calls, usage=usage))
    behavior = data.get("exhausted_behavior", "repeat_last")
    return MockScript(steps=tuple(steps), exhausted_behavior=str(behavior))


def load_mock_script(base_url: str, base_dir: Path | None = None) -> MockScript:
    """Load a mock script from the path (or file:// URL) a mock model points at."""
    raw = base_url[len("file://"):] if base_url.startswith("file://") else base_url
    path = Path(raw)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise BackendConfigError(f"cannot read mock script {path}: {e}") from e
    return parse_mock_script(text)


class OpenAICompatibleBackend:
    """Talks the chat-completions wire format to any openai-compatible endpoint.

    The API key is read from the environment variable named by the model's
    api_key_ref at call time; construction fails fast if the variable is unset.
    """

    def __init__(self, model: ModelConfig, environ: Mapping[str, str], timeout_s: float = 60.0):
        if not model.base_url:
            raise BackendConfigError(f"model {model.id!r}: openai-compatible provider needs a base_url")
        if model.api_key_ref and model.api_key_ref not in environ:
            raise BackendConfigError(
                f"model {model.id!r}: environment variable {model.api_key_ref!r} is not set")
        self.model = model
        self._environ = environ
        self._timeout_s = timeout_s

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.model.api_key_ref:
            key = self._environ.get(self.model.api_key_ref, "")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, req: ChatRequest) -> dict:
        messages = []
        for m in req.messages:
            if m.role == "tool":
                # The generic tool role needs tool_call_id bookkeeping we do not
                # carry; stay valid for any endpoint by downgrading to user.
                messages.append({"role": "user", "content": f"[tool result] {m.content}"})
            else:
                messages.append({"role": m.role, "content": m.content})
        payload: dict[str, Any] = {
            "model": self.model.model_name,
            "messages": messages,
            "temperature": self.model.temperature,
            "max_tokens": self.model.max_tokens,
        }
        if req.tool_schemas:
            payload["tools"] = [
                {"type": "function",
                 "function": {"name": t.name, "description": t.description,
                              "parameters": dict(t.parameters)}}
                for t in req.tool_schemas
            ]
        return payload

    def complete(self, req: ChatRequest) -> Completion:
        url = self.model.base_url.rstrip("/") + "/chat/completions"
        payload = self._payload(req)
        last_error: BackendError | None = None
        for attempt in range(RETRY_MAX_ATTEMPTS):
            if attempt:
                _sleep(RETRY_BASE_DELAY_S * (2 ** (attempt - 1)))
            try:
                resp = httpx.post(url, json=payload, headers=self._headers(), timeout=self._timeout_s)
            except httpx.HTTPError as e:
                last_error = BackendError(f"transport failure: {e}", retryable=True)
                continue
            if resp.status_code >= 500:
                last_error = BackendError(f"provider error {resp.status_code}",
                                          status=resp.status_code, retryable=True)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"provider rejected request: {resp.status_code} {resp.text[:200]}",
                                   status=resp.status_code)
            return self._parse_response(req, resp)
        assert last_error is not None
        raise last_error

    def _parse_response(self, req: ChatRequest, resp: httpx.Response) -> Completion:
        try:
            body = resp.json()
            message = body["choices"][0]["message"]
        except (ValueError, LookupError, TypeError) as e:
            raise BackendError(f"malformed provider response: {e}") from e
        content = message.get("content") or ""
        tool_calls = []
        for call in message.get("tool_calls") or []:
            try:
                fn = call["function"]
                args_raw = fn.get("arguments") or "{}"
                args = json.loads(args_raw) if isinstance(args_raw, str) else dict(args_raw)
                tool_calls.append(ToolCall(name=fn["name"], arguments=args))
            except (ValueError, LookupError, TypeError) as e:
                raise BackendError(f"malformed tool call in provider response: {e}") from e
        raw_usage = body.get("usage")
        if isinstance(raw_usage, Mapping) and "prompt_tokens" in raw_usage:
            usage = Usage(prompt_tokens=int(raw_usage.get("prompt_tokens", 0)),
                          completion_tokens=int(raw_usage.get("completion_tokens", 0)),
                          usage_estimated=False)
        else:
            usage = _estimate_usage(req, content)
        return Completion(content=content, tool_calls=tuple(tool_calls), usage=usage)


def create_backend(model: ModelConfig, environ: Mapping[str, str],
                   mock_scripts: Mapping[str, MockScript] | None = None,
                   base_dir: Path | None = None) -> Backend:
    """Construct the backend for a model config.

    Mock scripts resolve from the runtime registry (by model id, then
    model_name), then from a script file named by base_url, then fall back to
    the built-in single-step script.
    """
    if model.provider == "mock":
        scripts = mock_scripts or {}
        script = scripts.get(model.id) or scripts.get(model.model_name)
        if script is None and model.base_url:
            script = load_mock_script(model.base_url, base_dir)
        return MockBackend(script or DEFAULT_MOCK_SCRIPT)
    return OpenAICompatibleBackend(model, environ)
