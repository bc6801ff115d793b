"""Declarative entity model: models, skills, memories, agents, workflows.

The external document format is UTF-8 JSON with a top-level object
``{version, workflow, agents[], models[], skills[], memories[]}``. Parsing
rejects unknown fields and unknown versions; validation reports broken
invariants without raising; export emits a canonical form (schema key order,
2-space indent, registry arrays sorted by id) that is a fixpoint of
parse-then-export.

Nothing in this module touches the network or the filesystem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

SCHEMA_VERSION = "1.0"
KNOWN_VERSIONS = ("1.0",)

PROVIDERS = ("openai-compatible", "mock")
SKILL_LANGUAGES = ("shell", "interpreted-script")
MEMORY_KINDS = ("short-term-transcript", "naive-store")
AGENT_TYPES = ("user_proxy", "assistant", "group_chat")
HUMAN_INPUT_MODES = ("never", "always", "on_termination")
SPEAKER_SELECTION = ("round_robin", "model_selected")
WORKFLOW_PATTERNS = ("autonomous_chat", "sequential_chat")
SUMMARY_METHODS = ("last_message", "truncated_concat")

DEFAULT_MAX_TURNS = 10
DEFAULT_TERMINATION_KEYWORD = "TERMINATE"
DEFAULT_MAX_CONSECUTIVE_REPLIES = 10


class SpecError(Exception):
    """Base class for document parsing failures."""


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"syntax error at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SpecSchemaError(SpecError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.reason = message


class UnsupportedVersionError(SpecSchemaError):
    def __init__(self, version: str):
        super().__init__("version", f"unsupported schema version {version!r} (known: {', '.join(KNOWN_VERSIONS)})")
        self.version = version


class InvalidSpecError(SpecError):
    """Raised when an operation requires a spec that passes validate()."""

    def __init__(self, report: "ValidationReport"):
        first = report.issues[0] if report.issues else None
        detail = f"{first.path}: {first.message}" if first else "invalid spec"
        super().__init__(f"spec failed validation: {detail}")
        self.report = report


@dataclass(frozen=True)
class Pricing:
    prompt_per_1k: float
    completion_per_1k: float


@dataclass(frozen=True)
class ModelConfig:
    id: str
    name: str
    provider: str
    model_name: str
    base_url: str | None = None
    api_key_ref: str | None = None
    temperature: float = 0.7
    max_tokens: int = 2048
    pricing: Pricing | None = None


@dataclass(frozen=True)
class SkillSpec:
    id: str
    name: str
    description: str
    language: str
    source: str
    timeout_s: float = 30.0
    env_allowlist: tuple[str, ...] = ()


@dataclass(frozen=True)
class MemorySpec:
    id: str
    kind: str
    capacity: int | None = None


@dataclass(frozen=True)
class AgentSpec:
    id: str
    type: str
    name: str
    system_message: str = ""
    model_ref: str | None = None
    skill_refs: tuple[str, ...] = ()
    memory_ref: str | None = None
    max_consecutive_replies: int = DEFAULT_MAX_CONSECUTIVE_REPLIES
    human_input_mode: str = "never"
    code_execution: bool | None = None  # omitted -> type default (user_proxy: True)

    # group_chat only
    members: tuple[str, ...] = ()
    speaker_selection: str = "round_robin"

    def __post_init__(self):
        if self.code_execution is None:
            object.__setattr__(self, "code_execution", self.type == "user_proxy")

    @property
    def executes_code(self) -> bool:
        return bool(self.code_execution)


@dataclass(frozen=True)
class Termination:
    max_turns: int = DEFAULT_MAX_TURNS
    termination_keyword: str = DEFAULT_TERMINATION_KEYWORD


@dataclass(frozen=True)
class Registry:
    """Embedded entity registry; arrays are kept sorted by id (canonical order)."""

    models: tuple[ModelConfig, ...] = ()
    skills: tuple[SkillSpec, ...] = ()
    memories: tuple[MemorySpec, ...] = ()
    agents: tuple[AgentSpec, ...] = ()

    def model(self, ref: str) -> ModelConfig | None:
        return next((m for m in self.models if m.id == ref), None)

    def skill(self, ref: str) -> SkillSpec | None:
        return next((s for s in self.skills if s.id == ref), None)

    def memory(self, ref: str) -> MemorySpec | None:
        return next((m for m in self.memories if m.id == ref), None)

    def agent(self, ref: str) -> AgentSpec | None:
        return next((a for a in self.agents if a.id == ref), None)


@dataclass(frozen=True)
class WorkflowSpec:
    id: str
    name: str
    pattern: str
    version: str = SCHEMA_VERSION
    initiator_ref: str | None = None
    receiver_ref: str | None = None
    sequence: tuple[str, ...] = ()
    termination: Termination = field(default_factory=Termination)
    summary_method: str = "last_message"
    registry: Registry = field(default_factory=Registry)
    ui: Mapping[str, Any] | None = None  # opaque layout blob, never interpreted


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    path: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    def errors(self) -> tuple[Issue, ...]:
        return tuple(i for i in self.issues if i.severity == "error")


# ---------------------------------------------------------------------------
# Field-level parsing helpers. Every helper reports the offending field path.
# ---------------------------------------------------------------------------


def _require(obj: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in obj:
        raise SpecSchemaError(f"{path}.{key}" if path else key, "required field is missing")
    return obj[key]


def _as_obj(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, dict):
        raise SpecSchemaError(path, f"expected an object, got {type(value).__name__}")
    return value


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SpecSchemaError(path, f"expected a string, got {type(value).__name__}")
    return value


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise SpecSchemaError(path, f"expected a boolean, got {type(value).__name__}")
    return value


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecSchemaError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _as_real(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecSchemaError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _as_list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise SpecSchemaError(path, f"expected an array, got {type(value).__name__}")
    return value


def _as_str_list(value: Any, path: str) -> tuple[str, ...]:
    return tuple(_as_str(v, f"{path}[{i}]") for i, v in enumerate(_as_list(value, path)))


def _as_enum(value: Any, path: str, allowed: tuple[str, ...]) -> str:
    s = _as_str(value, path)
    if s not in allowed:
        raise SpecSchemaError(path, f"unknown value {s!r} (expected one of: {', '.join(allowed)})")
    return s


def _reject_unknown(obj: Mapping[str, Any], known: tuple[str, ...], path: str) -> None:
    for key in obj:
        if key not in known:
            raise SpecSchemaError(f"{path}.{key}" if path else key, "unknown field")


# ---------------------------------------------------------------------------
# Entity parsers (dict -> spec value). Reused by the persistence layer for
# payload validation, so they accept plain dicts, not only whole documents.
# ---------------------------------------------------------------------------

_MODEL_FIELDS = ("id", "name", "provider", "base_url", "api_key_ref", "model_name",
                 "temperature", "max_tokens", "pricing")
_PRICING_FIELDS = ("prompt_per_1k", "completion_per_1k")
_SKILL_FIELDS = ("id", "name", "description", "language", "source", "timeout_s", "env_allowlist")
_MEMORY_FIELDS = ("id", "kind", "capacity")
_AGENT_FIELDS = ("id", "type", "name", "system_message", "model_ref", "skill_refs", "memory_ref",
                 "max_consecutive_replies", "human_input_mode", "code_execution",
                 "members", "speaker_selection")
_WORKFLOW_FIELDS = ("id", "name", "pattern", "initiator_ref", "receiver_ref", "sequence",
                    "termination", "summary_method", "ui")
_TERMINATION_FIELDS = ("max_turns", "termination_keyword")
_DOC_FIELDS = ("version", "workflow", "agents", "models", "skills", "memories")


def parse_model(obj: Mapping[str, Any], path: str = "model") -> ModelConfig:
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _MODEL_FIELDS, path)
    pricing = None
    if obj.get("pricing") is not None:
        pobj = _as_obj(obj["pricing"], f"{path}.pricing")
        _reject_unknown(pobj, _PRICING_FIELDS, f"{path}.pricing")
        pricing = Pricing(
            prompt_per_1k=_as_real(_require(pobj, "prompt_per_1k", f"{path}.pricing"), f"{path}.pricing.prompt_per_1k"),
            completion_per_1k=_as_real(_require(pobj, "completion_per_1k", f"{path}.pricing"), f"{path}.pricing.completion_per_1k"),
        )
    return ModelConfig(
        id=_as_str(_require(obj, "id", path), f"{path}.id"),
        name=_as_str(_require(obj, "name", path), f"{path}.name"),
        provider=_as_enum(_require(obj, "provider", path), f"{path}.provider", PROVIDERS),
        model_name=_as_str(_require(obj, "model_name", path), f"{path}.model_name"),
        base_url=None if obj.get("base_url") is None else _as_str(obj["base_url"], f"{path}.base_url"),
        api_key_ref=None if obj.get("api_key_ref") is None else _as_str(obj["api_key_ref"], f"{path}.api_key_ref"),
        temperature=_as_real(obj["temperature"], f"{path}.temperature") if "temperature" in obj else 0.7,
        max_tokens=_as_int(obj["max_tokens"], f"{path}.max_tokens") if "max_tokens" in obj else 2048,
        pricing=pricing,
    )


def parse_skill(obj: Mapping[str, Any], path: str = "skill") -> SkillSpec:
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _SKILL_FIELDS, path)
    return SkillSpec(
        id=_as_str(_require(obj, "id", path), f"{path}.id"),
        name=_as_str(_require(obj, "name", path), f"{path}.name"),
        description=_as_str(obj.get("description", ""), f"{path}.description"),
        language=_as_enum(_require(obj, "language", path), f"{path}.language", SKILL_LANGUAGES),
        source=_as_str(_require(obj, "source", path), f"{path}.source"),
        timeout_s=_as_real(obj["timeout_s"], f"{path}.timeout_s") if "timeout_s" in obj else 30.0,
        env_allowlist=_as_str_list(obj.get("env_allowlist", []), f"{path}.env_allowlist"),
    )


def parse_memory(obj: Mapping[str, Any], path: str = "memory") -> MemorySpec:
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _MEMORY_FIELDS, path)
    return MemorySpec(
        id=_as_str(_require(obj, "id", path), f"{path}.id"),
        kind=_as_enum(_require(obj, "kind", path), f"{path}.kind", MEMORY_KINDS),
        capacity=None if obj.get("capacity") is None else _as_int(obj["capacity"], f"{path}.capacity"),
    )


def parse_agent(obj: Mapping[str, Any], path: str = "agent") -> AgentSpec:
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _AGENT_FIELDS, path)
    agent_type = _as_enum(_require(obj, "type", path), f"{path}.type", AGENT_TYPES)
    return AgentSpec(
        id=_as_str(_require(obj, "id", path), f"{path}.id"),
        type=agent_type,
        name=_as_str(_require(obj, "name", path), f"{path}.name"),
        system_message=_as_str(obj.get("system_message", ""), f"{path}.system_message"),
        model_ref=None if obj.get("model_ref") is None else _as_str(obj["model_ref"], f"{path}.model_ref"),
        skill_refs=_as_str_list(obj.get("skill_refs", []), f"{path}.skill_refs"),
        memory_ref=None if obj.get("memory_ref") is None else _as_str(obj["memory_ref"], f"{path}.memory_ref"),
        max_consecutive_replies=_as_int(obj["max_consecutive_replies"], f"{path}.max_consecutive_replies")
        if "max_consecutive_replies" in obj else DEFAULT_MAX_CONSECUTIVE_REPLIES,
        human_input_mode=_as_enum(obj.get("human_input_mode", "never"), f"{path}.human_input_mode", HUMAN_INPUT_MODES),
        code_execution=None if "code_execution" not in obj else _as_bool(obj["code_execution"], f"{path}.code_execution"),
        members=_as_str_list(obj.get("members", []), f"{path}.members"),
        speaker_selection=_as_enum(obj.get("speaker_selection", "round_robin"),
                                   f"{path}.speaker_selection", SPEAKER_SELECTION),
    )


def parse_termination(obj: Mapping[str, Any], path: str = "termination") -> Termination:
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _TERMINATION_FIELDS, path)
    return Termination(
        max_turns=_as_int(obj["max_turns"], f"{path}.max_turns") if "max_turns" in obj else DEFAULT_MAX_TURNS,
        termination_keyword=_as_str(obj.get("termination_keyword", DEFAULT_TERMINATION_KEYWORD),
                                    f"{path}.termination_keyword"),
    )


def parse_workflow_core(obj: Mapping[str, Any], registry: Registry,
                        version: str = SCHEMA_VERSION, path: str = "workflow") -> WorkflowSpec:
    """Parse workflow-core fields against an already-built registry."""
    obj = _as_obj(obj, path)
    _reject_unknown(obj, _WORKFLOW_FIELDS, path)
    pattern = _as_enum(_require(obj, "pattern", path), f"{path}.pattern", WORKFLOW_PATTERNS)
    ui = None
    if obj.get("ui") is not None:
        ui = _canonical_opaque(_as_obj(obj["ui"], f"{path}.ui"))
    return WorkflowSpec(
        id=_as_str(_require(obj, "id", path), f"{path}.id"),
        name=_as_str(_require(obj, "name", path), f"{path}.name"),
        pattern=pattern,
        version=version,
        initiator_ref=None if obj.get("initiator_ref") is None else _as_str(obj["initiator_ref"], f"{path}.initiator_ref"),
        receiver_ref=None if obj.get("receiver_ref") is None else _as_str(obj["receiver_ref"], f"{path}.receiver_ref"),
        sequence=_as_str_list(obj.get("sequence", []), f"{path}.sequence"),
        termination=parse_termination(obj["termination"], f"{path}.termination") if "termination" in obj else Termination(),
        summary_method=_as_enum(obj.get("summary_method", "last_message"),
                                f"{path}.summary_method", SUMMARY_METHODS),
        registry=registry,
        ui=ui,
    )


def _canonical_opaque(value: Any) -> Any:
    """Rebuild an opaque JSON value with recursively sorted object keys."""
    if isinstance(value, dict):
        return {k: _canonical_opaque(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_canonical_opaque(v) for v in value]
    return value


def _parse_registry(obj: Mapping[str, Any]) -> Registry:
    models = tuple(parse_model(m, f"models[{i}]") for i, m in enumerate(_as_list(obj.get("models", []), "models")))
    skills = tuple(parse_skill(s, f"skills[{i}]") for i, s in enumerate(_as_list(obj.get("skills", []), "skills")))
    memories = tuple(parse_memory(m, f"memories[{i}]") for i, m in enumerate(_as_list(obj.get("memories", []), "memories")))
    agents = tuple(parse_agent(a, f"agents[{i}]") for i, a in enumerate(_as_list(obj.get("agents", []), "agents")))
    return Registry(
        models=tuple(sorted(models, key=lambda e: e.id)),
        skills=tuple(sorted(skills, key=lambda e: e.id)),
        memories=tuple(sorted(memories, key=lambda e: e.id)),
        agents=tuple(sorted(agents, key=lambda e: e.id)),
    )


def _load_doc(doc: str) -> Mapping[str, Any]:
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise SpecSyntaxError(e.msg, e.lineno, e.colno) from e
    if not isinstance(data, dict):
        raise SpecSchemaError("", f"expected a top-level object, got {type(data).__name__}")
    version = _as_str(_require(data, "version", ""), "version")
    if version not in KNOWN_VERSIONS:
        raise UnsupportedVersionError(version)
    _reject_unknown(data, _DOC_FIELDS, "")
    return data


def parse_workflow(doc: str) -> WorkflowSpec:
    """Parse a workflow document; the top-level ``workflow`` key is required."""
    data = _load_doc(doc)
    registry = _parse_registry(data)
    workflow = _require(data, "workflow", "")
    return parse_workflow_core(workflow, registry, _as_str(data["version"], "version"))


@dataclass(frozen=True)
class Bundle:
    """A gallery document: an entity registry with an optional workflow."""

    version: str
    registry: Registry
    workflow: WorkflowSpec | None = None


def parse_bundle(doc: str) -> Bundle:
    """Parse a component bundle; ``workflow`` is optional (gallery sharing)."""
    data = _load_doc(doc)
    registry = _parse_registry(data)
    version = _as_str(data["version"], "version")
    workflow = None
    if data.get("workflow") is not None:
        workflow = parse_workflow_core(data["workflow"], registry, version)
    return Bundle(version=version, registry=registry, workflow=workflow)


# ---------------------------------------------------------------------------
# Validation. Problems are reported, never raised.
# ---------------------------------------------------------------------------


def validate(spec: WorkflowSpec) -> ValidationReport:
    issues = list(_registry_issues(spec.registry))
    reg = spec.registry
    w = "workflow"

    if not spec.id:
        issues.append(Issue("error", f"{w}.id", "identifier must be non-empty"))
    if spec.termination.max_turns < 1:
        issues.append(Issue("error", f"{w}.termination.max_turns", "max_turns must be ≥ 1"))
    if spec.termination.termination_keyword == "":
        issues.append(Issue("warning", f"{w}.termination.termination_keyword",
                            "empty keyword matches every message; runs terminate immediately"))

    if spec.pattern == "autonomous_chat":
        for fname, ref in (("initiator_ref", spec.initiator_ref), ("receiver_ref", spec.receiver_ref)):
            if ref is None:
                issues.append(Issue("error", f"{w}.{fname}", "required for autonomous_chat"))
            elif reg.agent(ref) is None:
                issues.append(Issue("error", f"{w}.{fname}", f"references unknown agent {ref!r}"))
        if spec.initiator_ref is not None and spec.initiator_ref == spec.receiver_ref:
            issues.append(Issue("error", f"{w}.receiver_ref", "initiator_ref and receiver_ref must differ"))
        if spec.sequence:
            issues.append(Issue("warning", f"{w}.sequence", "sequence is ignored for autonomous_chat"))
    else:  # sequential_chat
        if len(spec.sequence) < 1:
            issues.append(Issue("error", f"{w}.sequence", "sequence length must be ≥ 1"))
        for i, ref in enumerate(spec.sequence):
            if reg.agent(ref) is None:
                issues.append(Issue("error", f"{w}.sequence[{i}]", f"references unknown agent {ref!r}"))

    # Unreferenced registry entries are allowed but flagged.
    referenced = _transitive_refs(spec)
    for kind, entities in (("models", reg.models), ("skills", reg.skills),
                           ("memories", reg.memories), ("agents", reg.agents)):
        for e in entities:
            if (kind, e.id) not in referenced:
                issues.append(Issue("warning", f"{kind}[{e.id}]", "entity is not referenced by the workflow"))

    return ValidationReport(tuple(issues))


def validate_registry(registry: Registry) -> ValidationReport:
    """Validate a registry on its own (gallery component bundles)."""
    return ValidationReport(tuple(_registry_issues(registry)))


def model_issues(m: ModelConfig, path: str = "model") -> list[Issue]:
    issues = []
    if not (0.0 <= m.temperature <= 2.0):
        issues.append(Issue("error", f"{path}.temperature", "temperature must be within [0, 2]"))
    if m.max_tokens < 1:
        issues.append(Issue("error", f"{path}.max_tokens", "max_tokens must be ≥ 1"))
    if m.pricing is not None and (m.pricing.prompt_per_1k < 0 or m.pricing.completion_per_1k < 0):
        issues.append(Issue("error", f"{path}.pricing", "pricing rates must be ≥ 0"))
    if m.provider == "openai-compatible" and not m.api_key_ref:
        issues.append(Issue("warning", f"{path}.api_key_ref",
                            "openai-compatible models usually need an api_key_ref"))
    return issues


def skill_issues(s: SkillSpec, path: str = "skill") -> list[Issue]:
    issues = []
    if not s.name.isidentifier():
        issues.append(Issue("error", f"{path}.name", f"{s.name!r} is not a valid function identifier"))
    if not s.source:
        issues.append(Issue("error", f"{path}.source", "source must be non-empty"))
    if s.timeout_s <= 0:
        issues.append(Issue("error", f"{path}.timeout_s", "timeout_s must be > 0"))
    return issues


def memory_issues(m: MemorySpec, path: str = "memory") -> list[Issue]:
    if m.capacity is not None and m.capacity < 1:
        return [Issue("error", f"{path}.capacity", "capacity must be ≥ 1")]
    return []


def agent_value_issues(a: AgentSpec, path: str = "agent") -> list[Issue]:
    """Agent invariants that need no reference resolution."""
    issues = []
    if a.max_consecutive_replies < 1:
        issues.append(Issue("error", f"{path}.max_consecutive_replies", "must be ≥ 1"))
    if a.type == "assistant" and a.model_ref is None:
        issues.append(Issue("error", f"{path}.model_ref", "assistant agents require a model_ref"))
    if a.type == "group_chat":
        if len(a.members) < 2:
            issues.append(Issue("error", f"{path}.members", "members length must be ≥ 2"))
    elif a.members:
        issues.append(Issue("error", f"{path}.members", "only group_chat agents have members"))
    return issues


def entity_value_issues(kind: str, value: Any, path: str | None = None) -> list[Issue]:
    checker = {"model": model_issues, "skill": skill_issues,
               "memory": memory_issues, "agent": agent_value_issues}[kind]
    return checker(value, path or kind)


def _registry_issues(reg: Registry) -> list[Issue]:
    issues: list[Issue] = []

    for kind, entities in (("models", reg.models), ("skills", reg.skills),
                           ("memories", reg.memories), ("agents", reg.agents)):
        seen: set[str] = set()
        for e in entities:
            if not e.id:
                issues.append(Issue("error", f"{kind}[{e.id}].id", "identifier must be non-empty"))
            if e.id in seen:
                issues.append(Issue("error", f"{kind}[{e.id}]", f"duplicate id {e.id!r}"))
            seen.add(e.id)

    for m in reg.models:
        issues.extend(model_issues(m, f"models[{m.id}]"))

    names: set[str] = set()
    for s in reg.skills:
        p = f"skills[{s.id}]"
        issues.extend(skill_issues(s, p))
        if s.name in names:
            issues.append(Issue("error", f"{p}.name", f"duplicate skill name {s.name!r}"))
        names.add(s.name)

    for mem in reg.memories:
        issues.extend(memory_issues(mem, f"memories[{mem.id}]"))

    for a in reg.agents:
        p = f"agents[{a.id}]"
        issues.extend(agent_value_issues(a, p))
        if a.model_ref is not None and reg.model(a.model_ref) is None:
            issues.append(Issue("error", f"{p}.model_ref", f"references unknown model {a.model_ref!r}"))
        for i, ref in enumerate(a.skill_refs):
            if reg.skill(ref) is None:
                issues.append(Issue("error", f"{p}.skill_refs[{i}]", f"references unknown skill {ref!r}"))
        if a.memory_ref is not None and reg.memory(a.memory_ref) is None:
            issues.append(Issue("error", f"{p}.memory_ref", f"references unknown memory {a.memory_ref!r}"))
        if a.type == "group_chat":
            for i, ref in enumerate(a.members):
                member = reg.agent(ref)
                if member is None:
                    issues.append(Issue("error", f"{p}.members[{i}]", f"references unknown agent {ref!r}"))
                elif member.type == "group_chat":
                    issues.append(Issue("error", f"{p}.members[{i}]", "group chats may not nest"))

    return issues


def _transitive_refs(spec: WorkflowSpec) -> set[tuple[str, str]]:
    reg = spec.registry
    seen: set[tuple[str, str]] = set()

    def visit_agent(ref: str) -> None:
        if ("agents", ref) in seen:
            return
        agent = reg.agent(ref)
        if agent is None:
            return
        seen.add(("agents", ref))
        if agent.model_ref:
            seen.add(("models", agent.model_ref))
        for s in agent.skill_refs:
            seen.add(("skills", s))
        if agent.memory_ref:
            seen.add(("memories", agent.memory_ref))
        for m in agent.members:
            visit_agent(m)

    for ref in filter(None, (spec.initiator_ref, spec.receiver_ref)):
        visit_agent(ref)
    for ref in spec.sequence:
        visit_agent(ref)
    return seen


# ---------------------------------------------------------------------------
# Canonical export. Deterministic bytes for equal specs.
# ---------------------------------------------------------------------------


def model_to_dict(m: ModelConfig) -> dict:
    out: dict[str, Any] = {"id": m.id, "name": m.name, "provider": m.provider}
    if m.base_url is not None:
        out["base_url"] = m.base_url
    if m.api_key_ref is not None:
        out["api_key_ref"] = m.api_key_ref
    out["model_name"] = m.model_name
    out["temperature"] = m.temperature
    out["max_tokens"] = m.max_tokens
    if m.pricing is not None:
        out["pricing"] = {"prompt_per_1k": m.pricing.prompt_per_1k,
                          "completion_per_1k": m.pricing.completion_per_1k}
    return out


def skill_to_dict(s: SkillSpec) -> dict:
    return {"id": s.id, "name": s.name, "description": s.description, "language": s.language,
            "source": s.source, "timeout_s": s.timeout_s, "env_allowlist": list(s.env_allowlist)}


def memory_to_dict(m: MemorySpec) -> dict:
    out: dict[str, Any] = {"id": m.id, "kind": m.kind}
    if m.capacity is not None:
        out["capacity"] = m.capacity
    return out


def agent_to_dict(a: AgentSpec) -> dict:
    out: dict[str, Any] = {"id": a.id, "type": a.type, "name": a.name, "system_message": a.system_message}
    if a.model_ref is not None:
        out["model_ref"] = a.model_ref
    out["skill_refs"] = list(a.skill_refs)
    if a.memory_ref is not None:
        out["memory_ref"] = a.memory_ref
    out["max_consecutive_replies"] = a.max_consecutive_replies
    out["human_input_mode"] = a.human_input_mode
    out["code_execution"] = a.executes_code
    if a.type == "group_chat":
        out["members"] = list(a.members)
        out["speaker_selection"] = a.speaker_selection
    return out


def workflow_core_to_dict(spec: WorkflowSpec) -> dict:
    out: dict[str, Any] = {"id": spec.id, "name": spec.name, "pattern": spec.pattern}
    if spec.pattern == "autonomous_chat":
        out["initiator_ref"] = spec.initiator_ref
        out["receiver_ref"] = spec.receiver_ref
    else:
        out["sequence"] = list(spec.sequence)
    out["termination"] = {"max_turns": spec.termination.max_turns,
                          "termination_keyword": spec.termination.termination_keyword}
    out["summary_method"] = spec.summary_method
    if spec.ui is not None:
        out["ui"] = _canonical_opaque(spec.ui)
    return out


def registry_to_dict(reg: Registry) -> dict:
    return {
        "agents": [agent_to_dict(a) for a in sorted(reg.agents, key=lambda e: e.id)],
        "models": [model_to_dict(m) for m in sorted(reg.models, key=lambda e: e.id)],
        "skills": [skill_to_dict(s) for s in sorted(reg.skills, key=lambda e: e.id)],
        "memories": [memory_to_dict(m) for m in sorted(reg.memories, key=lambda e: e.id)],
    }


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def export_workflow(spec: WorkflowSpec) -> str:
    """Serialize a valid spec to its canonical document form.

    Raw secrets never appear in the output: models carry api_key_ref only.
    """
    report = validate(spec)
    if not report.ok:
        raise InvalidSpecError(report)
    doc: dict[str, Any] = {"version": spec.version, "workflow": workflow_core_to_dict(spec)}
    doc.update(registry_to_dict(spec.registry))
    return _dump(doc)


def export_bundle(registry: Registry, version: str = SCHEMA_VERSION) -> str:
    report = validate_registry(registry)
    if not report.ok:
        raise InvalidSpecError(report)
    doc: dict[str, Any] = {"version": version}
    doc.update(registry_to_dict(registry))
    return _dump(doc)


def parse_entity(kind: str, obj: Mapping[str, Any]) -> Any:
    """Parse one entity payload by kind name (model|skill|memory|agent)."""
    parser = {"model": parse_model, "skill": parse_skill, "memory": parse_memory, "agent": parse_agent}[kind]
    return parser(obj, kind)


def entity_to_dict(kind: str, value: Any) -> dict:
    to_dict = {"model": model_to_dict, "skill": skill_to_dict, "memory": memory_to_dict, "agent": agent_to_dict}[kind]
    return to_dict(value)


def with_registry(spec: WorkflowSpec, registry: Registry) -> WorkflowSpec:
    return replace(spec, registry=registry)
