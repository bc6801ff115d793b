"""The workflow engine: turns a validated WorkflowSpec into live agents and
runs tasks under the autonomous-chat or sequential-chat pattern.

Run mechanics, pinned here because they drive every downstream metric:

* A "turn" is one model completion by an agent. Tool executions and proxy
  auto-replies do not count.
* The termination keyword is matched as a substring of agent-produced message
  content; it is checked before the max-turns bound, so a terminating message
  on the last allowed turn reports ``terminated_keyword``.
* Tool calls run immediately after the completion that issued them; results
  are posted as role=tool messages addressed to the calling agent, which then
  completes again (bounded by max_consecutive_replies per episode).
* Every event carries a dense, strictly increasing sequence number and each
  run ends with exactly one terminal event (run_finished or run_error).
"""

from __future__ import annotations

import logging
import os
import re
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from agentloom import toolruntime
from agentloom.backends import (
    Backend,
    BackendConfigError,
    BackendError,
    ChatMessage,
    ChatRequest,
    MockScript,
    ToolCall,
    ToolSchema,
    Usage,
    create_backend,
)
from agentloom.messages import Message, RunEvent, new_id, now_iso
from agentloom.profiler import PricingTable, ProfileReport, pricing_from_registry, profile
from agentloom.schema import (
    AgentSpec,
    MemorySpec,
    SkillSpec,
    WorkflowSpec,
    parse_workflow,
    validate,
)

logger = logging.getLogger(__name__)

EventSink = Callable[[RunEvent], None]

_CODE_BLOCK_RE = re.compile(r"```(\w*)[ \t]*\n(.*?)```", re.DOTALL)

IMPLICIT_PROXY_NAME = "user"  # stands in for the user in sequential exchanges
SUMMARY_JOIN_SEPARATOR = "\n---\n"
SUMMARY_MAX_CHARS = 4096


class InstantiationError(Exception):
    """A workflow could not be turned into live agents (bad refs, backend config)."""


class RunCancelled(Exception):
    pass


class InputSource(Protocol):
    """Provider of human replies for human-in-the-loop runs."""

    @property
    def interactive(self) -> bool: ...

    def request(self, prompt: Mapping[str, Any]) -> str | None:
        """Block until input arrives. Return None to defer (run pauses as awaiting_human)."""


class NullInput:
    interactive = False

    def request(self, prompt):  # pragma: no cover - never called when non-interactive
        return None


class ScriptedInput:
    """Canned human replies, for tests and non-interactive demos."""

    def __init__(self, replies: Sequence[str | None]):
        self._replies = list(replies)
        self.prompts: list[Mapping[str, Any]] = []

    @property
    def interactive(self) -> bool:
        return True

    def request(self, prompt):
        self.prompts.append(prompt)
        if not self._replies:
            return ""
        return self._replies.pop(0)


class NaiveStore:
    """In-process recency memory: keeps the most recent entries up to capacity."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self._entries: list[str] = []

    def add(self, entry: str) -> None:
        self._entries.append(entry)
        if self.capacity is not None and len(self._entries) > self.capacity:
            del self._entries[: len(self._entries) - self.capacity]

    def recall(self) -> list[str]:
        return list(self._entries)


@dataclass
class RuntimeEnv:
    """Everything a run needs from the outside world."""

    environ: Mapping[str, str] = field(default_factory=lambda: dict(os.environ))
    pricing: PricingTable = field(default_factory=PricingTable)
    mock_scripts: Mapping[str, MockScript] = field(default_factory=dict)
    base_dir: Path | None = None  # resolves relative mock-script paths
    workdir: Path | None = None  # session scratch dir; ephemeral tempdir if unset


@dataclass
class BoundAgent:
    spec: AgentSpec
    backend: Backend | None
    skills: tuple[SkillSpec, ...]
    memory: MemorySpec | None
    store: NaiveStore | None = None

    @property
    def name(self) -> str:
        return self.spec.name

    def skill_named(self, name: str) -> SkillSpec | None:
        return next((s for s in self.skills if s.name == name), None)


@dataclass
class WorkflowInstance:
    spec: WorkflowSpec
    agents: dict[str, BoundAgent]  # keyed by agent id
    session_id: str
    workdir: Path
    env: RuntimeEnv

    def agent(self, ref: str) -> BoundAgent:
        return self.agents[ref]

    def agent_id_by_name(self, name: str) -> str | None:
        return next((aid for aid, a in self.agents.items() if a.name == name), None)


@dataclass(frozen=True)
class RunResult:
    status: str
    final_message: Message | None
    transcript: tuple[Message, ...]
    profile: ProfileReport

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "final_message": self.final_message.to_dict() if self.final_message else None,
            "transcript": [m.to_dict() for m in self.transcript],
            "profile": self.profile.to_dict(),
        }


def instantiate(spec: WorkflowSpec, env: RuntimeEnv | None = None,
                session_id: str | None = None) -> WorkflowInstance:
    """Bind every agent in the spec to its backend, skills, and memory.

    Fails fast: validation errors and unconstructible backends (for example a
    missing api_key_ref environment variable) raise InstantiationError naming
    the offending entity.
    """
    env = env or RuntimeEnv()
    report = validate(spec)
    if not report.ok:
        first = report.errors()[0]
        raise InstantiationError(f"workflow {spec.id!r} is invalid — {first.path}: {first.message}")

    agents: dict[str, BoundAgent] = {}
    for agent_spec in spec.registry.agents:
        backend = None
        if agent_spec.model_ref is not None:
            model = spec.registry.model(agent_spec.model_ref)
            try:
                backend = create_backend(model, env.environ, env.mock_scripts, env.base_dir)
            except BackendConfigError as e:
                raise InstantiationError(
                    f"agent {agent_spec.id!r}: cannot construct backend for model {model.id!r}: {e}"
                ) from e
        skills = tuple(spec.registry.skill(ref) for ref in agent_spec.skill_refs)
        memory = spec.registry.memory(agent_spec.memory_ref) if agent_spec.memory_ref else None
        store = NaiveStore(memory.capacity) if memory and memory.kind == "naive-store" else None
        agents[agent_spec.id] = BoundAgent(spec=agent_spec, backend=backend,
                                           skills=skills, memory=memory, store=store)

    workdir = env.workdir
    if workdir is None:
        run_dir = Path(tempfile.mkdtemp(prefix="agentloom-run-"))
        os.chmod(run_dir, 0o711)
        workdir = run_dir / "scratch"
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    return WorkflowInstance(spec=spec, agents=agents,
                            session_id=session_id or new_id(), workdir=workdir, env=env)


class _RunState:
    def __init__(self, instance: WorkflowInstance, history: Sequence[Message],
                 sink: EventSink | None, input_source: InputSource | None,
                 cancel: threading.Event | None):
        self.instance = instance
        self.history = list(history)
        self.sink = sink
        self.input_source = input_source or NullInput()
        self.cancel = cancel
        self.messages: list[Message] = []
        self.turns = 0
        self.context_start = 0  # sequential exchanges restrict visible context
        self.group_mode = False
        self._seq = 0
        self._next_turn_index = (max((m.turn_index for m in self.history), default=-1) + 1)

    @property
    def spec(self) -> WorkflowSpec:
        return self.instance.spec

    @property
    def keyword(self) -> str:
        return self.spec.termination.termination_keyword

    def check_cancel(self) -> None:
        if self.cancel is not None and self.cancel.is_set():
            raise RunCancelled()

    def emit(self, kind: str, payload: Mapping[str, Any]) -> RunEvent:
        event = RunEvent(kind=kind, payload=payload, sequence=self._seq)
        self._seq += 1
        if self.sink is not None:
            self.sink(event)
        return event

    def post(self, sender: str, recipient: str, role: str, content: str,
             usage: Usage | None = None, tool_calls: tuple[ToolCall, ...] = (),
             tool_result: toolruntime.ToolResult | None = None,
             model: str | None = None) -> Message:
        msg = Message(
            id=new_id(), session_ref=self.instance.session_id,
            sender=sender, recipient=recipient, role=role, content=content,
            turn_index=self._next_turn_index, created_at=now_iso(),
            usage=usage or Usage(), tool_calls=tool_calls,
            tool_result=tool_result, model=model,
        )
        self._next_turn_index += 1
        self.messages.append(msg)
        self.emit("message", msg.to_dict())
        return msg

    def visible_context(self) -> list[Message]:
        if self.context_start == 0:
            return self.history + self.messages
        return self.messages[self.context_start:]


def _build_request(state: _RunState, agent: BoundAgent) -> ChatRequest:
    model = state.spec.registry.model(agent.spec.model_ref)
    entries: list[ChatMessage] = []
    for m in state.visible_context():
        if m.role == "tool":
            if m.recipient == agent.name:
                entries.append(ChatMessage("tool", m.content))
            continue
        if m.sender == agent.name:
            entries.append(ChatMessage("assistant", m.content))
        else:
            content = f"{m.sender}: {m.content}" if state.group_mode else m.content
            entries.append(ChatMessage("user", content))

    if agent.memory is not None and agent.memory.capacity is not None:
        if agent.store is not None:
            agent.store._entries = []
            for e in entries:
                agent.store.add(f"{e.role}\x00{e.content}")
            entries = [ChatMessage(*s.split("\x00", 1)) for s in agent.store.recall()]
        else:
            entries = entries[-agent.memory.capacity:]

    messages: list[ChatMessage] = []
    if agent.spec.system_message:
        messages.append(ChatMessage("system", agent.spec.system_message))
    messages.extend(entries)
    if not messages:
        messages.append(ChatMessage("user", ""))
    return ChatRequest(model=model, messages=tuple(messages),
                       tool_schemas=tuple(ToolSchema.for_skill(s) for s in agent.skills))


def _run_tool_calls(state: _RunState, agent: BoundAgent, calls: Iterable[ToolCall]) -> None:
    for call in calls:
        state.check_cancel()
        skill = agent.skill_named(call.name)
        state.emit("tool_started", {"agent": agent.name, "skill": call.name,
                                    "arguments": dict(call.arguments)})
        if skill is None:
            result = toolruntime.ToolResult(
                status="failure", exit_code=-1, stdout="",
                stderr=f"unknown skill {call.name!r} (not attached to agent {agent.name!r})",
                duration_s=0.0, failure_kind="spawn_error")
        else:
            result = toolruntime.execute(toolruntime.ToolInvocation(
                session_workdir=state.instance.workdir, timeout_s=skill.timeout_s,
                skill=skill, arguments=call.arguments))
        state.emit("tool_finished", {"agent": agent.name, "skill": call.name,
                                     "result": result.to_dict()})
        for artifact in result.artifacts:
            state.emit("artifact", {"agent": agent.name, "artifact": artifact.to_dict()})
        content = result.stdout if result.status == "success" else (result.stderr or result.stdout)
        state.post(sender=call.name, recipient=agent.name, role="tool",
                   content=content, tool_result=result)


def _execute_code_blocks(state: _RunState, agent: BoundAgent, text: str) -> list[str]:
    outputs = []
    for lang, code in _CODE_BLOCK_RE.findall(text):
        state.check_cancel()
        language = "interpreted-script" if lang.lower() in ("python", "py") else "shell"
        state.emit("tool_started", {"agent": agent.name, "skill": "inline_code",
                                    "arguments": {"language": language}})
        result = toolruntime.execute(toolruntime.ToolInvocation(
            session_workdir=state.instance.workdir, timeout_s=60.0,
            inline_code=code, inline_language=language))
        state.emit("tool_finished", {"agent": agent.name, "skill": "inline_code",
                                     "result": result.to_dict()})
        for artifact in result.artifacts:
            state.emit("artifact", {"agent": agent.name, "artifact": artifact.to_dict()})
        body = result.stdout if result.status == "success" else (result.stderr or result.stdout)
        state.post(sender="inline_code", recipient=agent.name, role="tool",
                   content=body, tool_result=result)
        outputs.append(f"exitcode: {result.exit_code}\n{body}".rstrip())
    return outputs


def _initiator(state: _RunState) -> BoundAgent | None:
    ref = state.spec.initiator_ref
    return state.instance.agents.get(ref) if ref else None


def _termination_override(state: _RunState, terminator: BoundAgent) -> str | None:
    """on_termination human-in-the-loop: a non-empty reply overrides termination."""
    initiator = _initiator(state)
    if initiator is None or initiator is terminator:
        return None
    if initiator.spec.human_input_mode != "on_termination":
        return None
    if not state.input_source.interactive:
        return None
    state.emit("human_input_requested", {
        "agent": initiator.name, "reason": "termination_keyword",
        "prompt": state.messages[-1].content if state.messages else ""})
    text = state.input_source.request({"agent": initiator.name, "reason": "termination_keyword"})
    if text is None or not text.strip():
        return None
    return text


_AWAITING = "awaiting_human"


def _model_step(state: _RunState, agent: BoundAgent, counterpart: str) -> str | None:
    """Run one speaking episode for a model-bearing agent.

    Returns a terminal status, or None to hand off to the next speaker.
    """
    model = state.spec.registry.model(agent.spec.model_ref)
    replies = 0
    while True:
        state.check_cancel()
        completion = agent.backend.complete(_build_request(state, agent))
        state.turns += 1
        replies += 1
        msg = state.post(sender=agent.name, recipient=counterpart, role="assistant",
                         content=completion.content, usage=completion.usage,
                         tool_calls=completion.tool_calls, model=model.model_name)

        if state.keyword and state.keyword in msg.content:
            override = _termination_override(state, agent)
            if override is None:
                return "terminated_keyword"
            state.post(sender=_initiator(state).name, recipient=agent.name,
                       role="user", content=override)
            continue
        if state.turns >= state.spec.termination.max_turns:
            return "max_turns_reached"
        if completion.tool_calls:
            _run_tool_calls(state, agent, completion.tool_calls)
            if replies >= agent.spec.max_consecutive_replies:
                return None
            continue
        return None


def _proxy_step(state: _RunState, agent: BoundAgent, counterpart: str) -> str | None:
    """One reply from a model-less agent: code execution, human input, or an
    empty auto-reply. Does not count as a turn."""
    state.check_cancel()
    incoming = state.messages[-1] if state.messages else None
    parts: list[str] = []
    if agent.spec.executes_code and incoming is not None and incoming.role == "assistant":
        parts = _execute_code_blocks(state, agent, incoming.content)
    auto_content = "\n".join(parts)

    content = auto_content
    if agent.spec.human_input_mode == "always":
        if state.input_source.interactive:
            state.emit("human_input_requested", {
                "agent": agent.name, "reason": "always",
                "prompt": incoming.content if incoming else ""})
            text = state.input_source.request({"agent": agent.name, "reason": "always"})
            if text is None:
                return _AWAITING
            if text.strip():
                content = text
        else:
            logger.warning("agent %s requires human input but the run is non-interactive; "
                           "degrading to auto-reply", agent.name)

    msg = state.post(sender=agent.name, recipient=counterpart, role="user", content=content)
    if state.keyword and state.keyword in msg.content:
        return "terminated_keyword"
    return None


def _agent_step(state: _RunState, agent: BoundAgent, counterpart: str) -> str | None:
    if agent.backend is not None:
        return _model_step(state, agent, counterpart)
    return _proxy_step(state, agent, counterpart)


def round_robin_next(member_ids: Sequence[str], last_speaker_id: str | None) -> str:
    """Members cycle in declared order; the previous speaker never repeats."""
    if last_speaker_id not in member_ids:
        return member_ids[0]
    i = member_ids.index(last_speaker_id)
    return member_ids[(i + 1) % len(member_ids)]


def select_next_speaker(instance: WorkflowInstance, group_ref: str,
                        transcript: Sequence[Message]) -> str:
    """Pick the next group member to speak; returns an agent id.

    round_robin cycles declared order. model_selected asks the group's model
    to name a member and falls back to round_robin when the reply names none.
    """
    group = instance.agent(group_ref)
    member_ids = list(group.spec.members)
    member_names = {instance.agent(mid).name: mid for mid in member_ids}
    last_speaker_id = None
    for m in reversed(transcript):
        if m.role != "tool" and m.sender in member_names:
            last_speaker_id = member_names[m.sender]
            break

    if group.spec.speaker_selection == "model_selected" and group.backend is not None:
        tail = "\n".join(f"{m.sender}: {m.content}" for m in transcript[-10:] if m.role != "tool")
        names = ", ".join(member_names)
        request = ChatRequest(
            model=instance.spec.registry.model(group.spec.model_ref),
            messages=(
                ChatMessage("system", "You coordinate a group conversation. "
                                      "Pick which participant should speak next."),
                ChatMessage("user", f"Conversation so far:\n{tail}\n\n"
                                    f"Reply with exactly one name from: {names}"),
            ),
        )
        try:
            reply = group.backend.complete(request).content
        except BackendError:
            reply = ""
        found: tuple[int, str] | None = None
        for name, mid in member_names.items():
            at = reply.find(name)
            if at >= 0 and (found is None or at < found[0]):
                found = (at, mid)
        if found is not None:
            return found[1]
    return round_robin_next(member_ids, last_speaker_id)


def _group_loop(state: _RunState, group: BoundAgent) -> str:
    state.group_mode = True
    try:
        while True:
            speaker_id = select_next_speaker(state.instance, _agent_ref(state, group),
                                             state.visible_context())
            speaker = state.instance.agent(speaker_id)
            status = _agent_step(state, speaker, group.name)
            if status is not None:
                return status
    finally:
        state.group_mode = False


def _agent_ref(state: _RunState, agent: BoundAgent) -> str:
    return agent.spec.id


def _autonomous(state: _RunState, task: str) -> str:
    spec = state.spec
    initiator = state.instance.agent(spec.initiator_ref)
    receiver = state.instance.agent(spec.receiver_ref)
    state.post(sender=initiator.name, recipient=receiver.name, role="user", content=task)

    if receiver.spec.type == "group_chat":
        return _group_loop(state, receiver)

    active, other = receiver, initiator
    while True:
        status = _agent_step(state, active, other.name)
        if status is not None:
            return status
        active, other = other, active


def _sub_exchange(state: _RunState, agent: BoundAgent, input_text: str) -> str:
    """One bounded exchange between the implicit user proxy and one agent."""
    state.turns = 0
    state.context_start = len(state.messages)
    state.post(sender=IMPLICIT_PROXY_NAME, recipient=agent.name, role="user", content=input_text)

    if agent.spec.type == "group_chat":
        return _group_loop(state, agent)

    while True:
        status = _agent_step(state, agent, IMPLICIT_PROXY_NAME)
        if status is not None:
            return status
        if agent.backend is None:
            # A model-less agent cannot make progress against the implicit proxy.
            return "max_turns_reached"
        state.post(sender=IMPLICIT_PROXY_NAME, recipient=agent.name, role="user", content="")


def _sequential(state: _RunState, task: str) -> tuple[str, Message | None]:
    current_input = task
    final: Message | None = None
    for ref in state.spec.sequence:
        agent = state.instance.agent(ref)
        start = len(state.messages)
        status = _sub_exchange(state, agent, current_input)
        if status == _AWAITING:
            return status, state.messages[-1] if state.messages else None
        sub_transcript = state.messages[start:]
        current_input = summarize(sub_transcript, state.spec.summary_method)
        final = sub_transcript[-1]
    if state.spec.summary_method != "last_message" and final is not None:
        final = replace(final, id=new_id(), content=current_input)
    return "completed", final


def summarize(transcript: Sequence[Message], method: str = "last_message") -> str:
    """Collapse a transcript to the text handed to the next agent in sequence."""
    if not transcript:
        raise ValueError("cannot summarize an empty transcript")
    if method == "last_message":
        return transcript[-1].content
    if method == "truncated_concat":
        joined = SUMMARY_JOIN_SEPARATOR.join(m.content for m in transcript)
        return joined[:SUMMARY_MAX_CHARS]
    raise ValueError(f"unknown summary method {method!r}")


def _finish(state: _RunState, status: str, final: Message | None) -> RunResult:
    transcript = tuple(state.messages)
    pricing = pricing_from_registry(state.spec.registry).merged_with(state.instance.env.pricing)
    report = profile(transcript, pricing)
    state.emit("run_finished", {"status": status,
                                "final_message_id": final.id if final else None})
    return RunResult(status=status, final_message=final, transcript=transcript, profile=report)


def _fail(state: _RunState, code: str, message: str) -> RunResult:
    transcript = tuple(state.messages)
    pricing = pricing_from_registry(state.spec.registry).merged_with(state.instance.env.pricing)
    report = profile(transcript, pricing)
    state.emit("run_error", {"code": code, "message": message})
    final = state.messages[-1] if state.messages else None
    return RunResult(status="error", final_message=final, transcript=transcript, profile=report)


def run(instance: WorkflowInstance, task: str, history: Sequence[Message] = (),
        sink: EventSink | None = None, input_source: InputSource | None = None,
        cancel: threading.Event | None = None) -> RunResult:
    """Execute one autonomous-chat task. Tool failures are data; backend
    failures after retries end the run with status=error."""
    if not task or not task.strip():
        raise ValueError("task must be a non-empty string")
    state = _RunState(instance, history, sink, input_source, cancel)
    try:
        status = _autonomous(state, task)
        final = state.messages[-1] if state.messages else None
        return _finish(state, status, final)
    except RunCancelled:
        return _fail(state, "cancelled", "run cancelled by client")
    except BackendError as e:
        return _fail(state, "backend_error", str(e))
    except Exception as e:  # noqa: BLE001 - run errors are data, not transport errors
        logger.exception("run failed")
        return _fail(state, "internal_error", f"{type(e).__name__}: {e}")


def run_sequential(instance: WorkflowInstance, task: str,
                   sink: EventSink | None = None, input_source: InputSource | None = None,
                   cancel: threading.Event | None = None) -> RunResult:
    """Execute a sequential-chat task: each agent receives a summary of the
    previous agent's exchange and runs its own bounded exchange."""
    if not task or not task.strip():
        raise ValueError("task must be a non-empty string")
    state = _RunState(instance, history=(), sink=sink, input_source=input_source, cancel=cancel)
    try:
        status, final = _sequential(state, task)
        return _finish(state, status, final)
    except RunCancelled:
        return _fail(state, "cancelled", "run cancelled by client")
    except BackendError as e:
        return _fail(state, "backend_error", str(e))
    except Exception as e:  # noqa: BLE001
        logger.exception("sequential run failed")
        return _fail(state, "internal_error", f"{type(e).__name__}: {e}")


class WorkflowManager:
    """Load a workflow (file path, JSON text, or spec) and run tasks against it.

    >>> wm = WorkflowManager("workflow.json")
    >>> result = wm.run(message="What is the height of the Eiffel Tower")
    """

    def __init__(self, workflow: str | Path | WorkflowSpec, env: RuntimeEnv | None = None,
                 session_id: str | None = None):
        if isinstance(workflow, WorkflowSpec):
            spec = workflow
        else:
            text, base_dir = self._read(workflow)
            spec = parse_workflow(text)
            if env is None:
                env = RuntimeEnv(base_dir=base_dir)
            elif env.base_dir is None and base_dir is not None:
                env = replace(env, base_dir=base_dir)
        self.env = env or RuntimeEnv()
        self.spec = spec
        self.instance = instantiate(spec, self.env, session_id=session_id)

    @staticmethod
    def _read(workflow: str | Path) -> tuple[str, Path | None]:
        if isinstance(workflow, Path) or not workflow.lstrip().startswith("{"):
            path = Path(workflow)
            return path.read_text(encoding="utf-8"), path.resolve().parent
        return str(workflow), None

    def run(self, message: str, history: Sequence[Message] = (),
            sink: EventSink | None = None, input_source: InputSource | None = None,
            cancel: threading.Event | None = None) -> RunResult:
        if self.spec.pattern == "sequential_chat":
            return run_sequential(self.instance, message, sink=sink,
                                  input_source=input_source, cancel=cancel)
        return run(self.instance, message, history=history, sink=sink,
                   input_source=input_source, cancel=cancel)
