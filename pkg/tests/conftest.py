"""Shared fixtures: programmatic workflow builders and mock-script helpers."""

from __future__ import annotations

import pytest

from agentloom.backends import Completion, MockScript, ToolCall
from agentloom.engine import RuntimeEnv
from agentloom.messages import RunEvent
from agentloom.schema import (
    AgentSpec,
    ModelConfig,
    Registry,
    SkillSpec,
    Termination,
    WorkflowSpec,
)


def script(*steps, exhausted="repeat_last") -> MockScript:
    """Build a MockScript from strings or (content, tool_calls) tuples."""
    out = []
    for s in steps:
        if isinstance(s, Completion):
            out.append(s)
        elif isinstance(s, str):
            out.append(Completion(content=s))
        else:
            content, calls = s
            out.append(Completion(content=content,
                                  tool_calls=tuple(ToolCall(name=n, arguments=a) for n, a in calls)))
    return MockScript(steps=tuple(out), exhausted_behavior=exhausted)


def echo_skill(name="echo_skill", source='echo "tool says hi"'):
    return SkillSpec(id=f"s-{name}", name=name, description="prints a line",
                     language="shell", source=source, timeout_s=10.0)


def mock_model(model_id="m-mock", model_name="scripted", **kw):
    return ModelConfig(id=model_id, name=model_id, provider="mock", model_name=model_name, **kw)


def two_agent_spec(max_turns=10, keyword="TERMINATE", skills=(), proxy_overrides=None,
                   assistant_overrides=None, summary_method="last_message"):
    proxy_kw = dict(id="a-proxy", type="user_proxy", name="user_proxy", code_execution=False)
    proxy_kw.update(proxy_overrides or {})
    assistant_kw = dict(id="a-assistant", type="assistant", name="assistant", model_ref="m-mock",
                        skill_refs=tuple(s.id for s in skills))
    assistant_kw.update(assistant_overrides or {})
    registry = Registry(
        models=(mock_model(),),
        skills=tuple(skills),
        agents=(AgentSpec(**proxy_kw), AgentSpec(**assistant_kw)),
    )
    return WorkflowSpec(
        id="wf-test", name="test flow", pattern="autonomous_chat",
        initiator_ref="a-proxy", receiver_ref="a-assistant",
        termination=Termination(max_turns=max_turns, termination_keyword=keyword),
        summary_method=summary_method, registry=registry,
    )


def group_spec(member_scripts, max_turns=20, keyword="TERMINATE", skills=(),
               speaker_selection="round_robin", group_model=False):
    """GroupChat workflow: user_proxy initiator + group of scripted assistants.

    member_scripts: ordered {agent_name: model_id} pairing via index.
    """
    names = list(member_scripts)
    models = [mock_model(model_id=f"m-{n}", model_name=f"scripted-{n}") for n in names]
    agents = [AgentSpec(id=f"a-{n}", type="assistant", name=n, model_ref=f"m-{n}",
                        skill_refs=tuple(s.id for s in skills)) for n in names]
    if group_model:
        models.append(mock_model(model_id="m-group", model_name="selector"))
    group = AgentSpec(id="a-group", type="group_chat", name="team",
                      members=tuple(f"a-{n}" for n in names),
                      speaker_selection=speaker_selection,
                      model_ref="m-group" if group_model else None)
    proxy = AgentSpec(id="a-proxy", type="user_proxy", name="user_proxy", code_execution=False)
    registry = Registry(models=tuple(models), skills=tuple(skills), agents=tuple(agents) + (proxy, group))
    return WorkflowSpec(
        id="wf-group", name="group flow", pattern="autonomous_chat",
        initiator_ref="a-proxy", receiver_ref="a-group",
        termination=Termination(max_turns=max_turns, termination_keyword=keyword),
        registry=registry,
    )


def sequential_spec(agent_names, max_turns=5, keyword="TERMINATE", summary_method="last_message"):
    models = tuple(mock_model(model_id=f"m-{n}", model_name=f"scripted-{n}") for n in agent_names)
    agents = tuple(AgentSpec(id=f"a-{n}", type="assistant", name=n, model_ref=f"m-{n}")
                   for n in agent_names)
    return WorkflowSpec(
        id="wf-seq", name="pipeline", pattern="sequential_chat",
        sequence=tuple(f"a-{n}" for n in agent_names),
        termination=Termination(max_turns=max_turns, termination_keyword=keyword),
        summary_method=summary_method,
        registry=Registry(models=models, agents=agents),
    )


def env_with(scripts: dict, **kw) -> RuntimeEnv:
    return RuntimeEnv(mock_scripts=scripts, **kw)


class EventLog:
    """Collects run events for assertions."""

    def __init__(self):
        self.events: list[RunEvent] = []

    def __call__(self, event: RunEvent):
        self.events.append(event)

    def kinds(self):
        return [e.kind for e in self.events]

    def of_kind(self, kind):
        return [e for e in self.events if e.kind == kind]

    def message_dicts(self):
        return [e.payload for e in self.events if e.kind == "message"]


@pytest.fixture
def event_log():
    return EventLog()
