"""Shared test fixtures: random transcript generation and independent
brute-force oracles kept deliberately separate from the library code paths."""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone

from agentloom.backends import Usage
from agentloom.messages import Message
from agentloom.toolruntime import ToolResult

AGENT_NAMES = ("user_proxy", "writer", "checker", "illustrator")
MODEL_NAMES = ("priced-model", "unpriced-model", None)

PRICING_FIXTURE = {
    "priced-model": (0.01, 0.03),  # (prompt_per_1k, completion_per_1k)
}


def random_message(rng: random.Random, index: int, base_time: datetime) -> Message:
    role = rng.choice(["user", "assistant", "tool"])
    sender = rng.choice(AGENT_NAMES)
    recipient = rng.choice([a for a in AGENT_NAMES if a != sender])
    model = rng.choice(MODEL_NAMES) if role == "assistant" else None
    usage = Usage(
        prompt_tokens=rng.randint(0, 2000),
        completion_tokens=rng.randint(0, 1000),
        usage_estimated=rng.random() < 0.2,
    ) if role == "assistant" else Usage()
    tool_result = None
    if role == "tool":
        ok = rng.random() < 0.7
        tool_result = ToolResult(status="success" if ok else "failure",
                                 exit_code=0 if ok else rng.randint(1, 9),
                                 stdout="out", stderr="", duration_s=rng.random(),
                                 failure_kind=None if ok else "nonzero_exit")
    return Message(
        id=f"m-{index}",
        session_ref="s-fixture",
        sender=sender,
        recipient=recipient,
        role=role,
        content=f"message {index}",
        turn_index=index,
        created_at=(base_time + timedelta(seconds=index * rng.uniform(0.1, 2.0))).isoformat(),
        usage=usage,
        tool_result=tool_result,
        model=model,
    )


def random_transcript(rng: random.Random, max_messages: int = 50) -> list[Message]:
    base = datetime(2024, 3, 1, 12, 0, 0, tzinfo=timezone.utc)
    return [random_message(rng, i, base) for i in range(rng.randint(0, max_messages))]


def naive_recount(transcript, rates: dict[str, tuple[float, float]]) -> dict:
    """Multi-pass brute-force recount: the oracle the profiler must match."""

    def owner(m: Message) -> str:
        return m.recipient if m.role == "tool" else m.sender

    agents = sorted({owner(m) for m in transcript})
    per_agent = {}
    for a in agents:
        mine = [m for m in transcript if owner(m) == a]
        cost = 0.0
        for m in mine:
            if m.model is not None and m.model in rates:
                p, c = rates[m.model]
                cost += m.usage.prompt_tokens * p / 1000.0 + m.usage.completion_tokens * c / 1000.0
        tools = [m for m in mine if m.role == "tool" and m.tool_result is not None]
        successes = [t for t in tools if t.tool_result.status == "success"]
        per_agent[a] = {
            "messages": len(mine),
            "prompt_tokens": sum(m.usage.prompt_tokens for m in mine),
            "completion_tokens": sum(m.usage.completion_tokens for m in mine),
            "cost": cost,
            "tool_calls": len(tools),
            "tool_success": len(successes),
            "tool_failure": len(tools) - len(successes),
        }

    timestamps = sorted(datetime.fromisoformat(m.created_at) for m in transcript)
    return {
        "total_messages": len(transcript),
        "per_agent": per_agent,
        "total_cost": sum(v["cost"] for v in per_agent.values()),
        "estimated": any(m.usage.usage_estimated for m in transcript)
        or any(m.model is not None and m.model not in rates for m in transcript),
        "duration_s": (timestamps[-1] - timestamps[0]).total_seconds() if transcript else 0.0,
    }
