"""Post-hoc run analysis: message counts, token and dollar costs, and tool-use
outcomes, per agent and in total, computed in a single pass over a transcript.

Dollar cost per message is
``prompt_tokens/1000 * prompt_per_1k + completion_tokens/1000 * completion_per_1k``
using the producing model's pricing; messages from unpriced models cost 0 and
flip the report's ``estimated`` flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentloom.messages import Message
from agentloom.schema import Pricing, Registry


@dataclass(frozen=True)
class PricingTable:
    rates: Mapping[str, Pricing] = field(default_factory=dict)

    def get(self, model_name: str) -> Pricing | None:
        return self.rates.get(model_name)

    def merged_with(self, other: "PricingTable") -> "PricingTable":
        combined = dict(self.rates)
        combined.update(other.rates)
        return PricingTable(combined)


def load_pricing(path: str | Path) -> PricingTable:
    """Read the user-editable pricing file: {"model": {"prompt_per_1k": x, "completion_per_1k": y}}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("pricing file must be a JSON object keyed by model name")
    rates = {}
    for model_name, entry in data.items():
        prompt = float(entry["prompt_per_1k"])
        completion = float(entry["completion_per_1k"])
        if prompt < 0 or completion < 0:
            raise ValueError(f"pricing for {model_name!r}: rates must be ≥ 0")
        rates[model_name] = Pricing(prompt_per_1k=prompt, completion_per_1k=completion)
    return PricingTable(rates)


def pricing_from_registry(registry: Registry) -> PricingTable:
    """Inline per-model pricing carried by a workflow's embedded registry."""
    return PricingTable({m.model_name: m.pricing for m in registry.models if m.pricing is not None})


@dataclass
class AgentStats:
    messages: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: float = 0.0
    tool_calls: int = 0
    tool_success: int = 0
    tool_failure: int = 0

    def to_dict(self) -> dict:
        return {
            "messages": self.messages,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": self.cost,
            "tool_calls": self.tool_calls,
            "tool_success": self.tool_success,
            "tool_failure": self.tool_failure,
        }


@dataclass
class ProfileReport:
    total_messages: int = 0
    per_agent: dict[str, AgentStats] = field(default_factory=dict)
    total_cost: float = 0.0
    estimated: bool = False
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_messages": self.total_messages,
            "per_agent": {name: self.per_agent[name].to_dict() for name in sorted(self.per_agent)},
            "total_cost": self.total_cost,
            "estimated": self.estimated,
            "duration_s": self.duration_s,
        }

    @staticmethod
    def from_dict(obj: Mapping[str, Any]) -> "ProfileReport":
        return ProfileReport(
            total_messages=int(obj["total_messages"]),
            per_agent={name: AgentStats(**stats) for name, stats in obj.get("per_agent", {}).items()},
            total_cost=float(obj["total_cost"]),
            estimated=bool(obj["estimated"]),
            duration_s=float(obj["duration_s"]),
        )


def _attribution(msg: Message) -> str:
    # Tool messages are addressed to the agent that issued the call; count
    # them under that agent, never under a synthetic "tool" agent.
    return msg.recipient if msg.role == "tool" else msg.sender


def _timestamp(msg: Message) -> datetime | None:
    try:
        return datetime.fromisoformat(msg.created_at)
    except ValueError:
        return None


def profile(transcript: Iterable[Message], pricing: PricingTable | None = None) -> ProfileReport:
    pricing = pricing or PricingTable()
    report = ProfileReport()
    first_ts: datetime | None = None
    last_ts: datetime | None = None

    for msg in transcript:
        agent = report.per_agent.setdefault(_attribution(msg), AgentStats())
        agent.messages += 1
        report.total_messages += 1
        agent.prompt_tokens += msg.usage.prompt_tokens
        agent.completion_tokens += msg.usage.completion_tokens
        if msg.usage.usage_estimated:
            report.estimated = True

        if msg.model is not None:
            rates = pricing.get(msg.model)
            if rates is None:
                report.estimated = True
            else:
                cost = (msg.usage.prompt_tokens / 1000.0 * rates.prompt_per_1k
                        + msg.usage.completion_tokens / 1000.0 * rates.completion_per_1k)
                agent.cost += cost
                report.total_cost += cost

        if msg.role == "tool" and msg.tool_result is not None:
            agent.tool_calls += 1
            if msg.tool_result.status == "success":
                agent.tool_success += 1
            else:
                agent.tool_failure += 1

        ts = _timestamp(msg)
        if ts is not None:
            first_ts = ts if first_ts is None or ts < first_ts else first_ts
            last_ts = ts if last_ts is None or ts > last_ts else last_ts

    if first_ts is not None and last_ts is not None:
        report.duration_s = max(0.0, (last_ts - first_ts).total_seconds())
    return report


_COLUMNS = ("agent", "messages", "prompt_tok", "completion_tok", "cost", "tool_ok", "tool_fail")


def render_report(report: ProfileReport, format: str = "text") -> str:
    if format == "structured":
        return json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")

    rows = []
    for name in sorted(report.per_agent):
        s = report.per_agent[name]
        rows.append((name, str(s.messages), str(s.prompt_tokens), str(s.completion_tokens),
                     f"{s.cost:.6f}", str(s.tool_success), str(s.tool_failure)))
    rows.append(("TOTAL", str(report.total_messages),
                 str(sum(s.prompt_tokens for s in report.per_agent.values())),
                 str(sum(s.completion_tokens for s in report.per_agent.values())),
                 f"{report.total_cost:.6f}",
                 str(sum(s.tool_success for s in report.per_agent.values())),
                 str(sum(s.tool_failure for s in report.per_agent.values()))))

    widths = [max(len(_COLUMNS[i]), *(len(r[i]) for r in rows)) for i in range(len(_COLUMNS))]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(_COLUMNS)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
    footer = [f"estimated: {'yes' if report.estimated else 'no'}",
              f"duration_s: {report.duration_s:.3f}"]
    return "\n".join(lines + footer) + "\n"


def parse_report(structured: str) -> ProfileReport:
    return ProfileReport.from_dict(json.loads(structured))
