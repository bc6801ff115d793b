"""Starter components seeded into an empty database: a mock model, two default
skills, the basic user_proxy + assistant pair, and an autonomous workflow.
These populate the build view and gallery on first launch."""

from __future__ import annotations

from agentloom.db import DBManager

SAVE_DOCUMENT_SOURCE = """\
import json, os, sys

args = json.loads(os.environ.get("SKILL_ARGS", "{}"))
name = args.get("filename", "document.md")
text = args.get("text", "") or " ".join(sys.argv[1:])
with open(name, "w", encoding="utf-8") as f:
    f.write(text + "\\n")
print(f"saved {name} ({len(text)} chars)")
"""

PLACEHOLDER_IMAGE_SOURCE = """\
import base64, json, os

args = json.loads(os.environ.get("SKILL_ARGS", "{}"))
name = args.get("filename", "image.png")
# 1x1 transparent PNG
data = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNk"
    "YPhfDwAChwGA60e6kgAAAABJRU5ErkJggg=="
)
with open(name, "wb") as f:
    f.write(data)
print(f"generated {name}")
"""


def seed_defaults(db: DBManager) -> bool:
    """Populate starter entities; no-op unless the store is completely empty."""
    for kind in ("model", "skill", "agent", "workflow"):
        if db.list(kind):
            return False

    model = db.create("model", {
        "name": "Offline mock model",
        "provider": "mock",
        "model_name": "offline-mock",
        "temperature": 0.1,
        "max_tokens": 1024,
    }, tags=("default",))

    save_doc = db.create("skill", {
        "name": "save_document",
        "description": "Write text to a file in the session workspace "
                       "(arguments: filename, text).",
        "language": "interpreted-script",
        "source": SAVE_DOCUMENT_SOURCE,
        "timeout_s": 30,
    }, tags=("default",))

    gen_image = db.create("skill", {
        "name": "generate_placeholder_image",
        "description": "Create a placeholder PNG in the session workspace "
                       "(arguments: filename).",
        "language": "interpreted-script",
        "source": PLACEHOLDER_IMAGE_SOURCE,
        "timeout_s": 30,
    }, tags=("default",))

    proxy = db.create("agent", {
        "name": "user_proxy",
        "type": "user_proxy",
        "system_message": "",
        "human_input_mode": "never",
    }, tags=("default",))

    assistant = db.create("agent", {
        "name": "assistant",
        "type": "assistant",
        "system_message": "You are a helpful assistant. Reply TERMINATE when the task is done.",
        "model_ref": model.id,
        "skill_refs": [save_doc.id, gen_image.id],
    }, tags=("default",))

    db.create("workflow", {
        "name": "General assistant (offline)",
        "pattern": "autonomous_chat",
        "initiator_ref": proxy.id,
        "receiver_ref": assistant.id,
        "termination": {"max_turns": 10, "termination_keyword": "TERMINATE"},
    }, tags=("default",))
    return True
