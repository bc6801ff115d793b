"""Pydantic request/response models for the REST surface."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class Envelope(BaseModel):
    status: Literal["ok", "error"]
    data: Any = None
    message: str = ""
    code: str | None = None


class RunRequest(BaseModel):
    task: str = Field(..., description="The task to run in this session")


class PredictRequest(BaseModel):
    task: str


class ImportRequest(BaseModel):
    document: str = Field(..., description="A self-contained exported document")
    title: str = ""
    description: str = ""


class InboundFrame(BaseModel):
    kind: Literal["human_input", "cancel"]
    content: str = ""
