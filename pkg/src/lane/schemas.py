"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    users: int
    items: int
    alignment_enabled: bool


class RecommendRequest(BaseModel):
    user_id: str
    k: int = Field(default=10, ge=1)
    exclude_seen: bool = True


class ScoredItem(BaseModel):
    rank: int
    item_id: str
    title: str
    score: float


class PreferenceWeight(BaseModel):
    preference: str
    weight: float


class RecommendResponse(BaseModel):
    user_id: str
    items: list[ScoredItem]
    preferences: list[PreferenceWeight]


class ExplainRequest(BaseModel):
    user_id: str
    item_id: str | None = None


class ExplainResponse(BaseModel):
    user_id: str
    target_item_id: str
    target_title: str
    omega: list[float]
    available: bool
    steps: dict | None
    recommendation: str | None
