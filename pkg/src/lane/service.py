"""HTTP serving of a trained run: recommendations plus explanations.

The app loads the checkpoint and run artifacts once at startup and then
serves read-only, thread-safe inference: ranked recommendations over the full
catalog from a user's complete history, the per-preference attention weights,
and on demand a four-step explanation for a target item. Batch work (prepare,
training, sweeps) stays in the CLI; this service is the multi-client surface
over the trained artifact.
"""

from __future__ import annotations

import numpy as np
import torch
from fastapi import FastAPI, HTTPException

from .config import RunConfig
from .corpus import build_fixed_sequence
from .explain import generate_explanation
from .llm import build_llm_client
from .pipeline import build_prepared_data, load_trained_model
from .schemas import (
    ExplainRequest,
    ExplainResponse,
    HealthResponse,
    PreferenceWeight,
    RecommendRequest,
    RecommendResponse,
    ScoredItem,
)


class ServiceState:
    """Loaded-once run artifacts backing the endpoints."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.model, _ = load_trained_model(config)
        self.model.eval()
        data, catalog, pref_cache, _, _ = build_prepared_data(config)
        self.data = data
        self.catalog = catalog
        self.pref_cache = pref_cache
        self.client = build_llm_client(
            config.preferences.llm,
            seed=config.seed,
            rate_limit=config.preferences.rate_limit,
            max_retries=config.preferences.max_retries,
        )
        self.dtype = next(self.model.parameters()).dtype

    def _history(self, user_id: str) -> list[int]:
        user = self.data.split.users.get(user_id)
        if user is None:
            raise HTTPException(status_code=404, detail=f"unknown user {user_id!r}")
        return list(user.all_items())

    def _user_tensors(self, user_id: str):
        history = self._history(user_id)
        padded = build_fixed_sequence(history, self.model.config.n)
        indices = torch.from_numpy(padded.indices).unsqueeze(0)
        mask = torch.from_numpy(padded.valid_mask).unsqueeze(0)
        p_tensor = None
        if self.model.alignment is not None:
            p = self.data.P.get(user_id)
            if p is None:
                raise HTTPException(status_code=409, detail=f"no preferences extracted for user {user_id!r}")
            p_tensor = torch.from_numpy(p).unsqueeze(0).to(self.dtype)
        return history, indices, mask, p_tensor

    def recommend(self, req: RecommendRequest) -> RecommendResponse:
        history, indices, mask, p_tensor = self._user_tensors(req.user_id)
        with torch.no_grad():
            feature = self.model.last_feature(indices, mask, p_tensor)[0]
            scores = (self.model.item_emb.weight[1:] @ feature).cpu().numpy()
        if req.exclude_seen:
            for idx in history:
                scores[idx - 1] = -np.inf
        order = np.argsort(-scores)[: req.k]
        items = [
            ScoredItem(
                rank=pos + 1,
                item_id=self.catalog.items[int(i)].item_id,
                title=self.catalog.items[int(i)].title,
                score=float(scores[int(i)]),
            )
            for pos, i in enumerate(order)
        ]
        return RecommendResponse(
            user_id=req.user_id, items=items, preferences=self._preference_weights(req.user_id)
        )

    def _preference_weights(self, user_id: str) -> list[PreferenceWeight]:
        if self.model.alignment is None:
            return []
        prefs = self.pref_cache.get(user_id)
        if prefs is None:
            return []
        _, indices, mask, p_tensor = self._user_tensors(user_id)
        with torch.no_grad():
            omega = self.model.preference_weights(indices, mask, p_tensor)[0].cpu().numpy()
        return [
            PreferenceWeight(preference=p, weight=float(w))
            for p, w in zip(prefs.preferences, omega)
        ]

    def explain(self, req: ExplainRequest) -> ExplainResponse:
        if self.model.alignment is None:
            raise HTTPException(status_code=409, detail="explanations need the alignment block")
        prefs = self.pref_cache.get(req.user_id)
        if prefs is None:
            raise HTTPException(status_code=409, detail=f"no preferences extracted for user {req.user_id!r}")
        history, indices, mask, p_tensor = self._user_tensors(req.user_id)

        if req.item_id is not None:
            index = self.catalog.index_of.get(req.item_id)
            if index is None:
                raise HTTPException(status_code=404, detail=f"unknown item {req.item_id!r}")
        else:
            top = self.recommend(RecommendRequest(user_id=req.user_id, k=1)).items
            index = self.catalog.index_of[top[0].item_id]
        target_title = self.catalog.title_of(index)
        target_id = self.catalog.items[index - 1].item_id

        with torch.no_grad():
            omega = self.model.preference_weights(indices, mask, p_tensor)[0].cpu().numpy()
        titles = [self.catalog.title_of(i) for i in history[-self.model.config.n :]]
        record = generate_explanation(
            user_id=req.user_id,
            titles=titles,
            preferences=list(prefs.preferences),
            omega=omega,
            target_title=target_title,
            client=self.client,
        )
        return ExplainResponse(
            user_id=req.user_id,
            target_item_id=target_id,
            target_title=target_title,
            omega=[float(w) for w in omega],
            available=record is not None,
            steps=record.steps_dict() if record else None,
            recommendation=record.recommendation if record else None,
        )


def create_app(config: RunConfig) -> FastAPI:
    state = ServiceState(config)
    app = FastAPI(title="lane", version="0.1.0")

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            users=len(state.data.split.users),
            items=len(state.catalog),
            alignment_enabled=state.model.alignment is not None,
        )

    @app.post("/recommend", response_model=RecommendResponse)
    def recommend(req: RecommendRequest) -> RecommendResponse:
        return state.recommend(req)

    @app.post("/explain", response_model=ExplainResponse)
    def explain(req: ExplainRequest) -> ExplainResponse:
        return state.explain(req)

    return app
