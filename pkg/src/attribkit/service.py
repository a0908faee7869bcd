"""Read-only HTTP/JSON API over a frozen trained model.

Serves the document list, per-document attributions and class differences, and
stateless what-if feature removal.  All numbers come from the same single-
document forward/attribution code the CLI uses, serialized as plain JSON
floats, so offline and served values agree bit for bit.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .attribution import (
    AttributionTensor,
    attribute,
    attribution_difference,
    highlights_to_json,
    word_highlights,
)
from .corpus import Corpus
from .model import ModelParams, forward

METHODS = ("lrp", "sa")
SNIPPET_CHARS = 120


@dataclass
class ServiceSettings:
    cache_cap: int | None = None       # attribution cache entries; None = unbounded
    cors_origins: tuple[str, ...] = ("*",)


@dataclass
class SessionState:
    params: ModelParams | None = None
    corpus: Corpus | None = None
    settings: ServiceSettings = field(default_factory=ServiceSettings)
    _cache: OrderedDict = field(default_factory=OrderedDict)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _doc_list: list[dict] | None = None

    @property
    def loaded(self) -> bool:
        return self.params is not None and self.corpus is not None

    def cached_attribution(self, doc_id: int, target_class: int, method: str) -> AttributionTensor:
        key = (doc_id, target_class, method)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        doc = self.corpus.documents[doc_id]
        tensor = attribute(self.params, doc.token_ids, target_class, method, doc_id=doc_id)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = tensor
                cap = self.settings.cache_cap
                if cap is not None:
                    while len(self._cache) > cap:
                        self._cache.popitem(last=False)
            return self._cache[key]

    def doc_listing(self) -> list[dict]:
        if self._doc_list is None:
            listing = []
            for doc in self.corpus.documents:
                trace = forward(self.params, doc.token_ids)
                listing.append({
                    "doc_id": doc.doc_id,
                    "snippet": doc.raw_text[:SNIPPET_CHARS],
                    "true_label": doc.label,
                    "predicted_label": int(trace.probs.argmax()),
                    "probs": trace.probs.tolist(),
                })
            self._doc_list = listing
        return self._doc_list


class WhatIfRequest(BaseModel):
    zero_columns: list[int] = []
    zero_filters: list[int] = []


def _json_response(payload: dict) -> Response:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return Response(content=body, media_type="application/json")


def create_app(state: SessionState | None = None, ui_dir: str | None = None) -> FastAPI:
    """Build the API app; `state` may be supplied preloaded or left empty (503s)."""
    app = FastAPI(title="attribkit service", docs_url=None, redoc_url=None, openapi_url=None)
    state = state if state is not None else SessionState()
    app.state.session = state
    origins = list(state.settings.cors_origins)
    app.add_middleware(CORSMiddleware, allow_origins=origins,
                       allow_methods=["*"], allow_headers=["*"])

    def session() -> SessionState:
        if not state.loaded:
            raise HTTPException(status_code=503, detail="model and corpus not loaded yet")
        return state

    def get_doc(doc_id: int):
        st = session()
        docs = st.corpus.documents
        if doc_id < 0 or doc_id >= len(docs):
            raise HTTPException(status_code=404, detail=f"unknown document {doc_id}")
        return st, docs[doc_id]

    def check_class(st: SessionState, value: int, name: str) -> int:
        if value < 0 or value >= st.params.config.num_classes:
            raise HTTPException(status_code=400,
                                detail=f"{name} {value} out of range [0, {st.params.config.num_classes})")
        return value

    def check_method(method: str) -> str:
        if method not in METHODS:
            raise HTTPException(status_code=400,
                                detail=f"method must be one of {list(METHODS)}")
        return method

    @app.get("/docs")
    def list_docs(page: int = Query(default=1, ge=1), page_size: int = Query(default=20, ge=1)):
        st = session()
        listing = st.doc_listing()
        start = (page - 1) * page_size
        return _json_response({
            "page": page,
            "page_size": page_size,
            "total": len(listing),
            "docs": listing[start:start + page_size],
        })

    @app.get("/docs/{doc_id}/attribution")
    def doc_attribution(doc_id: int,
                        target_class: int = Query(alias="class"),
                        method: str = Query(default="lrp")):
        st, doc = get_doc(doc_id)
        check_class(st, target_class, "class")
        check_method(method)
        tensor = st.cached_attribution(doc_id, target_class, method)
        highlights = word_highlights(tensor, st.corpus.vocab)
        return _json_response({
            "doc_id": doc_id,
            "class": target_class,
            "method": method,
            "epsilon": tensor.epsilon,
            "logit_value": tensor.logit_value,
            "tokens": highlights_to_json(highlights),
            "column_scores": tensor.column_scores.tolist(),
            "filter_scores": tensor.filter_scores.tolist(),
        })

    @app.get("/docs/{doc_id}/diff")
    def doc_diff(doc_id: int,
                 class_a: int = Query(), class_b: int = Query(),
                 method: str = Query(default="lrp")):
        st, doc = get_doc(doc_id)
        check_class(st, class_a, "class_a")
        check_class(st, class_b, "class_b")
        check_method(method)
        diff = attribution_difference(
            st.cached_attribution(doc_id, class_a, method),
            st.cached_attribution(doc_id, class_b, method))
        return _json_response({
            "doc_id": doc_id,
            "class_a": class_a,
            "class_b": class_b,
            "method": method,
            "column_diffs": diff.column_diffs.tolist(),
            "filter_diffs": diff.filter_diffs.tolist(),
        })

    @app.post("/docs/{doc_id}/whatif")
    def doc_whatif(doc_id: int, request: WhatIfRequest):
        st, doc = get_doc(doc_id)
        cfg = st.params.config
        for k in request.zero_columns:
            if k < 0 or k >= cfg.embed_dim:
                raise HTTPException(status_code=400,
                                    detail=f"column index {k} out of range [0, {cfg.embed_dim})")
        for f in request.zero_filters:
            if f < 0 or f >= cfg.pooled_size:
                raise HTTPException(status_code=400,
                                    detail=f"filter index {f} out of range [0, {cfg.pooled_size})")
        before = forward(st.params, doc.token_ids)
        after = forward(st.params, doc.token_ids,
                        zero_columns=request.zero_columns,
                        zero_filters=request.zero_filters)
        return _json_response({
            "doc_id": doc_id,
            "probs_before": before.probs.tolist(),
            "probs_after": after.probs.tolist(),
            "predicted_before": int(before.probs.argmax()),
            "predicted_after": int(after.probs.argmax()),
        })

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
