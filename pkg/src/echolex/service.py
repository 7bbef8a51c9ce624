"""Read-only HTTP service over a published index + checkpoint snapshot.

Endpoints (all JSON, UTF-8, versioned under /v1):
  POST /v1/search            {text, k} -> ranked clips
  POST /v1/classify          {clipId | audioBase64, labels} -> per-label scores
  GET  /v1/audio/{clipId}    stored ten-second clip as audio/wav
  POST /v1/admin/reload      swap in a freshly loaded snapshot
  GET  /v1/health            liveness + snapshot status

Handlers are stateless over an immutable snapshot reference; reload swaps the
reference atomically so concurrent requests always see a consistent pair.
"""

from __future__ import annotations

import base64
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .audio import AudioError, CANONICAL_RATE, MelConfig, fix_length, load_wav, \
    mel_spectrogram, resample
from .encoder import embed_audio, embed_text
from .evaluation import LabelPromptSet, zero_shot_detection_scores
from .index import VectorIndex
from .training import TrainState, load_checkpoint

MAX_K = 1000

TOKEN_ENV = "ECHOLEX_CAPTION_TOKEN"


@dataclass
class ServiceConfig:
    corpus_root: str = "."
    index_path: str = "index.bin"
    checkpoint_path: str = "checkpoint.npz"
    host: str = "127.0.0.1"
    port: int = 8710
    caption_endpoint: str = ""
    caption_token: str = ""
    max_in_flight_client_calls: int = 4
    desk_defaults: bool = True

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        """Single TOML or JSON file; the caption token may be overridden by
        the ECHOLEX_CAPTION_TOKEN environment variable (secrets stay out of
        config files)."""
        path = Path(path)
        raw = path.read_bytes()
        if path.suffix == ".toml":
            try:
                import tomllib  # py3.11+
            except ModuleNotFoundError:
                import tomli as tomllib
            payload = tomllib.loads(raw.decode("utf-8"))
        else:
            payload = json.loads(raw.decode("utf-8"))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        config = cls(**payload)
        config.caption_token = os.environ.get(TOKEN_ENV, config.caption_token)
        return config


@dataclass
class Snapshot:
    index: VectorIndex
    state: TrainState
    corpus_root: Path
    prompt_cache: dict = field(default_factory=dict, repr=False)


def load_snapshot(config: ServiceConfig) -> Snapshot:
    index = VectorIndex.load(config.index_path)
    state = load_checkpoint(config.checkpoint_path)
    return Snapshot(index=index, state=state,
                    corpus_root=Path(config.corpus_root))


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(config: ServiceConfig,
               snapshot: Optional[Snapshot] = None) -> FastAPI:
    """App factory; pass a prebuilt snapshot to skip loading from disk."""
    app = FastAPI(title="echolex", version="0.1.0")
    app.state.config = config
    app.state.snapshot = snapshot

    def current() -> Optional[Snapshot]:
        return app.state.snapshot

    @app.get("/v1/health")
    def health():
        snap = current()
        return {"status": "ok", "indexLoaded": snap is not None,
                "indexSize": len(snap.index) if snap else 0}

    @app.post("/v1/search")
    async def search(request: Request):
        snap = current()
        if snap is None:
            return _error(503, "index not loaded")
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "invalid JSON body")
        text = str(body.get("text", "")).strip()
        k = body.get("k", 10)
        if not text:
            return _error(400, "empty query text")
        if not isinstance(k, int) or k < 1:
            return _error(400, "k must be a positive integer")
        k = min(k, MAX_K)
        query = embed_text(text, snap.state.params)
        results = snap.index.search_topk(query, k)
        payload = []
        for res in results:
            meta = snap.index.entry_meta(res.clip_id)
            payload.append({
                "clipId": res.clip_id,
                "score": res.score,
                "caption": meta.caption_common,
                "speciesCommon": meta.species_common,
                "audioUrl": f"/v1/audio/{res.clip_id}",
            })
        return {"results": payload}

    @app.post("/v1/classify")
    async def classify(request: Request):
        snap = current()
        if snap is None:
            return _error(503, "index not loaded")
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "invalid JSON body")
        labels = body.get("labels") or []
        if not isinstance(labels, list) or not labels or \
                not all(isinstance(v, str) and v.strip() for v in labels):
            return _error(400, "labels must be a non-empty list of strings")
        labels = [v.strip() for v in labels]

        clip_id = body.get("clipId")
        if clip_id is not None:
            if clip_id not in snap.index:
                return _error(404, f"unknown clipId {clip_id!r}")
            audio_emb = snap.index.embedding_for(clip_id)
        elif body.get("audioBase64"):
            try:
                raw = base64.b64decode(body["audioBase64"], validate=True)
                clip = load_wav(io.BytesIO(raw))
            except (ValueError, AudioError) as exc:
                return _error(400, f"bad audio payload: {exc}")
            clip = fix_length(resample(clip, CANONICAL_RATE))
            mel = mel_spectrogram(clip, MelConfig(
                mel_bins=snap.state.params.config.mel_bins))
            audio_emb = embed_audio(mel, snap.state.params)
        else:
            return _error(400, "provide clipId or audioBase64")

        key = tuple(labels)
        prompt_set = snap.prompt_cache.get(key)
        if prompt_set is None:
            prompt_set = LabelPromptSet.build(
                labels, lambda t: embed_text(t, snap.state.params))
            snap.prompt_cache[key] = prompt_set
        scores = zero_shot_detection_scores(audio_emb, prompt_set)
        best = int(scores.argmax())
        return {"scores": [{"label": label, "score": float(score)}
                           for label, score in zip(labels, scores)],
                "argmaxLabel": labels[best]}

    @app.get("/v1/audio/{clip_id}")
    def audio(clip_id: str):
        snap = current()
        if snap is None:
            return _error(503, "index not loaded")
        if clip_id not in snap.index:
            return _error(404, f"unknown clipId {clip_id!r}")
        meta = snap.index.entry_meta(clip_id)
        root = snap.corpus_root.resolve()
        path = (snap.corpus_root / meta.audio_path).resolve()
        if root not in path.parents:  # no escaping the corpus root
            return _error(404, f"audio path outside corpus root for {clip_id!r}")
        if not path.is_file():
            return _error(404, f"audio file missing for {clip_id!r}")
        return Response(content=path.read_bytes(), media_type="audio/wav")

    @app.post("/v1/admin/reload")
    def reload_snapshot():
        try:
            app.state.snapshot = load_snapshot(config)
        except Exception as exc:
            return _error(500, f"reload failed: {exc}")
        return {"status": "reloaded", "indexSize": len(app.state.snapshot.index)}

    return app


def run(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config, snapshot=load_snapshot(config))
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
