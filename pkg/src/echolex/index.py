"""Exact cosine-similarity search over stored clip embeddings.

Full scan with partial top-k selection: desk-scale corpora make approximate
search unnecessary and exactness gives a clean oracle. Embeddings are stored
float32; scores accumulate in float64. Persistence reuses the encoder
embedding container plus a JSONL metadata sidecar keyed by clip id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .encoder import DimensionMismatch, Embedding, load_embeddings, save_embeddings


class SearchIndexError(Exception):
    pass


class DuplicateId(SearchIndexError):
    pass


@dataclass
class IndexEntry:
    clip_id: str
    embedding: Embedding
    caption_common: str = ""
    species_common: Optional[str] = None
    species_scientific: Optional[str] = None
    audio_path: str = ""


@dataclass
class SearchResult:
    clip_id: str
    score: float  # cosine similarity
    rank: int     # 1-based


@dataclass
class _Meta:
    caption_common: str
    species_common: Optional[str]
    species_scientific: Optional[str]
    audio_path: str


class VectorIndex:
    """Append-only store; queries run against an internally cached snapshot
    of the embedding matrix that is rebuilt after writes."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._vectors: list[np.ndarray] = []
        self._meta: dict[str, _Meta] = {}
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._meta

    @property
    def clip_ids(self) -> list[str]:
        return list(self._ids)

    def entry_meta(self, clip_id: str) -> _Meta:
        return self._meta[clip_id]

    def embedding_for(self, clip_id: str) -> Embedding:
        i = self._pos[clip_id]
        return Embedding(values=self._vectors[i].astype(np.float64),
                         normalized=True)

    def add(self, entry: IndexEntry) -> None:
        if entry.clip_id in self._meta:
            raise DuplicateId(f"clip id {entry.clip_id!r} already indexed")
        values = np.asarray(entry.embedding.values, dtype=np.float64)
        if values.shape != (self.dim,):
            raise DimensionMismatch(
                f"entry dim {values.shape} != index dim ({self.dim},)")
        norm = float(np.linalg.norm(values))
        if not entry.embedding.normalized or abs(norm - 1.0) > 1e-4:
            raise ValueError(
                f"entry {entry.clip_id!r} must be normalized (norm={norm:.6f})")
        self._pos[entry.clip_id] = len(self._ids)
        self._ids.append(entry.clip_id)
        self._vectors.append(values.astype(np.float32))
        self._meta[entry.clip_id] = _Meta(
            caption_common=entry.caption_common,
            species_common=entry.species_common,
            species_scientific=entry.species_scientific,
            audio_path=entry.audio_path)
        self._matrix = None

    def _snapshot(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack(self._vectors) if self._vectors \
                else np.zeros((0, self.dim), dtype=np.float32)
        return self._matrix

    def search_topk(self, query: Embedding, k: int) -> list[SearchResult]:
        """The k highest-cosine entries, scores non-increasing, exact ties
        broken by ascending clip id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._ids:
            raise SearchIndexError("index is empty")
        values = np.asarray(query.values, dtype=np.float64)
        if values.shape != (self.dim,):
            raise DimensionMismatch(
                f"query dim {values.shape} != index dim ({self.dim},)")
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > 1e-4:
            values = values / norm  # cosine needs a unit query

        matrix = self._snapshot()
        scores = matrix.astype(np.float64) @ values
        n = len(scores)
        k_eff = min(k, n)
        if k_eff < n:
            part = np.argpartition(-scores, k_eff - 1)[:k_eff]
            boundary = scores[part].min()
            # pull in every entry tied with the boundary score so the id
            # tie-break is applied over the full tie group
            candidates = np.flatnonzero(scores >= boundary)
        else:
            candidates = np.arange(n)
        ranked = sorted(candidates, key=lambda i: (-scores[i], self._ids[i]))
        return [SearchResult(clip_id=self._ids[i], score=float(scores[i]),
                             rank=rank)
                for rank, i in enumerate(ranked[:k_eff], start=1)]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_embeddings(
            {cid: Embedding(values=vec.astype(np.float64), normalized=True)
             for cid, vec in zip(self._ids, self._vectors)}, path)
        with path.with_suffix(path.suffix + ".meta.jsonl").open(
                "w", encoding="utf-8") as fh:
            for cid in self._ids:
                meta = self._meta[cid]
                fh.write(json.dumps({
                    "clipId": cid,
                    "captionCommon": meta.caption_common,
                    "speciesCommon": meta.species_common,
                    "speciesScientific": meta.species_scientific,
                    "audioPath": meta.audio_path,
                }, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        embeddings = load_embeddings(path)
        meta_path = path.with_suffix(path.suffix + ".meta.jsonl")
        order: list[str] = []
        metas: dict[str, _Meta] = {}
        with meta_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                order.append(d["clipId"])
                metas[d["clipId"]] = _Meta(
                    caption_common=d.get("captionCommon", ""),
                    species_common=d.get("speciesCommon"),
                    species_scientific=d.get("speciesScientific"),
                    audio_path=d.get("audioPath", ""))
        if set(order) != set(embeddings):
            raise SearchIndexError(f"{path}: metadata sidecar disagrees with container")
        dim = embeddings[order[0]].dim if order else 1
        index = cls(dim=dim)
        for cid in order:
            values = embeddings[cid].values.astype(np.float32)
            norm = float(np.linalg.norm(values.astype(np.float64)))
            if abs(norm - 1.0) > 1e-3:
                raise SearchIndexError(
                    f"{path}: entry {cid!r} is not unit-norm ({norm:.6f})")
            index._pos[cid] = len(index._ids)
            index._ids.append(cid)
            index._vectors.append(values)
            index._meta[cid] = metas[cid]
        return index
