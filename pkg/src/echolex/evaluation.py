"""Retrieval and zero-shot evaluation: caption canonicalization, truncated
average precision, zero-shot classification and detection scoring, the
species-oracle retrieval baseline, and linear probes on frozen embeddings.

Relevance between a query caption and a candidate caption is exact string
equality after stripping the "The sound of a/an " prefix and trimming
trailing whitespace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .encoder import Embedding

_DEDUP_PREFIXES = ("The sound of an ", "The sound of a ")


class EvaluationError(Exception):
    pass


def strip_dedup_prefix(caption: str) -> str:
    """Remove one leading "The sound of a/an " (exact match), trim trailing
    whitespace."""
    for prefix in _DEDUP_PREFIXES:
        if caption.startswith(prefix):
            return caption[len(prefix):].rstrip()
    return caption.rstrip()


@dataclass
class LabelPromptSet:
    """Label prompts embedded with the same text encoder as queries."""
    label_ids: list[str]
    prompt_texts: list[str]
    matrix: np.ndarray  # L x D, rows unit-norm

    @classmethod
    def build(cls, labels: Sequence[str],
              embed_text: Callable[[str], Embedding],
              template: str = "{label}") -> "LabelPromptSet":
        prompts = [template.format(label=label) for label in labels]
        matrix = np.stack([embed_text(p).values for p in prompts])
        return cls(label_ids=list(labels), prompt_texts=prompts, matrix=matrix)


def zero_shot_detection_scores(audio_embedding: Embedding,
                               prompt_set: LabelPromptSet) -> np.ndarray:
    """Raw cosine similarity per label; downstream metrics use the ordering."""
    values = np.asarray(audio_embedding.values, dtype=np.float64)
    norm = np.linalg.norm(values)
    if norm == 0:
        raise EvaluationError("zero-norm audio embedding")
    return prompt_set.matrix @ (values / norm)


def zero_shot_classify(audio_embedding: Embedding,
                       prompt_set: LabelPromptSet) -> str:
    """Most-similar label; ties break toward the earlier label id."""
    scores = zero_shot_detection_scores(audio_embedding, prompt_set)
    return prompt_set.label_ids[int(np.argmax(scores))]


@dataclass
class RankedList:
    """One query's ranking: relevance flags by position and the corpus-wide
    relevant count m (>= 1 for queries drawn from the corpus)."""
    query: str
    clip_ids: list[str]
    scores: list[float]
    rel: list[bool]
    m: int


def ap_at_n(ranked: RankedList, n: int = 10) -> float:
    """Average precision truncated at n with divisor min(m, n)."""
    if ranked.m < 1:
        raise EvaluationError("ap_at_n needs at least one relevant item (m >= 1)")
    hits = 0
    total = 0.0
    for k, is_rel in enumerate(ranked.rel[:n], start=1):
        if is_rel:
            hits += 1
            total += hits / k
    return total / min(ranked.m, n)


def map_at_n(ranked_lists: Sequence[RankedList], n: int = 10) -> float:
    if not ranked_lists:
        raise EvaluationError("no queries")
    return float(np.mean([ap_at_n(r, n) for r in ranked_lists]))


def precision_at_1(ranked_lists: Sequence[RankedList]) -> float:
    if not ranked_lists:
        raise EvaluationError("no queries")
    return float(np.mean([1.0 if r.rel and r.rel[0] else 0.0
                          for r in ranked_lists]))


@dataclass
class CorpusClip:
    """What the oracle baseline and retrieval relevance need to know about
    one indexed clip."""
    clip_id: str
    species: str
    caption_common: str


def oracle_precision_at_1(clips: Sequence[CorpusClip]) -> float:
    """Precision@1 of an idealized retriever that extracts the query's
    species perfectly and returns a uniformly random clip of that species.

    For a query from clip q this hits iff the sampled same-species clip's
    canonical caption equals q's, so the per-query expectation is
    (#same-species clips with equal canonical caption) / (#same-species
    clips), averaged over all clips as queries.
    """
    if not clips:
        raise EvaluationError("empty corpus")
    by_species: dict[str, list[str]] = {}
    for clip in clips:
        by_species.setdefault(clip.species, []).append(
            strip_dedup_prefix(clip.caption_common))
    total = 0.0
    for clip in clips:
        keys = by_species[clip.species]
        own = strip_dedup_prefix(clip.caption_common)
        total += keys.count(own) / len(keys)
    return total / len(clips)


def build_ranked_list(query_caption: str,
                      result_ids: Sequence[str],
                      result_scores: Sequence[float],
                      captions_by_clip: dict[str, str]) -> RankedList:
    """Relevance flags for one retrieval run; m counts matches over the whole
    candidate corpus (the captions map), not just the returned prefix."""
    key = strip_dedup_prefix(query_caption)
    rel = [strip_dedup_prefix(captions_by_clip[cid]) == key for cid in result_ids]
    m = sum(1 for text in captions_by_clip.values()
            if strip_dedup_prefix(text) == key)
    return RankedList(query=query_caption, clip_ids=list(result_ids),
                      scores=list(result_scores), rel=rel, m=m)


@dataclass
class ProbeConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    seed: int = 0


@dataclass
class ProbeHead:
    weight: np.ndarray  # C x D
    bias: np.ndarray    # C
    task_type: str      # "classification" | "detection"


@dataclass
class ProbeEvalResult:
    metric_name: str  # "accuracy" | "map"
    value: float
    skipped_classes: int = 0


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - z.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_probe(embeddings: np.ndarray, labels: np.ndarray, task_type: str,
                config: ProbeConfig | None = None
                ) -> tuple[ProbeHead, list[float]]:
    """Linear head on frozen embeddings, full-batch gradient descent.

    Classification: labels (n,) ints, softmax cross-entropy. Detection:
    labels (n, C) binary, sigmoid + binary cross-entropy. Returns the head
    and the per-epoch training-loss history.
    """
    config = config or ProbeConfig()
    x = np.asarray(embeddings, dtype=np.float64)
    n, d = x.shape
    if task_type == "classification":
        y = np.asarray(labels, dtype=np.int64)
        n_classes = int(y.max()) + 1
        onehot = np.eye(n_classes)[y]
    elif task_type == "detection":
        onehot = np.asarray(labels, dtype=np.float64)
        n_classes = onehot.shape[1]
    else:
        raise ValueError(f"unknown task_type {task_type!r}")

    rng = np.random.default_rng(config.seed)
    weight = rng.standard_normal((n_classes, d)) * 0.01
    bias = np.zeros(n_classes)
    history = []
    for _ in range(config.epochs):
        logits = x @ weight.T + bias
        if task_type == "classification":
            probs = _softmax_rows(logits)
            loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
            d_logits = (probs - onehot) / n
        else:
            probs = _sigmoid(logits)
            loss = -np.mean(onehot * np.log(probs + 1e-300)
                            + (1 - onehot) * np.log(1 - probs + 1e-300))
            d_logits = (probs - onehot) / (n * n_classes)
        history.append(float(loss))
        weight -= config.learning_rate * (d_logits.T @ x)
        bias -= config.learning_rate * d_logits.sum(axis=0)
    return ProbeHead(weight=weight, bias=bias, task_type=task_type), history


def _binary_ap(scores: np.ndarray, positives: np.ndarray) -> float:
    """Untruncated AP: ap_at_n with n = corpus size and m = positive count."""
    order = np.argsort(-scores, kind="stable")
    rel = positives[order].astype(bool)
    ranked = RankedList(query="", clip_ids=[], scores=[], rel=list(rel),
                        m=int(rel.sum()))
    return ap_at_n(ranked, n=len(rel))


def eval_probe(head: ProbeHead, embeddings: np.ndarray,
               labels: np.ndarray) -> ProbeEvalResult:
    """Classification reports accuracy; detection reports mean per-class AP,
    skipping (and counting) classes with no positives."""
    x = np.asarray(embeddings, dtype=np.float64)
    logits = x @ head.weight.T + head.bias
    if head.task_type == "classification":
        y = np.asarray(labels, dtype=np.int64)
        accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
        return ProbeEvalResult(metric_name="accuracy", value=accuracy)
    target = np.asarray(labels, dtype=np.float64)
    aps = []
    skipped = 0
    for c in range(target.shape[1]):
        if target[:, c].sum() == 0:
            skipped += 1
            continue
        aps.append(_binary_ap(logits[:, c], target[:, c]))
    if not aps:
        raise EvaluationError("every class has zero positives")
    return ProbeEvalResult(metric_name="map", value=float(np.mean(aps)),
                           skipped_classes=skipped)


@dataclass
class EvalReport:
    metric_name: str
    value: float
    n: Optional[int] = None
    query_count: Optional[int] = None
    skipped_classes: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"metricName": self.metric_name, "value": self.value,
                   "N": self.n, "queryCount": self.query_count,
                   "skippedClasses": self.skipped_classes}
        payload.update(self.extra)
        return json.dumps({k: v for k, v in payload.items() if v is not None},
                          indent=2, sort_keys=True)


def write_query_diagnostics(ranked_lists: Sequence[RankedList],
                            path: str | Path, n: int = 10) -> None:
    """Per-query CSV: query text, m, AP@N, top hit and its relevance."""
    import csv

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "m", f"ap_at_{n}", "top_clip_id", "top_relevant"])
        for ranked in ranked_lists:
            writer.writerow([
                ranked.query, ranked.m, f"{ap_at_n(ranked, n):.6f}",
                ranked.clip_ids[0] if ranked.clip_ids else "",
                int(ranked.rel[0]) if ranked.rel else 0])


def load_task_manifest(path: str | Path) -> list[tuple[str, list[str]]]:
    """Generic task rows: {"clipPath": ..., "label": ...} or {"labels": [...]}."""
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            d = json.loads(line)
            if "clipPath" not in d:
                raise EvaluationError(f"{path}:{line_no}: missing clipPath")
            labels = d.get("labels", [d["label"]] if "label" in d else [])
            if not labels:
                raise EvaluationError(f"{path}:{line_no}: no labels")
            rows.append((d["clipPath"], [str(v) for v in labels]))
    return rows
