"""Paired audio/text encoders and projection heads.

The reference encoders are deliberately small: the audio side is a time-mean
over mel frames followed by one affine+ReLU layer, the text side a hashed
bag-of-tokens followed by one affine+ReLU layer. Both feed a two-layer MLP
projection head into the shared D-dimensional space. Any model producing
embeddings in the container format (save_embeddings / load_embeddings) can
stand in for them.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import MelSpectrogram

_EMB_MAGIC = b"EMBX"
_EMB_VERSION = 1

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class EncoderError(Exception):
    pass


class ZeroVector(EncoderError):
    pass


class DimensionMismatch(EncoderError):
    pass


class CorruptContainer(EncoderError):
    pass


@dataclass
class Embedding:
    values: np.ndarray
    normalized: bool = False

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass
class EncoderConfig:
    d: int = 512                 # shared-space output dimension
    audio_feature_dim: int = 128
    text_feature_dim: int = 128
    hidden_dim: int = 256        # projection MLP hidden width
    vocab_hash_buckets: int = 1024
    mel_bins: int = 64

    def __post_init__(self):
        for name in ("d", "audio_feature_dim", "text_feature_dim",
                     "hidden_dim", "vocab_hash_buckets", "mel_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class AffineRelu:
    """One affine layer with ReLU: relu(w @ x + b)."""
    w: np.ndarray  # out x in
    b: np.ndarray  # out


@dataclass
class ProjectionHead:
    """Two affine layers with a ReLU between: w2 @ relu(w1 @ x + b1) + b2."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ModelParams:
    config: EncoderConfig
    audio_encoder: AffineRelu = field(repr=False)
    text_encoder: AffineRelu = field(repr=False)
    audio_head: ProjectionHead = field(repr=False)
    text_head: ProjectionHead = field(repr=False)


def _he(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    return rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)


def init_params(config: EncoderConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)

    def head(in_dim: int) -> ProjectionHead:
        return ProjectionHead(
            w1=_he(rng, config.hidden_dim, in_dim),
            b1=np.zeros(config.hidden_dim),
            w2=rng.standard_normal((config.d, config.hidden_dim))
            * np.sqrt(1.0 / config.hidden_dim),
            b2=np.zeros(config.d),
        )

    return ModelParams(
        config=config,
        audio_encoder=AffineRelu(w=_he(rng, config.audio_feature_dim, config.mel_bins),
                                 b=np.zeros(config.audio_feature_dim)),
        text_encoder=AffineRelu(w=_he(rng, config.text_feature_dim,
                                      config.vocab_hash_buckets),
                                b=np.zeros(config.text_feature_dim)),
        audio_head=head(config.audio_feature_dim),
        text_head=head(config.text_feature_dim),
    )


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.casefold()) if t]


def audio_input_features(mel: MelSpectrogram) -> np.ndarray:
    """Time-mean over frames -> mel_bins vector."""
    return np.asarray(mel.values, dtype=np.float64).mean(axis=0)


def text_input_features(text: str, buckets: int) -> np.ndarray:
    """Hashed bag of tokens: FNV-1a 64 modulo buckets, raw counts."""
    counts = np.zeros(buckets)
    for token in tokenize(text):
        counts[fnv1a_64(token.encode("utf-8")) % buckets] += 1.0
    return counts


def affine_relu(x: np.ndarray, layer: AffineRelu) -> np.ndarray:
    return np.maximum(x @ layer.w.T + layer.b, 0.0)


def toy_audio_encode(mel: MelSpectrogram, params: ModelParams) -> np.ndarray:
    u = audio_input_features(mel)
    if u.shape[0] != params.config.mel_bins:
        raise DimensionMismatch(
            f"mel has {u.shape[0]} bins, encoder expects {params.config.mel_bins}")
    return affine_relu(u, params.audio_encoder)


def toy_text_encode(text: str, params: ModelParams) -> np.ndarray:
    counts = text_input_features(text, params.config.vocab_hash_buckets)
    return affine_relu(counts, params.text_encoder)


def project(feature: np.ndarray, head: ProjectionHead) -> Embedding:
    hidden = np.maximum(feature @ head.w1.T + head.b1, 0.0)
    return Embedding(values=hidden @ head.w2.T + head.b2, normalized=False)


def normalize(embedding: Embedding) -> Embedding:
    norm = float(np.linalg.norm(embedding.values))
    if norm < 1e-30:
        raise ZeroVector("cannot normalize a zero-norm embedding")
    return Embedding(values=embedding.values / norm, normalized=True)


def embed_audio(mel: MelSpectrogram, params: ModelParams) -> Embedding:
    return normalize(project(toy_audio_encode(mel, params), params.audio_head))


def embed_text(text: str, params: ModelParams) -> Embedding:
    return normalize(project(toy_text_encode(text, params), params.text_head))


def save_embeddings(embeddings: dict[str, Embedding], path: str | Path) -> None:
    """Container: header {magic, version, D, count}, then per entry
    {idLength u32, idBytes, D little-endian float32}."""
    items = list(embeddings.items())
    if items:
        dim = items[0][1].dim
        for eid, emb in items:
            if emb.dim != dim:
                raise DimensionMismatch(
                    f"embedding {eid!r} has dim {emb.dim}, container has {dim}")
    else:
        dim = 0
    with Path(path).open("wb") as fh:
        fh.write(_EMB_MAGIC + struct.pack("<III", _EMB_VERSION, dim, len(items)))
        for eid, emb in items:
            raw = eid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(np.asarray(emb.values, dtype="<f4").tobytes())


def load_embeddings(path: str | Path,
                    expected_dim: int | None = None) -> dict[str, Embedding]:
    """All entries share the header's dimension D; short reads and bad magic
    raise CorruptContainer, a header D different from expected_dim raises
    DimensionMismatch."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _EMB_MAGIC:
        raise CorruptContainer(f"{path}: bad container header")
    version, dim, count = struct.unpack("<III", raw[4:16])
    if version != _EMB_VERSION:
        raise CorruptContainer(f"{path}: unsupported version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(
            f"{path}: container dimension {dim}, expected {expected_dim}")
    offset = 16
    out: dict[str, Embedding] = {}
    for _ in range(count):
        if offset + 4 > len(raw):
            raise CorruptContainer(f"{path}: truncated entry header")
        (id_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + id_len + dim * 4 > len(raw):
            raise CorruptContainer(f"{path}: truncated entry body")
        eid = raw[offset:offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset)
        offset += dim * 4
        out[eid] = Embedding(values=values.astype(np.float64), normalized=False)
    if offset != len(raw):
        raise CorruptContainer(f"{path}: {len(raw) - offset} trailing bytes")
    return out
