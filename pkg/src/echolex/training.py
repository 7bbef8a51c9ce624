"""Symmetric contrastive training with a learnable temperature.

The loss over a batch of N paired embeddings is the average of the
audio-to-text and text-to-audio cross-entropies on the similarity matrix
divided by the temperature tau = exp(log_tau). Gradients are analytic,
backpropagated through the softmaxes, the L2 normalization, both projection
heads, both reference encoders, and log_tau, and are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .captioning import Caption
from .encoder import (AffineRelu, EncoderConfig, ModelParams, ProjectionHead,
                      ZeroVector, init_params)

TAU_MIN, TAU_MAX = 0.01, 100.0
TAU_INIT = 0.07

_CKPT_VERSION = 1


class TrainingError(Exception):
    pass


class NonFiniteLoss(TrainingError):
    pass


class Divergence(TrainingError):
    """Training loss went NaN; the last good checkpoint was kept."""


@dataclass
class Batch:
    """N aligned pairs of unit-norm embeddings, row i of each side matched."""
    audio: np.ndarray  # N x D
    text: np.ndarray   # N x D

    @property
    def n(self) -> int:
        return self.audio.shape[0]


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def similarity_matrix(batch: Batch) -> np.ndarray:
    """Entry (i, j) is dot(audio_i, text_j); cosine for unit-norm rows."""
    return batch.audio @ batch.text.T


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def contrastive_loss(batch: Batch, tau: float) -> float:
    """Mean of the two directional cross-entropies on S / tau (non-negative)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = similarity_matrix(batch) / tau
    row = np.diagonal(_log_softmax(logits, axis=1))
    col = np.diagonal(_log_softmax(logits, axis=0))
    loss = -(row.sum() + col.sum()) / (2 * batch.n)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    return float(loss) + 0.0  # +0.0 canonicalizes -0.0 for the N=1 case


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def contrastive_loss_grads(batch: Batch, log_tau: float
                           ) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Loss plus gradients w.r.t. the raw embedding matrices and log_tau."""
    tau = math.exp(log_tau)
    n = batch.n
    sims = similarity_matrix(batch)
    logits = sims / tau
    row = _softmax(logits, axis=1)
    col = _softmax(logits, axis=0)
    loss = -(np.log(np.diagonal(row)).sum() + np.log(np.diagonal(col)).sum()) / (2 * n)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    d_logits = (row + col - 2 * np.eye(n)) / (2 * n)
    d_sims = d_logits / tau
    d_audio = d_sims @ batch.text
    d_text = d_sims.T @ batch.audio
    d_log_tau = float(-(d_logits * logits).sum())
    return float(loss), d_audio, d_text, d_log_tau


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ParamGrads:
    audio_encoder_w: np.ndarray
    audio_encoder_b: np.ndarray
    text_encoder_w: np.ndarray
    text_encoder_b: np.ndarray
    audio_head: HeadGrads
    text_head: HeadGrads
    log_tau: float


@dataclass
class _BranchCache:
    inputs: np.ndarray      # N x in_dim encoder inputs
    enc_pre: np.ndarray     # N x feature_dim pre-ReLU
    feats: np.ndarray       # N x feature_dim
    head_pre: np.ndarray    # N x hidden pre-ReLU
    hidden: np.ndarray      # N x hidden
    raw: np.ndarray         # N x D unnormalized embeddings
    norms: np.ndarray       # N
    unit: np.ndarray        # N x D


def _branch_forward(inputs: np.ndarray, encoder: AffineRelu,
                    head: ProjectionHead) -> _BranchCache:
    enc_pre = inputs @ encoder.w.T + encoder.b
    feats = np.maximum(enc_pre, 0.0)
    head_pre = feats @ head.w1.T + head.b1
    hidden = np.maximum(head_pre, 0.0)
    raw = hidden @ head.w2.T + head.b2
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms < 1e-30):
        raise ZeroVector("zero-norm embedding in batch")
    unit = raw / norms[:, None]
    return _BranchCache(inputs, enc_pre, feats, head_pre, hidden, raw, norms, unit)


def _branch_backward(cache: _BranchCache, encoder: AffineRelu,
                     head: ProjectionHead, d_unit: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, HeadGrads]:
    # through x / ||x||: (g - (g . e) e) / ||x||
    d_raw = (d_unit - (d_unit * cache.unit).sum(axis=1, keepdims=True)
             * cache.unit) / cache.norms[:, None]
    d_w2 = d_raw.T @ cache.hidden
    d_b2 = d_raw.sum(axis=0)
    d_hidden = d_raw @ head.w2
    d_head_pre = d_hidden * (cache.head_pre > 0)
    d_w1 = d_head_pre.T @ cache.feats
    d_b1 = d_head_pre.sum(axis=0)
    d_feats = d_head_pre @ head.w1
    d_enc_pre = d_feats * (cache.enc_pre > 0)
    d_enc_w = d_enc_pre.T @ cache.inputs
    d_enc_b = d_enc_pre.sum(axis=0)
    return d_enc_w, d_enc_b, HeadGrads(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2)


def loss_gradients(audio_inputs: np.ndarray, text_inputs: np.ndarray,
                   params: ModelParams, log_tau: float
                   ) -> tuple[float, ParamGrads, np.ndarray, np.ndarray]:
    """Full forward/backward from encoder inputs.

    Returns (loss, parameter gradients including log_tau, and the gradients
    w.r.t. the normalized embedding matrices for diagnostics).
    """
    a = _branch_forward(audio_inputs, params.audio_encoder, params.audio_head)
    t = _branch_forward(text_inputs, params.text_encoder, params.text_head)
    batch = Batch(audio=a.unit, text=t.unit)
    loss, d_audio, d_text, d_log_tau = contrastive_loss_grads(batch, log_tau)
    a_enc_w, a_enc_b, a_head = _branch_backward(a, params.audio_encoder,
                                                params.audio_head, d_audio)
    t_enc_w, t_enc_b, t_head = _branch_backward(t, params.text_encoder,
                                                params.text_head, d_text)
    grads = ParamGrads(audio_encoder_w=a_enc_w, audio_encoder_b=a_enc_b,
                       text_encoder_w=t_enc_w, text_encoder_b=t_enc_b,
                       audio_head=a_head, text_head=t_head, log_tau=d_log_tau)
    return loss, grads, d_audio, d_text


def _caption_choice(n: int, recording_id: str, epoch: int, seed: int) -> int:
    if n == 1:
        return 0
    return random.Random(f"{seed}:{epoch}:{recording_id}").randrange(n)


def sample_caption(captions: Sequence[Caption], epoch: int, seed: int) -> Caption:
    """Uniform pick, deterministic in (recording id, epoch, seed)."""
    if not captions:
        raise ValueError("no captions to sample from")
    return captions[_caption_choice(len(captions), captions[0].recording_id,
                                    epoch, seed)]


class AdamState:
    """Adam moments for one tensor."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, value: np.ndarray, grad: np.ndarray, lr: float, t: int,
             beta1: float, beta2: float, eps: float) -> np.ndarray:
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad * grad
        m_hat = self.m / (1 - beta1 ** t)
        v_hat = self.v / (1 - beta2 ** t)
        return value - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainState:
    params: ModelParams
    log_tau: float = math.log(TAU_INIT)
    epoch: int = 0
    seed: int = 0
    moments: dict = field(default_factory=dict, repr=False)
    step_count: int = 0

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)


def _param_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    return {
        "audio_encoder_w": params.audio_encoder.w,
        "audio_encoder_b": params.audio_encoder.b,
        "text_encoder_w": params.text_encoder.w,
        "text_encoder_b": params.text_encoder.b,
        "audio_head_w1": params.audio_head.w1,
        "audio_head_b1": params.audio_head.b1,
        "audio_head_w2": params.audio_head.w2,
        "audio_head_b2": params.audio_head.b2,
        "text_head_w1": params.text_head.w1,
        "text_head_b1": params.text_head.b1,
        "text_head_w2": params.text_head.w2,
        "text_head_b2": params.text_head.b2,
    }


def _grad_tensors(grads: ParamGrads) -> dict[str, np.ndarray]:
    return {
        "audio_encoder_w": grads.audio_encoder_w,
        "audio_encoder_b": grads.audio_encoder_b,
        "text_encoder_w": grads.text_encoder_w,
        "text_encoder_b": grads.text_encoder_b,
        "audio_head_w1": grads.audio_head.w1,
        "audio_head_b1": grads.audio_head.b1,
        "audio_head_w2": grads.audio_head.w2,
        "audio_head_b2": grads.audio_head.b2,
        "text_head_w1": grads.text_head.w1,
        "text_head_b1": grads.text_head.b1,
        "text_head_w2": grads.text_head.w2,
        "text_head_b2": grads.text_head.b2,
    }


def _write_back(params: ModelParams, tensors: dict[str, np.ndarray]) -> None:
    params.audio_encoder.w = tensors["audio_encoder_w"]
    params.audio_encoder.b = tensors["audio_encoder_b"]
    params.text_encoder.w = tensors["text_encoder_w"]
    params.text_encoder.b = tensors["text_encoder_b"]
    params.audio_head.w1 = tensors["audio_head_w1"]
    params.audio_head.b1 = tensors["audio_head_b1"]
    params.audio_head.w2 = tensors["audio_head_w2"]
    params.audio_head.b2 = tensors["audio_head_b2"]
    params.text_head.w1 = tensors["text_head_w1"]
    params.text_head.b1 = tensors["text_head_b1"]
    params.text_head.w2 = tensors["text_head_w2"]
    params.text_head.b2 = tensors["text_head_b2"]


def adam_step(state: TrainState, grads: ParamGrads, config: TrainConfig) -> None:
    """One Adam update over every parameter tensor plus log_tau, then the
    temperature clamp."""
    state.step_count += 1
    t = state.step_count
    tensors = _param_tensors(state.params)
    grad_map = _grad_tensors(grads)
    updated = {}
    for name, value in tensors.items():
        moments = state.moments.setdefault(name, AdamState(value.shape))
        updated[name] = moments.step(value, grad_map[name],
                                     config.learning_rate, t,
                                     config.beta1, config.beta2, config.eps)
    _write_back(state.params, updated)
    tau_moments = state.moments.setdefault("log_tau", AdamState(()))
    new_log_tau = tau_moments.step(np.float64(state.log_tau),
                                   np.float64(grads.log_tau),
                                   config.learning_rate, t,
                                   config.beta1, config.beta2, config.eps)
    state.log_tau = float(np.clip(new_log_tau, math.log(TAU_MIN),
                                  math.log(TAU_MAX)))


@dataclass
class CorpusItem:
    """One training example: precomputed encoder inputs plus its captions."""
    recording_id: str
    audio_input: np.ndarray              # mel_bins vector (mel time-mean)
    captions: list[Caption]
    text_inputs: list[np.ndarray]        # one hashed-count vector per caption


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    tau: float


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Versioned container of every parameter tensor plus config and epoch."""
    meta = {"format_version": _CKPT_VERSION,
            "encoder_config": asdict(state.params.config),
            "log_tau": state.log_tau, "epoch": state.epoch,
            "seed": state.seed, "step_count": state.step_count}
    arrays = {name: value.astype(np.float32)
              for name, value in _param_tensors(state.params).items()}
    with Path(path).open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(
            json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> TrainState:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != _CKPT_VERSION:
            raise TrainingError(
                f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        config = EncoderConfig(**meta["encoder_config"])
        params = init_params(config, seed=0)
        tensors = {name: data[name].astype(np.float64)
                   for name in _param_tensors(params)}
        _write_back(params, tensors)
    return TrainState(params=params, log_tau=meta["log_tau"],
                      epoch=meta["epoch"], seed=meta["seed"],
                      step_count=meta["step_count"])


def write_loss_log(logs: Sequence[EpochLog], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "trainLoss", "tau"])
        for entry in logs:
            writer.writerow([entry.epoch, f"{entry.train_loss:.6f}",
                             f"{entry.tau:.6f}"])


def train(corpus: Sequence[CorpusItem], config: TrainConfig,
          encoder_config: Optional[EncoderConfig] = None,
          checkpoint_path: Optional[str | Path] = None,
          state: Optional[TrainState] = None
          ) -> tuple[TrainState, list[EpochLog]]:
    """Seeded shuffled-batch training loop.

    One caption per recording is re-sampled every epoch. A trailing batch of
    size one is skipped (the loss is uninformative). The checkpoint file is
    rewritten after every epoch; a NaN loss aborts with Divergence, leaving
    the last good checkpoint on disk.
    """
    if not corpus:
        raise TrainingError("empty training corpus")
    if state is None:
        encoder_config = encoder_config or EncoderConfig()
        state = TrainState(params=init_params(encoder_config, seed=config.seed),
                           seed=config.seed)
    logs: list[EpochLog] = []
    order_rng = np.random.default_rng(config.seed)
    items = list(corpus)

    for epoch in range(state.epoch + 1, state.epoch + config.epochs + 1):
        perm = order_rng.permutation(len(items))
        epoch_losses = []
        for start in range(0, len(items), config.batch_size):
            chosen = [items[i] for i in perm[start:start + config.batch_size]]
            if len(chosen) < 2:
                continue
            audio_in = np.stack([item.audio_input for item in chosen])
            text_in = np.stack([
                item.text_inputs[_caption_choice(
                    len(item.captions), item.recording_id, epoch, config.seed)]
                for item in chosen])
            try:
                loss, grads, _, _ = loss_gradients(audio_in, text_in,
                                                   state.params, state.log_tau)
            except NonFiniteLoss as exc:
                raise Divergence(f"epoch {epoch}: {exc}") from exc
            if not math.isfinite(loss):
                raise Divergence(f"epoch {epoch}: loss {loss}")
            adam_step(state, grads, config)
            epoch_losses.append(loss)
        state.epoch = epoch
        logs.append(EpochLog(epoch=epoch,
                             train_loss=float(np.mean(epoch_losses)),
                             tau=state.tau))
        if checkpoint_path is not None:
            save_checkpoint(state, checkpoint_path)
    return state, logs
