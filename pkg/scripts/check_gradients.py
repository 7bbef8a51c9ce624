#!/usr/bin/env python3
"""Standalone gradient audit: compare every analytic partial of the
contrastive objective (embeddings, encoder and projection parameters, the
temperature) against central finite differences and print a summary table.

Usage:
    python scripts/check_gradients.py [--batches 20] [--seed 0]
"""

import argparse
import math

import numpy as np

from echolex.encoder import EncoderConfig, init_params
from echolex.training import (Batch, contrastive_loss, contrastive_loss_grads,
                              loss_gradients, _grad_tensors, _param_tensors)

H = 1e-6


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batches", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    worst_by_kind: dict[str, float] = {}

    def track(kind, analytic, numeric):
        diff = abs(analytic - numeric)
        err = 0.0 if diff <= 1e-8 else diff / max(abs(analytic), abs(numeric))
        worst_by_kind[kind] = max(worst_by_kind.get(kind, 0.0), err)

    for b in range(args.batches):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        log_tau = float(rng.uniform(-1, 1))

        audio = rng.standard_normal((n, d))
        audio /= np.linalg.norm(audio, axis=1, keepdims=True)
        text = rng.standard_normal((n, d))
        text /= np.linalg.norm(text, axis=1, keepdims=True)
        batch = Batch(audio=audio, text=text)
        _, d_audio, d_text, d_lt = contrastive_loss_grads(batch, log_tau)
        tau = math.exp(log_tau)
        for matrix, grad, kind in ((audio, d_audio, "audio embeddings"),
                                   (text, d_text, "text embeddings")):
            for idx in np.ndindex(matrix.shape):
                orig = matrix[idx]
                matrix[idx] = orig + H
                up = contrastive_loss(batch, tau)
                matrix[idx] = orig - H
                down = contrastive_loss(batch, tau)
                matrix[idx] = orig
                track(kind, grad[idx], (up - down) / (2 * H))
        up = contrastive_loss(batch, math.exp(log_tau + H))
        down = contrastive_loss(batch, math.exp(log_tau - H))
        track("logTau", d_lt, (up - down) / (2 * H))

        config = EncoderConfig(d=d, audio_feature_dim=5, text_feature_dim=5,
                               hidden_dim=4, vocab_hash_buckets=7, mel_bins=6)
        params = init_params(config, seed=b)
        for tensor in _param_tensors(params).values():
            tensor += rng.standard_normal(tensor.shape) * 0.3
        audio_in = rng.standard_normal((n, config.mel_bins))
        text_in = np.abs(rng.standard_normal((n, config.vocab_hash_buckets)))
        _, grads, _, _ = loss_gradients(audio_in, text_in, params, log_tau)
        grad_map = _grad_tensors(grads)
        for name, tensor in _param_tensors(params).items():
            for idx in np.ndindex(tensor.shape):
                orig = tensor[idx]
                tensor[idx] = orig + H
                up = loss_gradients(audio_in, text_in, params, log_tau)[0]
                tensor[idx] = orig - H
                down = loss_gradients(audio_in, text_in, params, log_tau)[0]
                tensor[idx] = orig
                track(name, grad_map[name][idx], (up - down) / (2 * H))

    width = max(len(k) for k in worst_by_kind)
    print(f"{args.batches} batches, h={H}, rel-err floor 1e-8")
    for kind in sorted(worst_by_kind):
        print(f"  {kind:<{width}}  worst rel err {worst_by_kind[kind]:.3e}")
    overall = max(worst_by_kind.values())
    print(f"overall worst: {overall:.3e} ({'OK' if overall < 1e-5 else 'BAD'})")


if __name__ == "__main__":
    main()
