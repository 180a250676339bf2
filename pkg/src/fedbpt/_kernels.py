"""Hot forward-pass kernels for the synthetic frozen classifier.

A federated run calls the oracle hundreds of thousands of times on tiny
batches, so the per-call forward pass is the one loop worth compiling. Both
implementations compute, per sample: mean-pool the prompt pseudo-token
embeddings with the looked-up token embeddings, apply tanh(pooled @ w1) @ w2,
and return the cross-entropy against the label plus the argmax prediction
(ties broken toward the lowest class index).

Token sequences are passed ragged as (flat_tokens, offsets) with
``offsets[i]:offsets[i+1]`` delimiting sample i; sequences are non-empty.

Set ``FEDBPT_NO_NUMBA=1`` to force the pure-numpy path (used by the
benchmark in ``benchmarks/bench_kernels.py`` to compare both).
"""

from __future__ import annotations

import math
import os

import numpy as np


def forward_numpy(emb, w1, w2, prompt_sum, n_prompt, flat_tokens, offsets, labels):
    """Vectorized reference implementation."""
    token_vecs = emb[flat_tokens]
    sums = np.add.reduceat(token_vecs, offsets[:-1], axis=0)
    lengths = np.diff(offsets)
    pooled = (prompt_sum + sums) / (n_prompt + lengths)[:, None]
    hidden = np.tanh(pooled @ w1)
    logits = hidden @ w2
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    losses = lse - logits[np.arange(logits.shape[0]), labels]
    preds = logits.argmax(axis=1)
    return losses, preds


def _forward_loops(emb, w1, w2, prompt_sum, n_prompt, flat_tokens, offsets, labels):
    n_samples = offsets.shape[0] - 1
    embed_dim = emb.shape[1]
    hidden_dim = w1.shape[1]
    n_classes = w2.shape[1]
    losses = np.empty(n_samples)
    preds = np.empty(n_samples, dtype=np.int64)
    pooled = np.empty(embed_dim)
    hidden = np.empty(hidden_dim)
    logits = np.empty(n_classes)
    for i in range(n_samples):
        start, stop = offsets[i], offsets[i + 1]
        for c in range(embed_dim):
            pooled[c] = prompt_sum[c]
        for t in range(start, stop):
            row = flat_tokens[t]
            for c in range(embed_dim):
                pooled[c] += emb[row, c]
        denom = n_prompt + (stop - start)
        for c in range(embed_dim):
            pooled[c] /= denom
        for h in range(hidden_dim):
            acc = 0.0
            for c in range(embed_dim):
                acc += pooled[c] * w1[c, h]
            hidden[h] = math.tanh(acc)
        for k in range(n_classes):
            acc = 0.0
            for h in range(hidden_dim):
                acc += hidden[h] * w2[h, k]
            logits[k] = acc
        best = 0
        peak = logits[0]
        for k in range(1, n_classes):
            if logits[k] > peak:
                peak = logits[k]
                best = k
        total = 0.0
        for k in range(n_classes):
            total += math.exp(logits[k] - peak)
        losses[i] = peak + math.log(total) - logits[labels[i]]
        preds[i] = best
    return losses, preds


def _want_numba() -> bool:
    return os.environ.get("FEDBPT_NO_NUMBA", "") != "1"


forward_numba = None
if _want_numba():
    try:
        from numba import njit

        forward_numba = njit(cache=True)(_forward_loops)
    except ImportError:
        forward_numba = None

forward = forward_numba if forward_numba is not None else forward_numpy
