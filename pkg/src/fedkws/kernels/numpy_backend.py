"""Vectorized numpy implementation of the network kernels.

Fallback used when the compiled extension is unavailable. Works on whole
utterances: the causal per-node time filtering is expressed as a sliding
window over zero-padded feature-filter outputs, so no Python-level loop runs
per frame.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOGIT_CLAMP = 30.0


def _fir_forward(s: np.ndarray, time_filters: np.ndarray) -> np.ndarray:
    # pre[t, n] = sum_tau B[n, tau] * s[t - tau, n], zero before frame 0
    frames, nodes = s.shape
    memory = time_filters.shape[1]
    padded = np.zeros((frames + memory - 1, nodes))
    padded[memory - 1:] = s
    win = sliding_window_view(padded, memory, axis=0)  # (F, N, T)
    return np.einsum("fnt,nt->fn", win, time_filters[:, ::-1])


def _fir_backward_filters(s: np.ndarray, dpre: np.ndarray, memory: int) -> np.ndarray:
    # dB[n, tau] = sum_t dpre[t, n] * s[t - tau, n]
    frames, nodes = s.shape
    padded = np.zeros((frames + memory - 1, nodes))
    padded[memory - 1:] = s
    win = sliding_window_view(padded, memory, axis=0)
    return np.einsum("fnt,fn->nt", win, dpre)[:, ::-1]


def _fir_backward_inputs(dpre: np.ndarray, time_filters: np.ndarray) -> np.ndarray:
    # ds[t, n] = sum_tau B[n, tau] * dpre[t + tau, n], zero past the last frame
    frames, nodes = dpre.shape
    memory = time_filters.shape[1]
    padded = np.zeros((frames + memory - 1, nodes))
    padded[:frames] = dpre
    win = sliding_window_view(padded, memory, axis=0)
    return np.einsum("fnt,nt->fn", win, time_filters)


def net_forward(ops: list[tuple], frames: np.ndarray) -> np.ndarray:
    """Run the op list over an utterance, returning per-frame logits."""
    h = frames
    for op in ops:
        if op[0] == "svdf":
            _, feat, time_f, bias = op
            s = h @ feat.T
            h = np.maximum(_fir_forward(s, time_f) + bias, 0.0)
        else:
            _, w, b = op
            h = h @ w.T + b
    return h[:, 0]


def net_backward(ops: list[tuple], frames: np.ndarray, targets: np.ndarray,
                 grad_ops: list[tuple]) -> np.ndarray:
    """Fill grad_ops with d(mean-frame BCE)/d(params); returns the logits."""
    h = frames
    caches = []
    for op in ops:
        if op[0] == "svdf":
            _, feat, time_f, bias = op
            s = h @ feat.T
            pre = _fir_forward(s, time_f) + bias
            caches.append((h, s, pre))
            h = np.maximum(pre, 0.0)
        else:
            _, w, b = op
            caches.append(h)
            h = h @ w.T + b
    logits = h[:, 0]

    n_frames = logits.shape[0]
    p = 1.0 / (1.0 + np.exp(-np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)))
    dlogit = (p - targets) / n_frames
    dlogit[np.abs(logits) >= LOGIT_CLAMP] = 0.0  # clamp kills the gradient

    dh = dlogit[:, None]
    for op, gop, cache in zip(reversed(ops), reversed(grad_ops), reversed(caches)):
        if op[0] == "svdf":
            _, feat, time_f, _ = op
            _, gfeat, gtime, gbias = gop
            hin, s, pre = cache
            dpre = dh * (pre > 0.0)
            gbias[:] = dpre.sum(axis=0)
            gtime[:] = _fir_backward_filters(s, dpre, time_f.shape[1])
            ds = _fir_backward_inputs(dpre, time_f)
            gfeat[:] = ds.T @ hin
            dh = ds @ feat
        else:
            _, w, _ = op
            _, gw, gb = gop
            hin = cache
            gw[:] = dh.T @ hin
            gb[:] = dh.sum(axis=0)
            dh = dh @ w
    return logits
