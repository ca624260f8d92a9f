"""Streaming SVDF keyword spotter: scoring, loss, and analytic gradients.

The network is an encoder of SVDF-plus-bottleneck layers followed by a
decoder of SVDF layers and a single-logit output. Each SVDF node applies a
feature filter to the current frame and a time filter over its last T
filtered outputs, so scores at frame t depend only on frames <= t.

Per-frame probabilities come from a sigmoid over logits clamped to +/-30,
keeping the binary cross-entropy finite for any weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..kernels import LOGIT_CLAMP
from .config import ModelConfig, ParamLayout, unpack_ops


def _as_frames(frames: np.ndarray, config: ModelConfig) -> np.ndarray:
    x = np.ascontiguousarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_bins:
        raise ValueError(
            f"frames must be (F, {config.input_bins}), got {x.shape}")
    return x


def scores_from_logits(logits: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)))


def model_forward(params: np.ndarray, config: ModelConfig,
                  frames: np.ndarray) -> np.ndarray:
    """Per-frame keyword probabilities, strictly inside (0, 1)."""
    x = _as_frames(frames, config)
    ops = unpack_ops(params, config)
    return scores_from_logits(kernels.net_forward(ops, x))


def frame_bce_loss(scores: np.ndarray, targets: np.ndarray) -> float:
    """Mean over frames of the per-frame binary cross-entropy."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if scores.shape != y.shape:
        raise ValueError(
            f"scores/targets length mismatch: {scores.shape} vs {y.shape}")
    return float(-np.mean(y * np.log(scores) + (1.0 - y) * np.log1p(-scores)))


def model_backward(params: np.ndarray, config: ModelConfig,
                   frames: np.ndarray, targets: np.ndarray,
                   grad_out: np.ndarray | None = None,
                   layout: ParamLayout | None = None) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. every parameter (full BPTT).

    grad_out, when given, must be a preallocated flat vector of the right
    length; it is overwritten and returned, which keeps the client-training
    inner loop free of per-step allocations.
    """
    x = _as_frames(frames, config)
    layout = layout or ParamLayout.for_config(config)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise ValueError(f"targets must be ({x.shape[0]},), got {y.shape}")
    if grad_out is None:
        grad_out = np.empty(layout.total, dtype=np.float64)
    elif grad_out.shape != (layout.total,):
        raise ValueError("grad_out has the wrong length")
    ops = unpack_ops(params, config, layout)
    grad_ops = unpack_ops(grad_out, config, layout)
    logits = kernels.net_backward(ops, x, y, grad_ops)
    loss = frame_bce_loss(scores_from_logits(logits), y)
    return loss, grad_out


class BoundModel:
    """Params bound to a config with prebuilt kernel views.

    The op views alias the flat vector, so in-place updates of ``params``
    (the SGD inner loop) are visible without re-unpacking. This is the hot
    path used by client training; the module-level functions stay available
    for one-off calls.
    """

    def __init__(self, params: np.ndarray, config: ModelConfig):
        self.config = config
        self.layout = ParamLayout.for_config(config)
        self.params = np.ascontiguousarray(params, dtype=np.float64)
        self.grad = np.zeros(self.layout.total, dtype=np.float64)
        self._ops = unpack_ops(self.params, config, self.layout)
        self._grad_ops = unpack_ops(self.grad, config, self.layout)

    def forward(self, frames: np.ndarray) -> np.ndarray:
        return scores_from_logits(kernels.net_forward(self._ops, frames))

    def backward(self, frames: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and gradient; the returned array is reused across calls."""
        logits = kernels.net_backward(self._ops, frames, targets, self._grad_ops)
        return frame_bce_loss(scores_from_logits(logits), targets), self.grad

    def sgd_step(self, lr: float):
        self.params -= lr * self.grad


# --- streaming interface ----------------------------------------------------

@dataclass
class SvdfLayerParams:
    """One SVDF layer: N x D feature filters, N x T time filters, N biases."""

    feature_filters: np.ndarray
    time_filters: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        n, _ = self.feature_filters.shape
        if self.time_filters.shape[0] != n or self.biases.shape != (n,):
            raise ValueError("inconsistent SVDF layer shapes")


def init_stream_state(layer: SvdfLayerParams) -> np.ndarray:
    """Fresh per-layer memory: buffer[tau, n] holds s_n(t - tau), zeroed."""
    n, t = layer.time_filters.shape
    return np.zeros((t, n), dtype=np.float64)


def svdf_forward(layer: SvdfLayerParams, state: np.ndarray,
                 x_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance one frame: returns (activations, new state).

    activations_n = relu(sum_tau B[n, tau] * s_n(t - tau) + bias_n) with
    s_n(t) = A_n . x_t. The state is not mutated; index 0 of the returned
    buffer is the newest filtered output.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (layer.feature_filters.shape[1],):
        raise ValueError(f"frame has {x_t.shape}, layer expects "
                         f"({layer.feature_filters.shape[1]},)")
    if state.shape != layer.time_filters.shape[::-1]:
        raise ValueError("state buffer does not match layer memory")
    s_t = layer.feature_filters @ x_t
    new_state = np.empty_like(state)
    new_state[0] = s_t
    new_state[1:] = state[:-1]
    pre = np.einsum("nt,tn->n", layer.time_filters, new_state) + layer.biases
    return np.maximum(pre, 0.0), new_state


class StreamingScorer:
    """Frame-at-a-time scorer equivalent to model_forward.

    Slow-path reference used to check the batch kernels and to demonstrate
    streaming inference; training always goes through the batch path.
    """

    def __init__(self, params: np.ndarray, config: ModelConfig):
        self.config = config
        self._ops = unpack_ops(params, config)
        self._layers = [SvdfLayerParams(a, b, c)
                        for kind, a, b, c in
                        [op for op in self._ops if op[0] == "svdf"]]
        self.reset()

    def reset(self):
        self._states = [init_stream_state(layer) for layer in self._layers]

    def push(self, x_t: np.ndarray) -> float:
        """Consume one frame, return its keyword probability."""
        h = np.asarray(x_t, dtype=np.float64)
        svdf_idx = 0
        for op in self._ops:
            if op[0] == "svdf":
                h, self._states[svdf_idx] = svdf_forward(
                    self._layers[svdf_idx], self._states[svdf_idx], h)
                svdf_idx += 1
            else:
                _, w, b = op
                h = w @ h + b
        return float(scores_from_logits(h[:1])[0])

    def score_utterance(self, frames: np.ndarray) -> np.ndarray:
        self.reset()
        return np.array([self.push(f) for f in np.asarray(frames, dtype=np.float64)])
