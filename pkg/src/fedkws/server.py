"""Server-side aggregation and the optimizer family applied to it.

The aggregated client delta is treated as a pseudo-gradient. Variants: plain
SGD, Nesterov momentum, and Adam/Yogi without bias correction, each with an
optional Nesterov flavor of the first moment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .client import ClientUpdate

VARIANTS = ("sgd", "nag", "adam", "yogi")

# Grid-searched defaults: FedAvg runs at unit server LR with 0.99 momentum;
# Adam keeps the classic 1e-8 epsilon while Yogi prefers a much larger one
# plus a tiny positive initial accumulator.
DEFAULT_ETA_S = {"sgd": 1.0, "nag": 1.0, "adam": 1e-3, "yogi": 0.1}
DEFAULT_EPSILON = {"adam": 1e-8, "yogi": 1e-3}
DEFAULT_V0 = {"adam": 0.0, "yogi": 1e-6}
DEFAULT_MOMENTUM = 0.99
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999


@dataclass(frozen=True)
class ServerOptimizerConfig:
    variant: str = "yogi"
    nesterov: bool = False
    eta_s: float | None = None     # None: variant default
    gamma: float = DEFAULT_MOMENTUM
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float | None = None   # None: variant default
    v0: float | None = None       # None: variant default

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must be in [0, 1)")
        if self.eta_s is not None and not self.eta_s > 0:
            raise ValueError("eta_s must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.v0 is not None and self.v0 < 0:
            raise ValueError("v0 must be >= 0")

    @property
    def lr(self) -> float:
        return DEFAULT_ETA_S[self.variant] if self.eta_s is None else self.eta_s

    @property
    def eps(self) -> float:
        return DEFAULT_EPSILON.get(self.variant, 1e-8) if self.epsilon is None else self.epsilon

    @property
    def init_accumulator(self) -> float:
        return DEFAULT_V0.get(self.variant, 0.0) if self.v0 is None else self.v0


@dataclass
class ServerOptimizerState:
    t: int = 0
    v: np.ndarray | None = None  # momentum
    m: np.ndarray | None = None  # first moment
    s: np.ndarray | None = None  # second moment
    vectors: tuple[str, ...] = field(init=False, default=())

    def __post_init__(self):
        self.vectors = tuple(name for name in ("v", "m", "s")
                             if getattr(self, name) is not None)


def init_state(cfg: ServerOptimizerConfig, param_len: int) -> ServerOptimizerState:
    if cfg.variant == "sgd":
        return ServerOptimizerState()
    if cfg.variant == "nag":
        return ServerOptimizerState(v=np.zeros(param_len))
    return ServerOptimizerState(
        m=np.zeros(param_len),
        s=np.full(param_len, float(cfg.init_accumulator)))


def aggregate(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Example-count weighted mean of client deltas, summed in client-id order."""
    if not updates:
        raise ValueError("a round needs at least one client update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    lengths = {u.delta.shape for u in ordered}
    if len(lengths) != 1:
        raise ValueError(f"client deltas disagree on length: {lengths}")
    total = float(sum(u.n_k for u in ordered))
    acc = np.zeros_like(ordered[0].delta)
    for u in ordered:
        acc += (u.n_k / total) * u.delta
    return acc


def sgd_step(w_t: np.ndarray, delta: np.ndarray, eta_s: float) -> np.ndarray:
    if w_t.shape != delta.shape:
        raise ValueError("weights and delta must have equal length")
    return w_t - eta_s * delta


def nag_step(state: ServerOptimizerState, w_t: np.ndarray, delta: np.ndarray,
             eta_s: float, gamma: float) -> tuple[np.ndarray, ServerOptimizerState]:
    if state.v is None or state.v.shape != w_t.shape or w_t.shape != delta.shape:
        raise ValueError("momentum state does not match weights")
    v_next = gamma * state.v + delta
    w_next = w_t - eta_s * (gamma * v_next + delta)
    return w_next, ServerOptimizerState(t=state.t + 1, v=v_next)


def adaptive_step(state: ServerOptimizerState, w_t: np.ndarray, delta: np.ndarray,
                  cfg: ServerOptimizerConfig) -> tuple[np.ndarray, ServerOptimizerState]:
    """One uncorrected Adam or Yogi step on the pseudo-gradient."""
    if cfg.variant not in ("adam", "yogi"):
        raise ValueError(f"adaptive_step needs adam or yogi, got {cfg.variant!r}")
    if state.m is None or state.s is None or state.m.shape != w_t.shape:
        raise ValueError("adaptive state does not match weights")
    sq = delta * delta
    m_next = cfg.beta1 * state.m + (1.0 - cfg.beta1) * delta
    if cfg.variant == "adam":
        s_next = cfg.beta2 * state.s + (1.0 - cfg.beta2) * sq
    else:
        s_next = state.s - (1.0 - cfg.beta2) * np.sign(state.s - sq) * sq
    m_eff = cfg.beta1 * m_next + (1.0 - cfg.beta1) * delta if cfg.nesterov else m_next
    w_next = w_t - cfg.lr * m_eff / (np.sqrt(s_next) + cfg.eps)
    return w_next, ServerOptimizerState(t=state.t + 1, m=m_next, s=s_next)


def server_step(cfg: ServerOptimizerConfig, state: ServerOptimizerState,
                w_t: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, ServerOptimizerState]:
    """Dispatch on the configured variant."""
    if cfg.variant == "sgd":
        return sgd_step(w_t, delta, cfg.lr), replace(state, t=state.t + 1)
    if cfg.variant == "nag":
        return nag_step(state, w_t, delta, cfg.lr, cfg.gamma)
    return adaptive_step(state, w_t, delta, cfg)
