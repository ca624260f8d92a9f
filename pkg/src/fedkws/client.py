"""Local training on one simulated client.

A client downloads the round's global weights, runs multi-epoch SGD with
batch size 1 over its cache (shuffling and re-augmenting every epoch), and
returns the norm-clipped weight delta along with its example count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .augment import SpecAugmentConfig, apply_spec_augment
from .dataset import Utterance
from .model.config import ModelConfig
from .model.network import BoundModel
from .numerics import DEFAULT_CLIP_NORM, clip_by_norm
from .partition import ClientCache

DEFAULT_CLIENT_LR = 0.02
DEFAULT_LR_GAMMA = 0.9
DEFAULT_LR_DECAY_EVERY = 1000
DEFAULT_CLIENT_EPOCHS = 10


@dataclass(frozen=True)
class ClientLrSchedule:
    kind: str = "exponential"
    eta0: float = DEFAULT_CLIENT_LR
    gamma: float = DEFAULT_LR_GAMMA
    decay_every: int = DEFAULT_LR_DECAY_EVERY

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"schedule kind must be constant or exponential, "
                             f"got {self.kind!r}")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")


@dataclass(frozen=True)
class ClientConfig:
    epochs: int = DEFAULT_CLIENT_EPOCHS
    clip_norm: float = DEFAULT_CLIP_NORM
    augment: SpecAugmentConfig | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")


@dataclass
class ClientUpdate:
    client_id: str
    delta: np.ndarray     # w_t - w_final, post-clipping
    n_k: int
    local_loss: float


def client_lr(schedule: ClientLrSchedule, round_idx: int) -> float:
    """Learning rate for a round: constant, or decayed by gamma every
    decay_every rounds."""
    if round_idx < 0:
        raise ValueError("round index must be >= 0")
    if schedule.kind == "constant":
        return schedule.eta0
    return schedule.eta0 * schedule.gamma ** (round_idx // schedule.decay_every)


def train_client(w_t: np.ndarray, cache: ClientCache,
                 utterances: Mapping[str, Utterance], cfg: ClientConfig,
                 schedule: ClientLrSchedule, round_idx: int,
                 rng: np.random.Generator, model_config: ModelConfig) -> ClientUpdate:
    """Run local SGD and return the clipped update.

    The rng stream is consumed in a fixed order (per epoch: one shuffle, then
    one augmentation draw per utterance), so identical streams reproduce
    identical updates. local_loss is the mean pre-step loss over the first
    epoch's (augmented) examples.
    """
    if cache.n_k == 0:
        raise ValueError("cannot train on an empty cache")
    eta = client_lr(schedule, round_idx)
    model = BoundModel(w_t.copy(), model_config)
    first_epoch_losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(cache.n_k)
        for i in order:
            u = utterances[cache.utterance_ids[i]]
            spec = u.spec
            if cfg.augment is not None:
                spec = apply_spec_augment(spec, cfg.augment, rng)
            loss, _ = model.backward(np.ascontiguousarray(spec),
                                     u.targets.astype(np.float64))
            if epoch == 0:
                first_epoch_losses.append(loss)
            model.sgd_step(eta)
    delta = clip_by_norm(w_t - model.params, cfg.clip_norm)
    return ClientUpdate(cache.client_id, delta, cache.n_k,
                        float(np.mean(first_epoch_losses)))
