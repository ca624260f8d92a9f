"""Spectrogram augmentation: time masks filled with noise, frequency masks zeroed.

Applied on the fly during client training, never persisted. Time-warping is
deliberately not implemented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tuned mask maxima: 2 time masks of up to 60 frames, 2 frequency masks of
# up to 15 bins.
DEFAULT_N_TIME_MASKS = 2
DEFAULT_MAX_TIME_FRAMES = 60
DEFAULT_N_FREQ_MASKS = 2
DEFAULT_MAX_FREQ_BINS = 15


@dataclass(frozen=True)
class SpecAugmentConfig:
    n_time_masks: int = DEFAULT_N_TIME_MASKS
    max_time_frames: int = DEFAULT_MAX_TIME_FRAMES
    n_freq_masks: int = DEFAULT_N_FREQ_MASKS
    max_freq_bins: int = DEFAULT_MAX_FREQ_BINS
    noise_mean: float | None = None  # None: per-utterance spectrogram mean
    noise_std: float | None = None   # None: per-utterance spectrogram std

    def __post_init__(self):
        if min(self.n_time_masks, self.max_time_frames,
               self.n_freq_masks, self.max_freq_bins) < 0:
            raise ValueError("mask counts and maxima must be >= 0")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def apply_spec_augment(spec: np.ndarray, cfg: SpecAugmentConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Return an augmented copy of an (F, B) spectrogram.

    For each time mask: width ~ U{0..min(max_time_frames, F)}, start
    ~ U{0..F-width}, rows replaced with i.i.d. Gaussian noise. For each
    frequency mask: width ~ U{0..min(max_freq_bins, B)}, start uniform,
    columns zeroed. Time masks are applied first; overlaps are allowed.
    """
    spec = np.asarray(spec, dtype=np.float64)
    out = spec.copy()
    n_frames, n_bins = spec.shape
    mean = float(spec.mean()) if cfg.noise_mean is None else cfg.noise_mean
    std = float(spec.std()) if cfg.noise_std is None else cfg.noise_std

    for _ in range(cfg.n_time_masks):
        width = int(rng.integers(0, min(cfg.max_time_frames, n_frames) + 1))
        start = int(rng.integers(0, n_frames - width + 1))
        out[start:start + width, :] = rng.normal(mean, std, size=(width, n_bins))
    for _ in range(cfg.n_freq_masks):
        width = int(rng.integers(0, min(cfg.max_freq_bins, n_bins) + 1))
        start = int(rng.integers(0, n_bins - width + 1))
        out[:, start:start + width] = 0.0
    return out
