import numpy as np
import pytest

from fedkws.augment import SpecAugmentConfig, apply_spec_augment
from fedkws.rngs import derive_rng


def spectro(seed=0, frames=100, bins=16):
    return derive_rng(seed, "spec").normal(size=(frames, bins))


def test_zero_mask_config_is_identity():
    spec = spectro()
    cfg = SpecAugmentConfig(n_time_masks=0, n_freq_masks=0)
    out = apply_spec_augment(spec, cfg, derive_rng(1, "aug"))
    assert np.array_equal(out, spec)


def test_default_config_values():
    cfg = SpecAugmentConfig()
    assert (cfg.n_time_masks, cfg.max_time_frames) == (2, 60)
    assert (cfg.n_freq_masks, cfg.max_freq_bins) == (2, 15)


def replay_masks(spec, cfg, rng):
    """Independent reimplementation: replay draws, record mask rectangles."""
    frames, bins = spec.shape
    expected = spec.copy()
    time_masks, freq_masks = [], []
    mean = spec.mean() if cfg.noise_mean is None else cfg.noise_mean
    std = spec.std() if cfg.noise_std is None else cfg.noise_std
    for _ in range(cfg.n_time_masks):
        w = int(rng.integers(0, min(cfg.max_time_frames, frames) + 1))
        t0 = int(rng.integers(0, frames - w + 1))
        expected[t0:t0 + w, :] = rng.normal(mean, std, size=(w, bins))
        time_masks.append((t0, w))
    for _ in range(cfg.n_freq_masks):
        w = int(rng.integers(0, min(cfg.max_freq_bins, bins) + 1))
        f0 = int(rng.integers(0, bins - w + 1))
        expected[:, f0:f0 + w] = 0.0
        freq_masks.append((f0, w))
    return expected, time_masks, freq_masks


def test_against_replayed_mask_oracle():
    spec = spectro(3)
    cfg = SpecAugmentConfig()
    out = apply_spec_augment(spec, cfg, derive_rng(42, "aug"))
    expected, time_masks, freq_masks = replay_masks(spec, cfg, derive_rng(42, "aug"))
    assert np.array_equal(out, expected)
    # frequency-masked columns are exactly zero
    for f0, w in freq_masks:
        assert np.all(out[:, f0:f0 + w] == 0.0)
    # everything outside the sampled masks is bit-identical to the input
    untouched = np.ones_like(spec, dtype=bool)
    for t0, w in time_masks:
        untouched[t0:t0 + w, :] = False
    for f0, w in freq_masks:
        untouched[:, f0:f0 + w] = False
    assert np.array_equal(out[untouched], spec[untouched])


def test_zero_std_fills_with_mean():
    spec = spectro(5, frames=40)
    cfg = SpecAugmentConfig(n_time_masks=1, max_time_frames=40, n_freq_masks=0,
                            noise_mean=2.5, noise_std=0.0)
    rng = derive_rng(7, "aug")
    out = apply_spec_augment(spec, cfg, rng)
    changed = np.any(out != spec, axis=1)
    assert np.all(out[changed] == 2.5)


def test_deterministic_given_seed():
    spec = spectro(9)
    cfg = SpecAugmentConfig()
    a = apply_spec_augment(spec, cfg, derive_rng(17, "aug"))
    b = apply_spec_augment(spec, cfg, derive_rng(17, "aug"))
    c = apply_spec_augment(spec, cfg, derive_rng(18, "aug"))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_input_not_mutated():
    spec = spectro(11)
    before = spec.copy()
    apply_spec_augment(spec, SpecAugmentConfig(), derive_rng(2, "aug"))
    assert np.array_equal(spec, before)


def test_mask_width_statistics_quick():
    # masked-row count per application ~ U{0..60}; acceptance runs the full 1e4
    spec = spectro(21, frames=100)
    cfg = SpecAugmentConfig(n_time_masks=1, max_time_frames=60, n_freq_masks=0,
                            noise_mean=50.0, noise_std=0.0)
    rng = derive_rng(23, "stats")
    widths = [int(np.sum(np.all(apply_spec_augment(spec, cfg, rng) == 50.0, axis=1)))
              for _ in range(2000)]
    assert abs(np.mean(widths) - 30.0) < 1.5


def test_degenerate_sizes_clamped():
    spec = spectro(1, frames=3, bins=2)
    cfg = SpecAugmentConfig(max_time_frames=100, max_freq_bins=100)
    out = apply_spec_augment(spec, cfg, derive_rng(3, "aug"))
    assert out.shape == spec.shape


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        SpecAugmentConfig(n_time_masks=-1)
