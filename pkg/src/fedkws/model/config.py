"""Model configuration, canonical parameter layout, and initialization.

All weights live in one flat float64 vector. The canonical flattening order
is: encoder layers in order (feature filters row-major, time filters
row-major, biases, then bottleneck weights row-major followed by bottleneck
biases), decoder layers likewise (no bottleneck), then the output layer
weights and bias. Checkpoints depend on this order never changing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..rngs import derive_rng

# (nodes, memory, bottleneck_dim) per encoder layer; (nodes, memory) per
# decoder layer. Desk-scale defaults train in minutes on synthetic data.
DEFAULT_ENCODER = ((32, 8, 16),) * 4
DEFAULT_DECODER = ((16, 16),) * 3


@dataclass(frozen=True)
class ModelConfig:
    input_bins: int = 16
    encoder: tuple[tuple[int, int, int], ...] = DEFAULT_ENCODER
    decoder: tuple[tuple[int, int], ...] = DEFAULT_DECODER

    def __post_init__(self):
        if self.input_bins < 1:
            raise ValueError("input_bins must be >= 1")
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder each need at least one layer")
        for n, t, bn in self.encoder:
            if min(n, t, bn) < 1:
                raise ValueError(f"bad encoder layer ({n}, {t}, {bn})")
        for n, t in self.decoder:
            if min(n, t) < 1:
                raise ValueError(f"bad decoder layer ({n}, {t})")


@dataclass(frozen=True)
class ParamLayout:
    """Name, shape, and flat offset of every parameter block."""

    entries: tuple[tuple[str, tuple[int, ...], int], ...]
    total: int
    slices: dict[str, tuple[slice, tuple[int, ...]]] = field(repr=False, default_factory=dict)

    @staticmethod
    @lru_cache(maxsize=64)
    def for_config(config: ModelConfig) -> "ParamLayout":
        entries = []
        offset = 0

        def add(name: str, shape: tuple[int, ...]):
            nonlocal offset
            entries.append((name, shape, offset))
            offset += int(np.prod(shape))

        d = config.input_bins
        for i, (n, t, bn) in enumerate(config.encoder):
            add(f"enc{i}.feature", (n, d))
            add(f"enc{i}.time", (n, t))
            add(f"enc{i}.bias", (n,))
            add(f"enc{i}.proj_w", (bn, n))
            add(f"enc{i}.proj_b", (bn,))
            d = bn
        for j, (n, t) in enumerate(config.decoder):
            add(f"dec{j}.feature", (n, d))
            add(f"dec{j}.time", (n, t))
            add(f"dec{j}.bias", (n,))
            d = n
        add("out.w", (1, d))
        add("out.b", (1,))

        slices = {name: (slice(off, off + int(np.prod(shape))), shape)
                  for name, shape, off in entries}
        return ParamLayout(entries=tuple(entries), total=offset, slices=slices)

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self.slices[name]
        return params[sl].reshape(shape)


def param_count(config: ModelConfig) -> int:
    return ParamLayout.for_config(config).total


def unpack_ops(params: np.ndarray, config: ModelConfig,
               layout: ParamLayout | None = None) -> list[tuple]:
    """View the flat vector as the kernel op list.

    Returns [("svdf", A, B, bias), ("linear", W, b), ...] ending with the
    1-unit output linear. All entries are views into ``params``; in-place
    updates of the flat vector are visible through them.
    """
    layout = layout or ParamLayout.for_config(config)
    if params.ndim != 1 or params.size != layout.total:
        raise ValueError(
            f"params length {params.size} does not match config ({layout.total})")
    ops: list[tuple] = []
    for i in range(len(config.encoder)):
        ops.append(("svdf", layout.view(params, f"enc{i}.feature"),
                    layout.view(params, f"enc{i}.time"),
                    layout.view(params, f"enc{i}.bias")))
        ops.append(("linear", layout.view(params, f"enc{i}.proj_w"),
                    layout.view(params, f"enc{i}.proj_b")))
    for j in range(len(config.decoder)):
        ops.append(("svdf", layout.view(params, f"dec{j}.feature"),
                    layout.view(params, f"dec{j}.time"),
                    layout.view(params, f"dec{j}.bias")))
    ops.append(("linear", layout.view(params, "out.w"),
                layout.view(params, "out.b")))
    return ops


def init_params(config: ModelConfig, seed: int) -> np.ndarray:
    """Seeded uniform init: each weight matrix (rows, cols) is drawn from
    U[-s, s] with s = sqrt(6 / (rows + cols)); biases start at zero."""
    layout = ParamLayout.for_config(config)
    params = np.zeros(layout.total, dtype=np.float64)
    rng = derive_rng(seed, "init")
    for name, shape, off in layout.entries:
        if len(shape) == 2:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            block = rng.uniform(-s, s, size=shape)
            params[off:off + block.size] = block.reshape(-1)
    return params
