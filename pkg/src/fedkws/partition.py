"""Grouping a corpus into simulated client caches.

Non-IID mode follows a three-step recipe: group by speaker, split each group
into a positive-only and a negative-only cluster, then carve each cluster
into clients whose sizes follow a rounded exponential law with a target
median. IID mode shuffles globally and chunks into fixed-size caches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import NEGATIVE, POSITIVE
from .errors import ConfigError
from .rngs import derive_rng

DEFAULT_IID_CLUSTER_SIZE = 50
DEFAULT_TARGET_MEDIAN_N = 6.5


@dataclass(frozen=True)
class ClientCache:
    client_id: str
    utterance_ids: tuple[str, ...]

    @property
    def n_k(self) -> int:
        return len(self.utterance_ids)

    def __post_init__(self):
        if not self.utterance_ids:
            raise ValueError(f"client {self.client_id} has an empty cache")
        if len(set(self.utterance_ids)) != len(self.utterance_ids):
            raise ValueError(f"client {self.client_id} repeats utterance ids")


@dataclass(frozen=True)
class PartitionConfig:
    mode: str = "non_iid"
    iid_cluster_size: int = DEFAULT_IID_CLUSTER_SIZE
    target_median_n: float = DEFAULT_TARGET_MEDIAN_N
    seed: int = 1

    def __post_init__(self):
        if self.mode not in ("iid", "non_iid"):
            raise ConfigError(f"partition mode must be iid or non_iid, got {self.mode!r}")
        if self.iid_cluster_size < 1:
            raise ConfigError("iid_cluster_size must be >= 1")
        if self.target_median_n < 1:
            raise ConfigError("target_median_n must be >= 1")


def sample_cache_size(median: float, rng: np.random.Generator) -> int:
    """One draw from the rounded exponential size law, floored at 1."""
    u = rng.random()
    while u <= 0.0:  # guard the open interval for log
        u = rng.random()
    return max(1, round(-median / math.log(2.0) * math.log(u)))


def partition_non_iid(dataset: Sequence, cfg: PartitionConfig) -> list[ClientCache]:
    """Speaker-pure, label-pure caches with exponentially distributed sizes.

    Every utterance lands in exactly one cache. Accepts anything with
    utterance_id / speaker_id / polarity attributes.
    """
    if not dataset:
        raise ValueError("cannot partition an empty dataset")
    by_speaker: dict[str, list] = {}
    for u in dataset:
        by_speaker.setdefault(u.speaker_id, []).append(u)

    rng = derive_rng(cfg.seed, "partition", "non_iid")
    caches = []
    for sid in sorted(by_speaker):
        group = by_speaker[sid]
        for polarity, code in ((POSITIVE, "pos"), (NEGATIVE, "neg")):
            cluster = [u.utterance_id for u in group if u.polarity == polarity]
            if not cluster:
                continue
            order = rng.permutation(len(cluster))
            shuffled = [cluster[i] for i in order]
            idx = 0
            pos = 0
            while pos < len(shuffled):
                size = sample_cache_size(cfg.target_median_n, rng)
                members = shuffled[pos:pos + size]  # final client takes the rest
                pos += len(members)
                caches.append(ClientCache(f"{sid}_{code}_{idx:03d}", tuple(members)))
                idx += 1
    return caches


def partition_iid(dataset: Sequence, cfg: PartitionConfig) -> list[ClientCache]:
    """Globally shuffled caches of exactly iid_cluster_size utterances.

    A trailing partial chunk is dropped so every cache has the exact size.
    """
    size = cfg.iid_cluster_size
    if len(dataset) < size:
        raise ValueError(
            f"dataset has {len(dataset)} utterances, need at least {size}")
    ids = [u.utterance_id for u in dataset]
    rng = derive_rng(cfg.seed, "partition", "iid")
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_full = len(shuffled) // size
    return [ClientCache(f"iid_{i:05d}", tuple(shuffled[i * size:(i + 1) * size]))
            for i in range(n_full)]


def partition(dataset: Sequence, cfg: PartitionConfig) -> list[ClientCache]:
    if cfg.mode == "iid":
        return partition_iid(dataset, cfg)
    return partition_non_iid(dataset, cfg)


def check_partition(caches: Iterable[ClientCache], dataset: Sequence | None = None,
                    require_purity: bool = False) -> None:
    """Raise if caches overlap, or (optionally) miss coverage / mix speakers
    or labels."""
    seen: dict[str, str] = {}
    for c in caches:
        for uid in c.utterance_ids:
            if uid in seen:
                raise ValueError(
                    f"utterance {uid} in both {seen[uid]} and {c.client_id}")
            seen[uid] = c.client_id
    if dataset is not None:
        missing = {u.utterance_id for u in dataset} - seen.keys()
        if missing:
            raise ValueError(f"{len(missing)} utterances unassigned")
    if require_purity and dataset is not None:
        info = {u.utterance_id: (u.speaker_id, u.polarity) for u in dataset}
        for c in caches:
            speakers = {info[uid][0] for uid in c.utterance_ids}
            labels = {info[uid][1] for uid in c.utterance_ids}
            if len(speakers) > 1 or len(labels) > 1:
                raise ValueError(f"client {c.client_id} is not pure")


# --- partition file ------------------------------------------------------------

def write_partition(caches: Iterable[ClientCache], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in caches:
            for uid in c.utterance_ids:
                fh.write(f"{c.client_id}\t{uid}\n")


def read_partition(path) -> list[ClientCache]:
    groups: dict[str, list[str]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(
                    f"{path}: line {lineno}: expected client_id<TAB>utterance_id")
            cid, uid = parts
            if cid not in groups:
                groups[cid] = []
                order.append(cid)
            groups[cid].append(uid)
    return [ClientCache(cid, tuple(groups[cid])) for cid in order]
