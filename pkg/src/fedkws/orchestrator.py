"""The federated round loop, checkpointing, and the centralized baseline.

Every random decision derives its own stream from (root seed, purpose label,
round, client id), so a run is a pure function of (seed, config, corpus) no
matter how many workers execute the clients. Weights and optimizer vectors
are narrowed to 32-bit at every checkpoint and the in-memory state adopts the
narrowed values, which makes resuming from a checkpoint bit-exact.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .augment import apply_spec_augment
from .client import (ClientConfig, ClientLrSchedule, client_lr, train_client)
from .dataset import Utterance
from .errors import ConsistencyError, FormatError
from .evaluation import EvalMetrics, eval_clients
from .model.config import ModelConfig, init_params
from .model.network import BoundModel
from .partition import ClientCache
from .rngs import derive_rng
from .server import (ServerOptimizerConfig, ServerOptimizerState, aggregate,
                     init_state, server_step)

CHECKPOINT_MAGIC = b"KWSC"
CHECKPOINT_VERSION = 1
_FLAG_BITS = {"v": 1, "m": 2, "s": 4}

METRICS_HEADER = "round,eval_loss,frame_accuracy,clients_seen,client_lr"

DEFAULT_CLIENTS_PER_ROUND = 20


@dataclass(frozen=True)
class RunConfig:
    clients_per_round: int = DEFAULT_CLIENTS_PER_ROUND
    total_rounds: int = 100
    eval_every: int = 10
    seed: int = 12345
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    server: ServerOptimizerConfig = field(default_factory=ServerOptimizerConfig)
    client: ClientConfig = field(default_factory=ClientConfig)
    schedule: ClientLrSchedule = field(default_factory=ClientLrSchedule)

    def __post_init__(self):
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be >= 1")
        if self.total_rounds < 0:
            raise ValueError("total_rounds must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def fingerprint(self) -> bytes:
        """8-byte digest of everything that shapes the trajectory.

        total_rounds and workers are deliberately excluded: extending a run
        or changing the pool size must not invalidate its checkpoints.
        """
        text = "|".join([
            str(self.clients_per_round), str(self.eval_every), str(self.seed),
            repr(self.model), repr(self.server), repr(self.client),
            repr(self.schedule),
        ])
        return hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()


@dataclass
class Checkpoint:
    round_idx: int
    params: np.ndarray
    opt_state: ServerOptimizerState
    config_hash: bytes


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    flags = 0
    for name in ckpt.opt_state.vectors:
        flags |= _FLAG_BITS[name]
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<HHII", CHECKPOINT_VERSION, flags, ckpt.round_idx,
                        ckpt.params.size)
    blob += np.ascontiguousarray(ckpt.params, dtype="<f4").tobytes()
    for name in ("v", "m", "s"):
        vec = getattr(ckpt.opt_state, name)
        if vec is not None:
            blob += name.encode("ascii")
            blob += np.ascontiguousarray(vec, dtype="<f4").tobytes()
    if len(ckpt.config_hash) != 8:
        raise ValueError("config hash must be 8 bytes")
    blob += ckpt.config_hash
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, expected_hash: bytes | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError("truncated header", offset=len(blob), field="header")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", offset=0, field="magic")
    version, flags, round_idx, p = struct.unpack("<HHII", blob[4:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, field="version")
    off = 16

    def take_vector(field_name: str) -> np.ndarray:
        nonlocal off
        end = off + 4 * p
        if end > len(blob):
            raise FormatError("vector data truncated", offset=len(blob),
                              field=field_name)
        vec = np.frombuffer(blob, dtype="<f4", count=p, offset=off).astype(np.float64)
        off = end
        return vec

    params = take_vector("params")
    vectors = {}
    for name in ("v", "m", "s"):
        if flags & _FLAG_BITS[name]:
            if off >= len(blob):
                raise FormatError("missing optimizer block", offset=off,
                                  field=f"tag {name}")
            tag = blob[off:off + 1].decode("ascii", errors="replace")
            if tag != name:
                raise FormatError(f"expected tag {name!r}, found {tag!r}",
                                  offset=off, field=f"tag {name}")
            off += 1
            vectors[name] = take_vector(name)
    if len(blob) - off != 8:
        raise FormatError(f"expected 8 trailing hash bytes, found {len(blob) - off}",
                          offset=off, field="config hash")
    config_hash = blob[off:off + 8]
    if expected_hash is not None and config_hash != expected_hash:
        raise ConsistencyError(
            "checkpoint was produced under a different configuration")
    state = ServerOptimizerState(t=round_idx, v=vectors.get("v"),
                                 m=vectors.get("m"), s=vectors.get("s"))
    return Checkpoint(round_idx, params, state, config_hash)


def _sync_to_f32(params: np.ndarray, state: ServerOptimizerState
                 ) -> tuple[np.ndarray, ServerOptimizerState]:
    """Adopt the 32-bit values that the checkpoint will carry."""
    def narrow(vec):
        return None if vec is None else vec.astype(np.float32).astype(np.float64)
    return narrow(params), ServerOptimizerState(
        t=state.t, v=narrow(state.v), m=narrow(state.m), s=narrow(state.s))


def sample_cohort(seed: int, round_idx: int, caches: Sequence[ClientCache],
                  k: int) -> list[ClientCache]:
    """K distinct clients for a round, uniform without replacement."""
    if k > len(caches):
        raise ValueError(f"cohort size {k} exceeds population {len(caches)}")
    rng = derive_rng(seed, "cohort", round_idx)
    idx = rng.choice(len(caches), size=k, replace=False)
    return [caches[i] for i in idx]


def run_round(round_idx: int, params: np.ndarray, opt_state: ServerOptimizerState,
              caches: Sequence[ClientCache], utterances: Mapping[str, Utterance],
              run: RunConfig, executor: ThreadPoolExecutor | None = None,
              ) -> tuple[np.ndarray, ServerOptimizerState, list[str]]:
    """One federated round; returns new weights, state, and the cohort ids.

    ``caches`` must be sorted by client id (the cohort draw indexes into it).
    Workers only ever see the read-only global weights and their own derived
    stream; the reduction happens here in sorted client order.
    """
    cohort = sample_cohort(run.seed, round_idx, caches, run.clients_per_round)

    def work(cache: ClientCache):
        rng = derive_rng(run.seed, "client", round_idx, cache.client_id)
        return train_client(params, cache, utterances, run.client,
                            run.schedule, round_idx, rng, run.model)

    if executor is not None:
        updates = list(executor.map(work, cohort))
    else:
        updates = [work(c) for c in cohort]
    delta = aggregate(updates)
    new_params, new_state = server_step(run.server, opt_state, params, delta)
    return new_params, new_state, [c.client_id for c in cohort]


@dataclass
class RunResult:
    rows: list[tuple]              # (round, eval_loss, frame_accuracy, clients_seen, client_lr)
    best_round: int
    best_loss: float
    checkpoint_paths: dict[int, str]
    final_params: np.ndarray


def _format_row(t: int, metrics: EvalMetrics, clients_seen: int, lr: float) -> str:
    return f"{t},{metrics.mean_loss!r},{metrics.frame_accuracy!r},{clients_seen},{lr!r}"


def run_training(run: RunConfig, train_caches: Sequence[ClientCache],
                 eval_caches: Sequence[ClientCache],
                 utterances: Mapping[str, Utterance], out_dir,
                 resume_from: str | None = None) -> RunResult:
    """Drive total_rounds rounds with periodic federated eval and checkpoints.

    Eval rows and checkpoints land at round 0, every eval_every rounds, and
    at the final round. The metrics CSV gains a trailing comment naming the
    checkpoint with the lowest eval loss. Resuming appends rows after the
    checkpoint's round and reproduces the uninterrupted run bit-exactly.
    """
    train_ids = {uid for c in train_caches for uid in c.utterance_ids}
    eval_ids = {uid for c in eval_caches for uid in c.utterance_ids}
    overlap = train_ids & eval_ids
    if overlap:
        raise ConsistencyError(
            f"train and eval partitions share {len(overlap)} utterances, "
            f"e.g. {sorted(overlap)[:3]}")
    if run.clients_per_round > len(train_caches):
        raise ValueError(f"clients_per_round {run.clients_per_round} exceeds "
                         f"population {len(train_caches)}")

    os.makedirs(out_dir, exist_ok=True)
    caches = sorted(train_caches, key=lambda c: c.client_id)
    fingerprint = run.fingerprint()

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from, expected_hash=fingerprint)
        start_round = ckpt.round_idx
        params, opt_state = ckpt.params, ckpt.opt_state
        seen: set[str] = set()
        for t in range(1, start_round + 1):  # replay cohort draws only
            seen.update(c.client_id for c in sample_cohort(
                run.seed, t, caches, run.clients_per_round))
    else:
        start_round = 0
        params = init_params(run.model, run.seed)
        opt_state = init_state(run.server, params.size)
        seen = set()

    metrics_path = os.path.join(out_dir, "metrics.csv")
    fresh_csv = resume_from is None or not os.path.exists(metrics_path)
    csv = open(metrics_path, "w" if fresh_csv else "a", encoding="utf-8")
    rows: list[tuple] = []
    ckpt_paths: dict[int, str] = {}

    executor = (ThreadPoolExecutor(max_workers=run.workers)
                if run.workers > 1 else None)

    def eval_point(t: int) -> None:
        nonlocal params, opt_state
        params, opt_state = _sync_to_f32(params, opt_state)
        path = os.path.join(out_dir, f"ckpt_{t:05d}.kwsc")
        save_checkpoint(path, Checkpoint(t, params, opt_state, fingerprint))
        ckpt_paths[t] = path
        metrics = eval_clients(params, run.model, eval_caches, utterances)
        lr = client_lr(run.schedule, t)
        csv.write(_format_row(t, metrics, len(seen), lr) + "\n")
        csv.flush()
        rows.append((t, metrics.mean_loss, metrics.frame_accuracy, len(seen), lr))

    try:
        if fresh_csv:
            csv.write(METRICS_HEADER + "\n")
        if resume_from is None:
            eval_point(0)
        for t in range(start_round + 1, run.total_rounds + 1):
            params, opt_state, cohort_ids = run_round(
                t, params, opt_state, caches, utterances, run, executor)
            seen.update(cohort_ids)
            if t % run.eval_every == 0 or t == run.total_rounds:
                eval_point(t)
        if rows:
            best_round, best_loss = min(
                ((t, loss) for t, loss, *_ in rows), key=lambda x: (x[1], x[0]))
            csv.write(f"# best_checkpoint round={best_round} eval_loss={best_loss!r} "
                      f"file=ckpt_{best_round:05d}.kwsc\n")
        else:
            best_round, best_loss = start_round, float("nan")
    finally:
        csv.close()
        if executor is not None:
            executor.shutdown()
    return RunResult(rows, best_round, best_loss, ckpt_paths, params)


def central_train(dataset: Sequence[Utterance], steps: int, lr: float,
                  augment_cfg, model_config: ModelConfig, seed: int,
                  init_weights: np.ndarray | None = None,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Sequential single-example SGD baseline (also used to train teachers).

    Consumes its stream exactly like a client epoch: one shuffle per pass,
    one augmentation draw per visited utterance.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if rng is None:
        rng = derive_rng(seed, "central")
    params = init_params(model_config, seed) if init_weights is None else init_weights.copy()
    model = BoundModel(params, model_config)
    done = 0
    while done < steps:
        order = rng.permutation(len(dataset))
        for i in order:
            if done >= steps:
                break
            u = dataset[i]
            spec = u.spec
            if augment_cfg is not None:
                spec = apply_spec_augment(spec, augment_cfg, rng)
            model.backward(np.ascontiguousarray(spec), u.targets.astype(np.float64))
            model.sgd_step(lr)
            done += 1
    return model.params
