"""Federated eval metrics plus offline FA/FR with threshold tuning.

Loss and frame accuracy are computed per client and re-aggregated on the
server weighted by example counts. The offline operating point uses the max
frame score as the per-utterance trigger statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import POSITIVE, Utterance
from .model.config import ModelConfig
from .model.network import BoundModel, frame_bce_loss
from .partition import ClientCache

DEFAULT_TARGET_FA = 0.002  # FA = 0.2%


@dataclass(frozen=True)
class EvalMetrics:
    mean_loss: float
    frame_accuracy: float
    n_examples: int


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    fa_rate: float
    fr_rate: float


def _utterance_metrics(model: BoundModel, u: Utterance) -> tuple[float, float]:
    scores = model.forward(np.ascontiguousarray(u.spec))
    y = u.targets.astype(np.float64)
    loss = frame_bce_loss(scores, y)
    acc = float(np.mean((scores >= 0.5) == (u.targets == 1)))
    return loss, acc


def eval_clients(params: np.ndarray, config: ModelConfig,
                 caches: Sequence[ClientCache],
                 utterances: Mapping[str, Utterance]) -> EvalMetrics:
    """Per-client means, then a server-side average weighted by n_k.

    Clients are visited in sorted id order and each utterance contributes its
    frame-mean loss/accuracy, so splitting or merging clients cannot change
    the aggregate.
    """
    if not caches:
        raise ValueError("need at least one eval cache")
    model = BoundModel(params, config)
    total_n = 0
    loss_acc = 0.0
    acc_acc = 0.0
    for cache in sorted(caches, key=lambda c: c.client_id):
        losses = []
        accs = []
        for uid in cache.utterance_ids:
            loss, acc = _utterance_metrics(model, utterances[uid])
            losses.append(loss)
            accs.append(acc)
        loss_acc += cache.n_k * float(np.mean(losses))
        acc_acc += cache.n_k * float(np.mean(accs))
        total_n += cache.n_k
    return EvalMetrics(loss_acc / total_n, acc_acc / total_n, total_n)


def utterance_score(params: np.ndarray, config: ModelConfig,
                    u: Utterance) -> float:
    """Trigger statistic: the max per-frame keyword probability."""
    model = BoundModel(params, config)
    return float(np.max(model.forward(np.ascontiguousarray(u.spec))))


def score_utterances(params: np.ndarray, config: ModelConfig,
                     utterances: Iterable[Utterance]) -> list[tuple[str, str, float]]:
    """(utterance_id, polarity, max score) for each utterance, in input order."""
    model = BoundModel(params, config)
    out = []
    for u in utterances:
        score = float(np.max(model.forward(np.ascontiguousarray(u.spec))))
        out.append((u.utterance_id, u.polarity, score))
    return out


def compute_fa_fr(pos_scores: Sequence[float], neg_scores: Sequence[float],
                  threshold: float) -> OperatingPoint:
    """FA: fraction of negatives at or above the threshold; FR: fraction of
    positives below it."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both positive and negative scores")
    fa = float(np.mean(neg >= threshold))
    fr = float(np.mean(pos < threshold))
    return OperatingPoint(threshold, fa, fr)


def tune_threshold(neg_scores: Sequence[float], target_fa: float = DEFAULT_TARGET_FA) -> float:
    """Smallest threshold whose FA on the tuning negatives is within budget.

    Candidates are the distinct negative scores plus a sentinel above the
    max (FA = 0 there, so a solution always exists); picking the smallest
    qualifying candidate maximizes sensitivity at the FA budget.
    """
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("need at least one negative score")
    if not 0.0 < target_fa < 1.0:
        raise ValueError("target_fa must be in (0, 1)")
    candidates = np.append(np.unique(neg), np.max(neg) + 1.0)
    for theta in candidates:
        if np.mean(neg >= theta) <= target_fa:
            return float(theta)
    raise AssertionError("sentinel candidate cannot fail")


# --- score dump ---------------------------------------------------------------

_POL_CODE = {POSITIVE: "pos", "negative": "neg"}


def write_score_dump(rows: Iterable[tuple[str, str, float]], path) -> None:
    """Rows of utterance_id, polarity, score, tab-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid, polarity, score in rows:
            fh.write(f"{uid}\t{_POL_CODE.get(polarity, polarity)}\t{score!r}\n")


def read_score_dump(path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            uid, code, score = line.split("\t")
            rows.append((uid, code, float(score)))
    return rows
