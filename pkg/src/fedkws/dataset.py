"""Synthetic keyword-spotting corpus: generation, on-disk formats, relabeling.

Each speaker owns a band-limited ascending chirp template derived from a hash
of the speaker id. Positive utterances embed that template in Gaussian
background noise at a configurable SNR; negatives carry either bare noise or
a frequency-flipped (descending) distractor chirp. Per-frame targets are 1 on
the trailing window of the keyword, 0 elsewhere, so even positive utterances
are mostly negative frames.

On-disk layout: one little-endian binary file per utterance plus a tab
separated manifest (utterance_id, speaker_id, pos|neg, relative path).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError
from .rngs import derive_rng

UTTERANCE_MAGIC = b"KWSU"
UTTERANCE_VERSION = 1
TARGET_WINDOW_FRAMES = 10  # trailing keyword frames labeled positive
_MAX_CELLS = 1 << 28  # allocation guard when reading untrusted headers

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: str
    polarity: str
    spec: np.ndarray      # (frames, bins) float64 log-energies
    targets: np.ndarray   # (frames,) uint8 in {0, 1}

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {self.polarity!r}")
        if self.spec.ndim != 2:
            raise ValueError("spec must be 2-D (frames, bins)")
        if self.targets.shape != (self.spec.shape[0],):
            raise ValueError("targets length must equal frame count")
        has_pos = bool(np.any(self.targets))
        if has_pos != (self.polarity == POSITIVE):
            raise ValueError("polarity inconsistent with targets")


class UtteranceMeta(NamedTuple):
    """Lightweight stand-in carrying just what partitioning needs."""

    utterance_id: str
    speaker_id: str
    polarity: str


@dataclass(frozen=True)
class SyntheticConfig:
    n_speakers: int = 20
    utterances_per_speaker: int = 50
    positive_fraction: float = 0.5
    keyword_len_frames: int = 60
    utterance_len_frames: int = 200
    n_bins: int = 16
    snr_db: float = 10.0
    seed: int = 1
    speaker_prefix: str = "s"

    def __post_init__(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise ConfigError("n_speakers and utterances_per_speaker must be >= 1")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(
                f"positive_fraction must be in [0, 1], got {self.positive_fraction}")
        if not 1 <= self.keyword_len_frames < self.utterance_len_frames:
            raise ConfigError("need 1 <= keyword_len_frames < utterance_len_frames")
        if self.n_bins < 4:
            raise ConfigError("n_bins must be >= 4 for the chirp templates")


def _speaker_voice(cfg: SyntheticConfig, speaker_id: str):
    """Deterministic per-speaker chirp template (unit RMS) and timbre offset."""
    rng = derive_rng(cfg.seed, "speaker", speaker_id)
    b = cfg.n_bins
    lo = int(rng.integers(1, b // 2))            # all speakers chirp upward
    hi = int(rng.integers(b // 2 + 1, b - 1 + 1))
    sigma = float(rng.uniform(0.8, 1.6))
    centers = np.linspace(lo, hi, cfg.keyword_len_frames)
    bins = np.arange(b, dtype=np.float64)
    template = np.exp(-((bins[None, :] - centers[:, None]) ** 2) / (2.0 * sigma ** 2))
    template /= np.sqrt(np.mean(template ** 2))
    timbre = rng.normal(0.0, 0.2, size=b)
    return template, timbre


def _positive_count(cfg: SyntheticConfig) -> int:
    return int(round(cfg.positive_fraction * cfg.utterances_per_speaker))


def generate_metadata(cfg: SyntheticConfig) -> list[UtteranceMeta]:
    """Ids/speakers/polarities of the corpus without synthesizing audio.

    Matches generate_synthetic_dataset exactly; polarity assignment is
    deterministic (the first round(fraction * per_speaker) utterances of each
    speaker are positive), so no random draws are needed.
    """
    n_pos = _positive_count(cfg)
    metas = []
    for i in range(cfg.n_speakers):
        sid = f"{cfg.speaker_prefix}{i:04d}"
        for u in range(cfg.utterances_per_speaker):
            metas.append(UtteranceMeta(
                f"{sid}_u{u:04d}", sid, POSITIVE if u < n_pos else NEGATIVE))
    return metas


def _synthesize(cfg: SyntheticConfig, sid: str, uidx: int, positive: bool,
                template: np.ndarray, timbre: np.ndarray) -> Utterance:
    rng = derive_rng(cfg.seed, "utt", sid, uidx)
    frames, kw = cfg.utterance_len_frames, cfg.keyword_len_frames
    amp = 10.0 ** (cfg.snr_db / 20.0)
    spec = rng.normal(0.0, 1.0, size=(frames, cfg.n_bins))
    targets = np.zeros(frames, dtype=np.uint8)
    if positive:
        offset = int(rng.integers(0, frames - kw + 1))
        spec[offset:offset + kw] += amp * template
        end = offset + kw - 1
        targets[max(0, end - TARGET_WINDOW_FRAMES + 1):end + 1] = 1
    elif rng.random() < 0.5:
        # distractor: the same chirp mirrored in frequency (descending)
        offset = int(rng.integers(0, frames - kw + 1))
        spec[offset:offset + kw] += amp * template[:, ::-1]
    spec += timbre
    return Utterance(f"{sid}_u{uidx:04d}", sid,
                     POSITIVE if positive else NEGATIVE, spec, targets)


def generate_synthetic_dataset(cfg: SyntheticConfig) -> list[Utterance]:
    """Deterministic synthetic corpus; equal seeds give bit-identical output."""
    n_pos = _positive_count(cfg)
    utts = []
    for i in range(cfg.n_speakers):
        sid = f"{cfg.speaker_prefix}{i:04d}"
        template, timbre = _speaker_voice(cfg, sid)
        for u in range(cfg.utterances_per_speaker):
            utts.append(_synthesize(cfg, sid, u, u < n_pos, template, timbre))
    return utts


# --- binary utterance format -------------------------------------------------

def write_utterance(u: Utterance, sink) -> None:
    """Serialize to the KWSU binary format (features narrowed to 32-bit)."""
    frames, bins = u.spec.shape
    payload = (UTTERANCE_MAGIC
               + struct.pack("<HHII", UTTERANCE_VERSION, 0, frames, bins)
               + np.ascontiguousarray(u.spec, dtype="<f4").tobytes()
               + np.ascontiguousarray(u.targets, dtype=np.uint8).tobytes())
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        with open(sink, "wb") as fh:
            fh.write(payload)


def read_utterance(source, *, utterance_id: str = "",
                   speaker_id: str = "") -> Utterance:
    """Parse a KWSU file; ids live in the manifest and are passed through.

    Polarity is recomputed from the targets, which the format guarantees to
    be equivalent to the writer's polarity.
    """
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"truncated header: {len(blob)} bytes",
                          offset=len(blob), field="header")
    if blob[:4] != UTTERANCE_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", offset=0, field="magic")
    version, reserved, frames, bins = struct.unpack("<HHII", blob[4:16])
    if version != UTTERANCE_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, field="version")
    if frames < 1 or bins < 1 or frames * bins > _MAX_CELLS:
        raise FormatError(f"implausible dimensions {frames}x{bins}",
                          offset=8, field="dimensions")
    feat_bytes = frames * bins * 4
    expected = 16 + feat_bytes + frames
    if len(blob) != expected:
        raise FormatError(
            f"size mismatch: expected {expected} bytes, got {len(blob)}",
            offset=min(len(blob), expected), field="payload")
    spec = np.frombuffer(blob, dtype="<f4", count=frames * bins,
                         offset=16).reshape(frames, bins).astype(np.float64)
    targets = np.frombuffer(blob, dtype=np.uint8, count=frames,
                            offset=16 + feat_bytes).copy()
    if np.any(targets > 1):
        raise FormatError("targets must be 0/1 bytes",
                          offset=16 + feat_bytes, field="targets")
    polarity = POSITIVE if np.any(targets) else NEGATIVE
    return Utterance(utterance_id, speaker_id, polarity, spec, targets)


# --- manifest ----------------------------------------------------------------

_POLARITY_CODE = {POSITIVE: "pos", NEGATIVE: "neg"}
_POLARITY_FROM = {"pos": POSITIVE, "neg": NEGATIVE}


class ManifestRow(NamedTuple):
    utterance_id: str
    speaker_id: str
    polarity: str
    path: str


def write_manifest(rows: Iterable[ManifestRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(f"{r.utterance_id}\t{r.speaker_id}\t"
                     f"{_POLARITY_CODE[r.polarity]}\t{r.path}\n")


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ConfigError(
                    f"{path}: line {lineno}: expected 4 tab-separated fields, "
                    f"got {len(parts)}")
            uid, sid, code, rel = parts
            if code not in _POLARITY_FROM:
                raise ConfigError(
                    f"{path}: line {lineno}: polarity must be pos or neg, got {code!r}")
            if uid in seen:
                raise ConsistencyError(f"{path}: line {lineno}: duplicate id {uid}")
            seen.add(uid)
            rows.append(ManifestRow(uid, sid, _POLARITY_FROM[code], rel))
    return rows


def save_corpus(utts: Iterable[Utterance], out_dir, subdir: str = "utts") -> str:
    """Write utterance files plus manifest.tsv; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, subdir), exist_ok=True)
    rows = []
    for u in utts:
        rel = os.path.join(subdir, f"{u.utterance_id}.kwsu")
        write_utterance(u, os.path.join(out_dir, rel))
        rows.append(ManifestRow(u.utterance_id, u.speaker_id, u.polarity, rel))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(rows, manifest_path)
    return manifest_path


def load_corpus(manifest_path) -> dict[str, Utterance]:
    """Read every manifest row into memory, keyed by utterance id."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    corpus = {}
    for row in read_manifest(manifest_path):
        u = read_utterance(os.path.join(base, row.path),
                           utterance_id=row.utterance_id,
                           speaker_id=row.speaker_id)
        if u.polarity != row.polarity:
            raise ConsistencyError(
                f"{row.utterance_id}: manifest says {row.polarity}, "
                f"file targets say {u.polarity}")
        corpus[row.utterance_id] = u
    return corpus


# --- teacher relabeling -------------------------------------------------------

def relabel_with_teacher(utts: Iterable[Utterance], teacher_params: np.ndarray,
                         teacher_config, threshold: float = 0.5) -> list[Utterance]:
    """Replace per-frame targets with thresholded teacher scores.

    Polarity is recomputed from the new targets. The input is not modified;
    spectrogram arrays are shared between old and new utterances (treated as
    read-only throughout).
    """
    from .model.network import BoundModel

    teacher = BoundModel(teacher_params, teacher_config)
    relabeled = []
    for u in utts:
        scores = teacher.forward(np.ascontiguousarray(u.spec))
        targets = (scores >= threshold).astype(np.uint8)
        polarity = POSITIVE if np.any(targets) else NEGATIVE
        relabeled.append(replace(u, polarity=polarity, targets=targets))
    return relabeled
