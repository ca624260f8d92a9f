"""Plain key=value run configuration.

Dotted keys group settings by module (data.*, model.*, partition.*,
client.*, specaugment.*, server.*, run.*, eval.*, ablate.*). Unknown keys
are rejected; every key has a default; several accept the literal ``auto``
meaning "derive from context" (e.g. server.eta_s picks the variant's tuned
default). The parsed file is echoed into the run directory for provenance.
"""

from __future__ import annotations

from typing import Callable

from .augment import SpecAugmentConfig
from .client import ClientConfig, ClientLrSchedule
from .dataset import SyntheticConfig
from .errors import ConfigError
from .model.config import ModelConfig
from .partition import PartitionConfig
from .server import ServerOptimizerConfig


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_auto(inner: Callable):
    def parse(text: str):
        return None if text.lower() == "auto" else inner(text)
    return parse


def _parse_layers(text: str) -> tuple:
    """Encoder spec '32x8:16,...' (nodes x memory : bottleneck) or decoder
    spec '16x16,...' (nodes x memory)."""
    layers = []
    for item in text.split(","):
        item = item.strip()
        if ":" in item:
            nt, bn = item.split(":")
            n, t = nt.split("x")
            layers.append((int(n), int(t), int(bn)))
        else:
            n, t = item.split("x")
            layers.append((int(n), int(t)))
    return tuple(layers)


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):  # layer lists
        return ",".join(
            f"{l[0]}x{l[1]}:{l[2]}" if len(l) == 3 else f"{l[0]}x{l[1]}"
            for l in value)
    return str(value)


# key -> (default value, parser)
SCHEMA: dict[str, tuple] = {
    # synthetic corpus generation
    "data.n_speakers": (20, int),
    "data.utterances_per_speaker": (50, int),
    "data.positive_fraction": (0.5, float),
    "data.keyword_len_frames": (60, int),
    "data.utterance_len_frames": (200, int),
    "data.snr_db": (10.0, float),
    "data.seed": (1, int),
    "data.speaker_prefix": ("s", str),
    "data.eval_speakers": (8, int),
    "data.eval_utterances_per_speaker": (50, int),
    "data.eval_snr_db": (None, _parse_auto(float)),  # auto: same as snr_db
    "data.eval_speaker_prefix": ("ev", str),
    # model architecture
    "model.input_bins": (16, int),
    "model.encoder": (ModelConfig().encoder, _parse_layers),
    "model.decoder": (ModelConfig().decoder, _parse_layers),
    # client partitioning
    "partition.mode": ("non_iid", str),
    "partition.iid_cluster_size": (50, int),
    "partition.target_median_n": (6.5, float),
    "partition.seed": (None, _parse_auto(int)),  # auto: run.seed
    # local training
    "client.epochs": (10, int),
    "client.clip_norm": (20.0, float),
    "client.augment": (True, _parse_bool),
    "client.lr_schedule": ("exponential", str),
    "client.lr0": (0.02, float),
    "client.lr_gamma": (0.9, float),
    "client.lr_decay_every": (1000, int),
    # spectrogram augmentation
    "specaugment.n_time_masks": (2, int),
    "specaugment.max_time_frames": (60, int),
    "specaugment.n_freq_masks": (2, int),
    "specaugment.max_freq_bins": (15, int),
    "specaugment.noise_mean": (None, _parse_auto(float)),  # auto: input mean
    "specaugment.noise_std": (None, _parse_auto(float)),   # auto: input std
    # server optimizer
    "server.variant": ("yogi", str),
    "server.nesterov": (False, _parse_bool),
    "server.eta_s": (None, _parse_auto(float)),    # auto: variant default
    "server.gamma": (0.99, float),
    "server.beta1": (0.9, float),
    "server.beta2": (0.999, float),
    "server.epsilon": (None, _parse_auto(float)),  # auto: variant default
    "server.v0": (None, _parse_auto(float)),       # auto: variant default
    # round loop
    "run.clients_per_round": (20, int),
    "run.total_rounds": (100, int),
    "run.eval_every": (10, int),
    "run.seed": (12345, int),
    "run.workers": (1, int),
    "run.labeling": ("supervised", str),
    "run.teacher_checkpoint": ("", str),
    "run.teacher_threshold": (0.5, float),
    "run.train_partition": ("train_partition.tsv", str),
    "run.eval_partition": ("eval_partition.tsv", str),
    # offline operating point
    "eval.target_fa": (0.002, float),
    # ablation driver
    "ablate.teacher_steps": (3000, int),
    "ablate.central_steps": (20000, int),
}


class Config:
    """Validated key-value store over SCHEMA."""

    def __init__(self, values: dict | None = None):
        self.values = dict(values or {})
        for key in self.values:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key}")

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        return self.values.get(key, SCHEMA[key][0])

    def override(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        self.values[key] = value

    # --- module config builders ---

    def synthetic_config(self, split: str = "train") -> SyntheticConfig:
        if split == "train":
            return SyntheticConfig(
                n_speakers=self["data.n_speakers"],
                utterances_per_speaker=self["data.utterances_per_speaker"],
                positive_fraction=self["data.positive_fraction"],
                keyword_len_frames=self["data.keyword_len_frames"],
                utterance_len_frames=self["data.utterance_len_frames"],
                n_bins=self["model.input_bins"],
                snr_db=self["data.snr_db"],
                seed=self["data.seed"],
                speaker_prefix=self["data.speaker_prefix"])
        snr = self["data.eval_snr_db"]
        return SyntheticConfig(
            n_speakers=self["data.eval_speakers"],
            utterances_per_speaker=self["data.eval_utterances_per_speaker"],
            positive_fraction=self["data.positive_fraction"],
            keyword_len_frames=self["data.keyword_len_frames"],
            utterance_len_frames=self["data.utterance_len_frames"],
            n_bins=self["model.input_bins"],
            snr_db=self["data.snr_db"] if snr is None else snr,
            seed=self["data.seed"],
            speaker_prefix=self["data.eval_speaker_prefix"])

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(input_bins=self["model.input_bins"],
                               encoder=self["model.encoder"],
                               decoder=self["model.decoder"])
        except ValueError as exc:
            raise ConfigError(f"model.*: {exc}") from exc

    def partition_config(self, role: str = "train") -> PartitionConfig:
        seed = self["partition.seed"]
        if seed is None:
            seed = self["run.seed"]
        mode = self["partition.mode"] if role == "train" else "iid"
        return PartitionConfig(mode=mode,
                               iid_cluster_size=self["partition.iid_cluster_size"],
                               target_median_n=self["partition.target_median_n"],
                               seed=seed if role == "train" else seed + 1)

    def spec_augment_config(self) -> SpecAugmentConfig:
        return SpecAugmentConfig(
            n_time_masks=self["specaugment.n_time_masks"],
            max_time_frames=self["specaugment.max_time_frames"],
            n_freq_masks=self["specaugment.n_freq_masks"],
            max_freq_bins=self["specaugment.max_freq_bins"],
            noise_mean=self["specaugment.noise_mean"],
            noise_std=self["specaugment.noise_std"])

    def client_config(self) -> ClientConfig:
        try:
            return ClientConfig(
                epochs=self["client.epochs"],
                clip_norm=self["client.clip_norm"],
                augment=self.spec_augment_config() if self["client.augment"] else None)
        except ValueError as exc:
            raise ConfigError(f"client.*: {exc}") from exc

    def schedule(self) -> ClientLrSchedule:
        try:
            return ClientLrSchedule(kind=self["client.lr_schedule"],
                                    eta0=self["client.lr0"],
                                    gamma=self["client.lr_gamma"],
                                    decay_every=self["client.lr_decay_every"])
        except ValueError as exc:
            raise ConfigError(f"client.lr_*: {exc}") from exc

    def server_config(self) -> ServerOptimizerConfig:
        try:
            return ServerOptimizerConfig(variant=self["server.variant"],
                                         nesterov=self["server.nesterov"],
                                         eta_s=self["server.eta_s"],
                                         gamma=self["server.gamma"],
                                         beta1=self["server.beta1"],
                                         beta2=self["server.beta2"],
                                         epsilon=self["server.epsilon"],
                                         v0=self["server.v0"])
        except ValueError as exc:
            raise ConfigError(f"server.*: {exc}") from exc

    def effective_text(self) -> str:
        lines = [f"{key} = {_fmt(self[key])}" for key in sorted(SCHEMA)]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}: line {lineno}: unknown config key: {key}")
        if key in values:
            raise ConfigError(f"{source}: line {lineno}: duplicate key: {key}")
        parser = SCHEMA[key][1]
        try:
            values[key] = parser(value)
        except (ValueError, IndexError) as exc:
            raise ConfigError(
                f"{source}: line {lineno}: bad value for {key}: {value!r} ({exc})"
            ) from exc
    return Config(values)


def load_config(path: str | None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=path)
