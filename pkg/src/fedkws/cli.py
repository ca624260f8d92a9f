"""Command-line driver: gen-data, partition, train, eval, ablate.

Exit codes: 0 success, 2 config/validation problems, 3 data-consistency
problems, 4 corrupt file formats.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys

import numpy as np

from . import evaluation
from .configfile import Config, load_config
from .dataset import (POSITIVE, generate_synthetic_dataset, load_corpus,
                      read_manifest, read_utterance, relabel_with_teacher,
                      save_corpus)
from .errors import ConfigError, ConsistencyError, FormatError
from .model.config import param_count
from .orchestrator import (Checkpoint, RunConfig, central_train,
                           load_checkpoint, run_training, save_checkpoint)
from .partition import (check_partition, partition, read_partition,
                        write_partition)
from .server import ServerOptimizerConfig, init_state

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSISTENCY = 3
EXIT_FORMAT = 4


def _echo_config(cfg: Config, config_path: str | None, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    if config_path is not None:
        shutil.copyfile(config_path, os.path.join(out_dir, "config.in.txt"))
    with open(os.path.join(out_dir, "config.effective.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(cfg.effective_text())


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.override("data.seed", args.seed)
    out = args.out
    _echo_config(cfg, args.config, out)
    utts = generate_synthetic_dataset(cfg.synthetic_config("train"))
    utts += generate_synthetic_dataset(cfg.synthetic_config("eval"))
    manifest = save_corpus(utts, out)
    n_pos = sum(1 for u in utts if u.polarity == POSITIVE)
    print(f"wrote {len(utts)} utterances ({n_pos} positive, "
          f"{n_pos / len(utts):.3f} fraction) to {manifest}")
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.override("partition.seed", args.seed)
    rows = read_manifest(args.manifest)
    prefix = (cfg["data.speaker_prefix"] if args.role == "train"
              else cfg["data.eval_speaker_prefix"])
    subset = [r for r in rows if r.speaker_id.startswith(prefix)]
    if not subset:
        raise ConfigError(f"no manifest rows with speaker prefix {prefix!r}")
    pcfg = cfg.partition_config(args.role)
    caches = partition(subset, pcfg)
    write_partition(caches, args.out)
    sizes = sorted(c.n_k for c in caches)
    print(f"{len(caches)} clients, n_k median {sizes[len(sizes) // 2]}, "
          f"max {sizes[-1]}, total {sum(sizes)}")
    if pcfg.mode == "non_iid":
        check_partition(caches, subset, require_purity=True)
        print("label-pure: true, speaker-pure: true")
    return EXIT_OK


def _load_run_inputs(cfg: Config, data_dir: str):
    manifest = os.path.join(data_dir, "manifest.tsv")
    corpus = load_corpus(manifest)
    train_caches = read_partition(os.path.join(data_dir, cfg["run.train_partition"]))
    eval_caches = read_partition(os.path.join(data_dir, cfg["run.eval_partition"]))
    missing = [uid for c in train_caches + eval_caches
               for uid in c.utterance_ids if uid not in corpus]
    if missing:
        raise ConsistencyError(
            f"{len(missing)} partitioned utterances missing from the manifest, "
            f"e.g. {missing[:3]}")
    return corpus, train_caches, eval_caches


def _apply_teacher_labels(cfg: Config, corpus, train_caches):
    """Relabel the train-side utterances with a teacher checkpoint."""
    path = cfg["run.teacher_checkpoint"]
    if not path:
        raise ConfigError("run.labeling=teacher needs run.teacher_checkpoint")
    ckpt = load_checkpoint(path)
    model_cfg = cfg.model_config()
    train_ids = {uid for c in train_caches for uid in c.utterance_ids}
    train_utts = [corpus[uid] for uid in sorted(train_ids)]
    relabeled = relabel_with_teacher(train_utts, ckpt.params, model_cfg,
                                     cfg["run.teacher_threshold"])
    updated = dict(corpus)
    for u in relabeled:
        updated[u.utterance_id] = u
    return updated


def _run_config(cfg: Config, workers: int | None = None) -> RunConfig:
    return RunConfig(
        clients_per_round=cfg["run.clients_per_round"],
        total_rounds=cfg["run.total_rounds"],
        eval_every=cfg["run.eval_every"],
        seed=cfg["run.seed"],
        workers=workers if workers is not None else cfg["run.workers"],
        model=cfg.model_config(),
        server=cfg.server_config(),
        client=cfg.client_config(),
        schedule=cfg.schedule())


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.override("run.seed", args.seed)
    _echo_config(cfg, args.config, args.out)
    corpus, train_caches, eval_caches = _load_run_inputs(cfg, args.data)
    labeling = cfg["run.labeling"]
    if labeling == "teacher":
        corpus = _apply_teacher_labels(cfg, corpus, train_caches)
    elif labeling != "supervised":
        raise ConfigError(f"run.labeling must be supervised or teacher, "
                          f"got {labeling!r}")
    try:
        run = _run_config(cfg, args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = run_training(run, train_caches, eval_caches, corpus, args.out,
                          resume_from=args.resume)
    print(f"finished {run.total_rounds} rounds; best checkpoint at round "
          f"{result.best_round} (eval loss {result.best_loss:.6f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    target_fa = args.target_fa if args.target_fa is not None else cfg["eval.target_fa"]
    ckpt = load_checkpoint(args.checkpoint)
    model_cfg = cfg.model_config()
    if ckpt.params.size != param_count(model_cfg):
        raise ConsistencyError(
            f"checkpoint has {ckpt.params.size} params; model.* implies a "
            f"different architecture")
    rows = read_manifest(args.manifest)
    if args.role != "all":
        prefix = (cfg["data.speaker_prefix"] if args.role == "train"
                  else cfg["data.eval_speaker_prefix"])
        rows = [r for r in rows if r.speaker_id.startswith(prefix)]
    if not rows:
        raise ConfigError("no utterances selected for evaluation")
    base = os.path.dirname(os.path.abspath(args.manifest))
    utts = [read_utterance(os.path.join(base, r.path), utterance_id=r.utterance_id,
                           speaker_id=r.speaker_id) for r in rows]
    scored = evaluation.score_utterances(ckpt.params, model_cfg, utts)
    pos = [s for _, pol, s in scored if pol == POSITIVE]
    neg = [s for _, pol, s in scored if pol != POSITIVE]
    if not pos or not neg:
        raise ConsistencyError("need both positive and negative utterances")
    theta = evaluation.tune_threshold(neg, target_fa)
    point = evaluation.compute_fa_fr(pos, neg, theta)
    os.makedirs(args.out, exist_ok=True)
    dump = os.path.join(args.out, "scores.tsv")
    evaluation.write_score_dump(scored, dump)
    print(f"threshold {point.threshold:.6f}  FA {point.fa_rate:.6f}  "
          f"FR {point.fr_rate:.6f}  (target FA {target_fa})  scores: {dump}")
    return EXIT_OK


def _ablation_variants(cfg: Config) -> list[tuple[str, Config]]:
    def derived(**overrides) -> Config:
        child = Config(dict(cfg.values))
        for key, value in overrides.items():
            child.override(key, value)
        return child

    return [
        ("base", derived()),
        ("no_specaugment", derived(**{"client.augment": False})),
        ("one_client_epoch", derived(**{"client.epochs": 1})),
        ("constant_client_lr", derived(**{"client.lr_schedule": "constant"})),
        ("no_clipping", derived(**{"client.clip_norm": 1e12})),
        ("sgd_server", derived(**{"server.variant": "sgd", "server.eta_s": None,
                                  "server.epsilon": None, "server.v0": None})),
        ("teacher_labels", derived()),  # relabeled below
    ]


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.override("run.seed", args.seed)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.config, args.out)
    corpus, train_caches, eval_caches = _load_run_inputs(cfg, args.data)
    model_cfg = cfg.model_config()
    train_ids = sorted({uid for c in train_caches for uid in c.utterance_ids})
    train_utts = [corpus[uid] for uid in train_ids]
    eval_utts = [corpus[uid] for uid in sorted(
        {uid for c in eval_caches for uid in c.utterance_ids})]
    target_fa = cfg["eval.target_fa"]

    def operating_point(params) -> tuple[float, float]:
        scored = evaluation.score_utterances(params, model_cfg, eval_utts)
        pos = [s for _, pol, s in scored if pol == POSITIVE]
        neg = [s for _, pol, s in scored if pol != POSITIVE]
        theta = evaluation.tune_threshold(neg, target_fa)
        point = evaluation.compute_fa_fr(pos, neg, theta)
        return point.fa_rate, point.fr_rate

    rows = []

    def record(name: str, params, metrics):
        fa, fr = operating_point(params)
        rows.append(f"{name},{metrics.mean_loss!r},{metrics.frame_accuracy!r},"
                    f"{fa!r},{fr!r}")
        print(f"{name}: loss {metrics.mean_loss:.5f} acc "
              f"{metrics.frame_accuracy:.5f} fa {fa:.5f} fr {fr:.5f}")

    for name, variant_cfg in _ablation_variants(cfg):
        local_corpus = corpus
        if name == "teacher_labels":
            teacher = central_train(
                train_utts, cfg["ablate.teacher_steps"], cfg["client.lr0"],
                cfg.spec_augment_config() if cfg["client.augment"] else None,
                model_cfg, seed=cfg["run.seed"] + 7)
            relabeled = relabel_with_teacher(train_utts, teacher, model_cfg,
                                             cfg["run.teacher_threshold"])
            local_corpus = dict(corpus)
            for u in relabeled:
                local_corpus[u.utterance_id] = u
        try:
            run = _run_config(variant_cfg, args.workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        result = run_training(run, train_caches, eval_caches, local_corpus,
                              os.path.join(args.out, name))
        metrics = evaluation.eval_clients(result.final_params, model_cfg,
                                          eval_caches, corpus)
        record(name, result.final_params, metrics)

    central = central_train(
        train_utts, cfg["ablate.central_steps"], cfg["client.lr0"],
        cfg.spec_augment_config() if cfg["client.augment"] else None,
        model_cfg, seed=cfg["run.seed"])
    metrics = evaluation.eval_clients(central, model_cfg, eval_caches, corpus)
    record("central", central, metrics)
    ckpt_path = os.path.join(args.out, "central.kwsc")
    save_checkpoint(ckpt_path, Checkpoint(
        0, central.astype(np.float32).astype(np.float64),
        init_state(ServerOptimizerConfig(variant="sgd"), central.size),
        b"\x00" * 8))

    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("run,eval_loss,frame_accuracy,fa,fr\n")
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedkws",
        description="Deterministic federated keyword-spotting simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's seed")
        p.add_argument("--workers", type=int, default=None,
                       help="client training worker cap")
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("partition", help="group a manifest into client caches")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--role", choices=("train", "eval"), default="train",
                   help="eval role forces the IID mode")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run federated training")
    common(p)
    p.add_argument("--data", required=True, help="dir with manifest and partitions")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="offline FA/FR at a tuned threshold")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--target-fa", type=float, default=None)
    p.add_argument("--role", choices=("all", "train", "eval"), default="all")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="baseline plus one run per removed factor")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        print(f"consistency error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:  # usage errors from module contracts
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
