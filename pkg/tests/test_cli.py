import hashlib
import os

import numpy as np
import pytest

from fedkws.cli import main
from fedkws.dataset import read_manifest
from fedkws.evaluation import read_score_dump

TINY_CFG = """
data.n_speakers = 4
data.utterances_per_speaker = 12
data.utterance_len_frames = 40
data.keyword_len_frames = 16
data.eval_speakers = 2
data.eval_utterances_per_speaker = 10
model.encoder = 4x3:3
model.decoder = 3x4
partition.iid_cluster_size = 5
client.epochs = 1
client.clip_norm = 20
specaugment.max_time_frames = 10
specaugment.max_freq_bins = 3
run.clients_per_round = 3
run.total_rounds = 4
run.eval_every = 2
run.seed = 5
ablate.teacher_steps = 60
ablate.central_steps = 80
"""


def sha_tree(root):
    acc = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            p = os.path.join(dirpath, f)
            acc[os.path.relpath(p, root)] = hashlib.sha256(
                open(p, "rb").read()).hexdigest()
    return acc


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    data = root / "data"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["partition", "--config", str(cfg), "--manifest",
                 str(data / "manifest.tsv"), "--out",
                 str(data / "train_partition.tsv"), "--role", "train"]) == 0
    assert main(["partition", "--config", str(cfg), "--manifest",
                 str(data / "manifest.tsv"), "--out",
                 str(data / "eval_partition.tsv"), "--role", "eval"]) == 0
    return root, cfg, data


def test_gen_data_outputs(workspace):
    root, cfg, data = workspace
    rows = read_manifest(data / "manifest.tsv")
    assert len(rows) == 4 * 12 + 2 * 10
    speakers = {r.speaker_id for r in rows}
    assert any(s.startswith("ev") for s in speakers)
    assert (data / "config.effective.txt").exists()
    assert (data / "config.in.txt").exists()


def test_gen_data_deterministic(workspace, tmp_path):
    root, cfg, data = workspace
    other = tmp_path / "data2"
    assert main(["gen-data", "--config", str(cfg), "--out", str(other)]) == 0
    a = sha_tree(data)
    b = sha_tree(other)
    shared = {k: v for k, v in a.items()
              if k.startswith("utts") or k == "manifest.tsv"}
    assert shared == {k: v for k, v in b.items() if k in shared}


def test_invalid_config_value_exits_2(workspace, tmp_path, capsys):
    root, cfg, data = workspace
    bad = tmp_path / "bad.cfg"
    bad.write_text(TINY_CFG + "data.positive_fraction = 1.5\n")
    code = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")])
    assert code == 2
    assert "positive_fraction" in capsys.readouterr().err


def test_unknown_key_exits_2(workspace, tmp_path, capsys):
    bad = tmp_path / "bad2.cfg"
    bad.write_text("run.gremlins = 4\n")
    code = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d2")])
    assert code == 2
    assert "run.gremlins" in capsys.readouterr().err


def test_partition_summary_lines(workspace, capsys, tmp_path):
    root, cfg, data = workspace
    assert main(["partition", "--config", str(cfg), "--manifest",
                 str(data / "manifest.tsv"), "--out",
                 str(tmp_path / "p.tsv"), "--role", "train"]) == 0
    out = capsys.readouterr().out
    assert "clients" in out
    assert "label-pure: true, speaker-pure: true" in out


def test_train_eval_resume_flow(workspace, tmp_path, capsys):
    root, cfg, data = workspace
    run1 = tmp_path / "run1"
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(run1)]) == 0
    lines = (run1 / "metrics.csv").read_text().splitlines()
    assert lines[0] == "round,eval_loss,frame_accuracy,clients_seen,client_lr"
    data_rows = [l for l in lines if not l.startswith(("round", "#"))]
    assert [int(r.split(",")[0]) for r in data_rows] == [0, 2, 4]
    assert lines[-1].startswith("# best_checkpoint")

    # resume appends rows after the checkpoint round
    resumed = tmp_path / "run1b"
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(resumed), "--resume",
                 str(run1 / "ckpt_00002.kwsc")]) == 0
    res_rows = [l for l in (resumed / "metrics.csv").read_text().splitlines()
                if not l.startswith(("round", "#"))]
    assert res_rows == [r for r in data_rows if int(r.split(",")[0]) > 2]

    # eval on the final checkpoint; dump round-trips exactly
    evaldir = tmp_path / "eval"
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--checkpoint",
                 str(run1 / "ckpt_00004.kwsc"), "--manifest",
                 str(data / "manifest.tsv"), "--role", "eval",
                 "--out", str(evaldir)]) == 0
    printed = capsys.readouterr().out
    assert "threshold" in printed and "FA" in printed and "FR" in printed
    dumped = read_score_dump(evaldir / "scores.tsv")
    assert len(dumped) == 2 * 10

    from fedkws.configfile import load_config
    from fedkws.dataset import load_corpus
    from fedkws.evaluation import score_utterances
    from fedkws.orchestrator import load_checkpoint
    cfg_obj = load_config(str(cfg))
    ckpt = load_checkpoint(run1 / "ckpt_00004.kwsc")
    corpus = load_corpus(data / "manifest.tsv")
    ev_utts = [u for u in corpus.values() if u.speaker_id.startswith("ev")]
    recomputed = dict()
    for uid, pol, score in score_utterances(ckpt.params, cfg_obj.model_config(),
                                            ev_utts):
        recomputed[uid] = score
    for uid, _, score in dumped:
        assert score == recomputed[uid]


def test_train_idempotent(workspace, tmp_path):
    root, cfg, data = workspace
    a = tmp_path / "ra"
    b = tmp_path / "rb"
    for out in (a, b):
        assert main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(out)]) == 0
    assert sha_tree(a) == sha_tree(b)


def test_corrupt_checkpoint_exits_4(workspace, tmp_path, capsys):
    root, cfg, data = workspace
    bad = tmp_path / "bad.kwsc"
    bad.write_bytes(b"KWSX" + b"\x00" * 64)
    code = main(["eval", "--config", str(cfg), "--checkpoint", str(bad),
                 "--manifest", str(data / "manifest.tsv"), "--out",
                 str(tmp_path / "e")])
    assert code == 4
    assert "magic" in capsys.readouterr().err


def test_overlapping_partitions_exit_3(workspace, tmp_path, capsys):
    root, cfg, data = workspace
    overlap_dir = tmp_path / "overlap"
    overlap_dir.mkdir()
    for name in ("manifest.tsv",):
        (overlap_dir / name).write_text((data / name).read_text())
    os.symlink(data / "utts", overlap_dir / "utts")
    train_part = (data / "train_partition.tsv").read_text()
    (overlap_dir / "train_partition.tsv").write_text(train_part)
    first_uid = train_part.split("\n")[0].split("\t")[1]
    (overlap_dir / "eval_partition.tsv").write_text(f"evclient\t{first_uid}\n")
    code = main(["train", "--config", str(cfg), "--data", str(overlap_dir),
                 "--out", str(tmp_path / "ov")])
    assert code == 3


def test_ablate_rows(workspace, tmp_path):
    root, cfg, data = workspace
    out = tmp_path / "ablate"
    assert main(["ablate", "--config", str(cfg), "--data", str(data),
                 "--out", str(out)]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "run,eval_loss,frame_accuracy,fa,fr"
    names = [l.split(",")[0] for l in lines[1:]]
    assert names == ["base", "no_specaugment", "one_client_epoch",
                     "constant_client_lr", "no_clipping", "sgd_server",
                     "teacher_labels", "central"]
    assert len(lines) == 9  # header + 8 rows

    # the base row reproduces a standalone train run with the same seed
    solo = tmp_path / "solo"
    assert main(["train", "--config", str(cfg), "--data", str(data),
                 "--out", str(solo)]) == 0
    assert ((out / "base" / "metrics.csv").read_text()
            == (solo / "metrics.csv").read_text())
