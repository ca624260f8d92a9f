import os

import numpy as np
import pytest

from fedkws.augment import SpecAugmentConfig
from fedkws.client import ClientConfig, ClientLrSchedule, train_client
from fedkws.dataset import SyntheticConfig, generate_synthetic_dataset
from fedkws.errors import ConsistencyError, FormatError
from fedkws.model import ModelConfig, init_params, param_count
from fedkws.orchestrator import (Checkpoint, RunConfig, central_train,
                                 load_checkpoint, run_round, run_training,
                                 sample_cohort, save_checkpoint)
from fedkws.partition import ClientCache, PartitionConfig, partition_iid, partition_non_iid
from fedkws.rngs import derive_rng
from fedkws.server import ServerOptimizerConfig, ServerOptimizerState, init_state

MODEL = ModelConfig(input_bins=8, encoder=((4, 3, 3),), decoder=((3, 4),))


@pytest.fixture(scope="module")
def world():
    train = generate_synthetic_dataset(SyntheticConfig(
        n_speakers=6, utterances_per_speaker=10, utterance_len_frames=40,
        keyword_len_frames=16, n_bins=8, seed=31, speaker_prefix="s"))
    evalu = generate_synthetic_dataset(SyntheticConfig(
        n_speakers=2, utterances_per_speaker=10, utterance_len_frames=40,
        keyword_len_frames=16, n_bins=8, seed=31, speaker_prefix="ev"))
    corpus = {u.utterance_id: u for u in train + evalu}
    tc = partition_non_iid(train, PartitionConfig(seed=3))
    ec = partition_iid(evalu, PartitionConfig(mode="iid", iid_cluster_size=10, seed=4))
    return corpus, tc, ec


def small_run(**kw):
    base = dict(clients_per_round=4, total_rounds=6, eval_every=3, seed=77,
                model=MODEL,
                server=ServerOptimizerConfig(variant="yogi", eta_s=0.01),
                client=ClientConfig(epochs=1, clip_norm=20.0, augment=None),
                schedule=ClientLrSchedule(kind="constant"))
    base.update(kw)
    return RunConfig(**base)


# --- checkpoint format --------------------------------------------------------

def roundtrip(state, round_idx=5):
    params = np.random.default_rng(1).normal(size=11).astype(np.float32).astype(np.float64)
    ckpt = Checkpoint(round_idx, params, state, b"12345678")
    path = "/tmp/ckpt_test.kwsc"
    save_checkpoint(path, ckpt)
    back = load_checkpoint(path, expected_hash=b"12345678")
    assert back.round_idx == round_idx
    assert np.array_equal(back.params, params)
    return back


def test_checkpoint_round_trip_all_variants():
    n = 11
    back = roundtrip(ServerOptimizerState())
    assert back.opt_state.vectors == ()
    v = np.linspace(0, 1, n).astype(np.float32).astype(np.float64)
    back = roundtrip(ServerOptimizerState(v=v))
    assert np.array_equal(back.opt_state.v, v)
    m = np.full(n, 0.25)
    s = np.full(n, 1e-6).astype(np.float32).astype(np.float64)
    back = roundtrip(ServerOptimizerState(m=m, s=s))
    assert np.array_equal(back.opt_state.m, m)
    assert np.array_equal(back.opt_state.s, s)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.kwsc"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(FormatError) as err:
        load_checkpoint(path)
    assert err.value.field == "magic"


def test_checkpoint_truncation(tmp_path):
    params = np.zeros(7)
    path = tmp_path / "x.kwsc"
    save_checkpoint(path, Checkpoint(1, params, ServerOptimizerState(), b"\x00" * 8))
    blob = path.read_bytes()
    path.write_bytes(blob[:20])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_wrong_tag(tmp_path):
    params = np.zeros(3)
    path = tmp_path / "x.kwsc"
    save_checkpoint(path, Checkpoint(1, params,
                                     ServerOptimizerState(v=np.zeros(3)),
                                     b"\x00" * 8))
    blob = bytearray(path.read_bytes())
    blob[16 + 12] = ord("q")  # clobber the tag byte after the params block
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as err:
        load_checkpoint(path)
    assert "tag" in str(err.value)


def test_checkpoint_hash_mismatch(tmp_path):
    path = tmp_path / "x.kwsc"
    save_checkpoint(path, Checkpoint(1, np.zeros(3), ServerOptimizerState(),
                                     b"AAAAAAAA"))
    with pytest.raises(ConsistencyError):
        load_checkpoint(path, expected_hash=b"BBBBBBBB")


# --- cohorts and rounds ---------------------------------------------------------

def test_cohort_no_repeats_and_determinism(world):
    _, tc, _ = world
    caches = sorted(tc, key=lambda c: c.client_id)
    a = sample_cohort(123, 4, caches, min(8, len(caches)))
    b = sample_cohort(123, 4, caches, min(8, len(caches)))
    assert [c.client_id for c in a] == [c.client_id for c in b]
    assert len({c.client_id for c in a}) == len(a)
    c = sample_cohort(123, 5, caches, min(8, len(caches)))
    assert [x.client_id for x in a] != [x.client_id for x in c]


def test_cohort_population_exceeded(world):
    _, tc, _ = world
    with pytest.raises(ValueError):
        sample_cohort(1, 1, tc, len(tc) + 1)


def test_single_client_fedavg_collapse(world):
    corpus, tc, _ = world
    caches = sorted(tc, key=lambda c: c.client_id)
    run = small_run(clients_per_round=1,
                    server=ServerOptimizerConfig(variant="sgd", eta_s=1.0),
                    client=ClientConfig(epochs=1, clip_norm=1e9, augment=None))
    w0 = init_params(MODEL, run.seed)
    w1, _, cohort = run_round(1, w0, init_state(run.server, w0.size),
                              caches, corpus, run)
    cache = next(c for c in caches if c.client_id == cohort[0])
    upd = train_client(w0, cache, corpus, run.client, run.schedule, 1,
                       derive_rng(run.seed, "client", 1, cache.client_id), MODEL)
    w_local = w0 - upd.delta
    assert np.allclose(w1, w_local, atol=1e-12)


def test_round_bit_determinism(world):
    corpus, tc, _ = world
    caches = sorted(tc, key=lambda c: c.client_id)
    run = small_run()
    w0 = init_params(MODEL, 1)
    s0 = init_state(run.server, w0.size)
    w1a, st_a, _ = run_round(1, w0, s0, caches, corpus, run)
    w1b, st_b, _ = run_round(1, w0, init_state(run.server, w0.size), caches,
                             corpus, run)
    assert np.array_equal(w1a, w1b)
    assert np.array_equal(st_a.s, st_b.s)


def test_serial_vs_parallel_round(world):
    from concurrent.futures import ThreadPoolExecutor
    corpus, tc, _ = world
    caches = sorted(tc, key=lambda c: c.client_id)
    run = small_run()
    w0 = init_params(MODEL, 2)
    serial, _, _ = run_round(1, w0, init_state(run.server, w0.size), caches,
                             corpus, run)
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel, _, _ = run_round(1, w0, init_state(run.server, w0.size),
                                   caches, corpus, run, executor=pool)
    assert np.array_equal(serial, parallel)


# --- run_training ----------------------------------------------------------------

def read_rows(path):
    with open(path) as fh:
        return fh.read().splitlines()


def test_zero_rounds_single_row(world, tmp_path):
    corpus, tc, ec = world
    run = small_run(total_rounds=0)
    result = run_training(run, tc, ec, corpus, tmp_path / "r0")
    lines = read_rows(tmp_path / "r0" / "metrics.csv")
    assert lines[0] == "round,eval_loss,frame_accuracy,clients_seen,client_lr"
    assert len([l for l in lines if not l.startswith("#")]) == 2  # header + round 0
    assert result.best_round == 0


def test_training_progress_and_determinism(world, tmp_path):
    corpus, tc, ec = world
    run = small_run(total_rounds=10, eval_every=5,
                    client=ClientConfig(epochs=2, clip_norm=20.0,
                                        augment=SpecAugmentConfig(
                                            max_time_frames=8, max_freq_bins=2)))
    r1 = run_training(run, tc, ec, corpus, tmp_path / "a")
    r2 = run_training(run, tc, ec, corpus, tmp_path / "b")
    assert read_rows(tmp_path / "a" / "metrics.csv") == \
        read_rows(tmp_path / "b" / "metrics.csv")
    for t in r1.checkpoint_paths:
        assert (open(r1.checkpoint_paths[t], "rb").read()
                == open(r2.checkpoint_paths[t], "rb").read())
    assert r1.rows[-1][1] < r1.rows[0][1]  # loss went down


def test_workers_do_not_change_results(world, tmp_path):
    corpus, tc, ec = world
    r1 = run_training(small_run(), tc, ec, corpus, tmp_path / "w1")
    r2 = run_training(small_run(workers=3), tc, ec, corpus, tmp_path / "w3")
    assert read_rows(tmp_path / "w1" / "metrics.csv") == \
        read_rows(tmp_path / "w3" / "metrics.csv")


def test_resume_reproduces_tail(world, tmp_path):
    corpus, tc, ec = world
    run_full = small_run(total_rounds=8, eval_every=2)
    full = run_training(run_full, tc, ec, corpus, tmp_path / "full")

    run_half = small_run(total_rounds=4, eval_every=2)
    half = run_training(run_half, tc, ec, corpus, tmp_path / "half")
    resumed = run_training(run_full, tc, ec, corpus, tmp_path / "resumed",
                           resume_from=half.checkpoint_paths[4])

    full_rows = [l for l in read_rows(tmp_path / "full" / "metrics.csv")
                 if not l.startswith(("round", "#"))]
    res_rows = [l for l in read_rows(tmp_path / "resumed" / "metrics.csv")
                if not l.startswith(("round", "#"))]
    tail = [l for l in full_rows if int(l.split(",")[0]) > 4]
    assert res_rows == tail
    for t, path in resumed.checkpoint_paths.items():
        assert (open(path, "rb").read()
                == open(full.checkpoint_paths[t], "rb").read())


def test_train_eval_overlap_rejected(world, tmp_path):
    corpus, tc, _ = world
    with pytest.raises(ConsistencyError):
        run_training(small_run(), tc, [tc[0]], corpus, tmp_path / "x")


def test_clients_seen_counts_distinct(world, tmp_path):
    corpus, tc, ec = world
    run = small_run(total_rounds=4, eval_every=4)
    result = run_training(run, tc, ec, corpus, tmp_path / "seen")
    seen_counts = [row[3] for row in result.rows]
    assert seen_counts[0] == 0
    assert 0 < seen_counts[-1] <= min(4 * 4, len(tc))


# --- central baseline -------------------------------------------------------------

def test_central_zero_steps_returns_init(world):
    corpus, _, _ = world
    utts = list(corpus.values())[:5]
    out = central_train(utts, 0, 0.05, None, MODEL, seed=3)
    assert np.array_equal(out, init_params(MODEL, 3))


def test_central_single_step_equals_client_step(world):
    corpus, _, _ = world
    uid = sorted(corpus)[0]
    cache = ClientCache("c", (uid,))
    w0 = init_params(MODEL, 4)
    upd = train_client(w0, cache, corpus, ClientConfig(1, 1e9, None),
                       ClientLrSchedule(kind="constant", eta0=0.05), 0,
                       derive_rng(8, "z"), MODEL)
    central = central_train([corpus[uid]], 1, 0.05, None, MODEL, seed=4,
                            init_weights=w0, rng=derive_rng(8, "z"))
    assert np.allclose(w0 - central, upd.delta, atol=1e-15)


def test_central_learns(world):
    corpus, _, _ = world
    utts = [u for u in corpus.values()]
    from fedkws.evaluation import eval_clients
    from fedkws.partition import ClientCache as CC
    cache = [CC("all", tuple(sorted(u.utterance_id for u in utts)))]
    before = eval_clients(init_params(MODEL, 5), MODEL, cache, corpus)
    after_params = central_train(utts, 300, 0.05, None, MODEL, seed=5)
    after = eval_clients(after_params, MODEL, cache, corpus)
    assert after.mean_loss < before.mean_loss
