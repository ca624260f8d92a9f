"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--frames 100 200] [--repeats 300]

Times whole-utterance forward and backward passes of the desk-default model
plus one federated round driven through each backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedkws import kernels
from fedkws.client import ClientConfig, ClientLrSchedule
from fedkws.dataset import SyntheticConfig, generate_synthetic_dataset
from fedkws.model import ModelConfig, init_params, param_count
from fedkws.model.network import BoundModel
from fedkws.orchestrator import RunConfig, run_round
from fedkws.partition import PartitionConfig, partition_non_iid
from fedkws.server import ServerOptimizerConfig, init_state


def time_call(fn, repeats: int) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_passes(backend: str, frames: int, repeats: int) -> tuple[float, float]:
    impl = kernels.get_backend(backend)
    old_fwd, old_bwd = kernels.net_forward, kernels.net_backward
    kernels.net_forward, kernels.net_backward = impl.net_forward, impl.net_backward
    try:
        config = ModelConfig()
        model = BoundModel(init_params(config, 1), config)
        rng = np.random.default_rng(0)
        x = np.ascontiguousarray(rng.normal(size=(frames, config.input_bins)))
        y = np.ascontiguousarray((rng.random(frames) < 0.05).astype(np.float64))
        fwd = time_call(lambda: model.forward(x), repeats)
        bwd = time_call(lambda: model.backward(x, y), repeats)
        return fwd, bwd
    finally:
        kernels.net_forward, kernels.net_backward = old_fwd, old_bwd


def bench_round(backend: str) -> float:
    impl = kernels.get_backend(backend)
    old_fwd, old_bwd = kernels.net_forward, kernels.net_backward
    kernels.net_forward, kernels.net_backward = impl.net_forward, impl.net_backward
    try:
        data = generate_synthetic_dataset(SyntheticConfig(
            n_speakers=10, utterances_per_speaker=20, utterance_len_frames=100,
            keyword_len_frames=60, seed=2))
        corpus = {u.utterance_id: u for u in data}
        caches = sorted(partition_non_iid(data, PartitionConfig(seed=3)),
                        key=lambda c: c.client_id)
        run = RunConfig(clients_per_round=10, total_rounds=1, seed=4,
                        client=ClientConfig(epochs=2, augment=None),
                        schedule=ClientLrSchedule())
        params = init_params(run.model, 4)
        state = init_state(run.server, params.size)
        return time_call(
            lambda: run_round(1, params, state, caches, corpus, run), 3)
    finally:
        kernels.net_forward, kernels.net_backward = old_fwd, old_bwd


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, nargs="+", default=[100, 200])
    parser.add_argument("--repeats", type=int, default=300)
    args = parser.parse_args()

    backends = [b for b in ("numpy", "cython") if b in kernels.available_backends()]
    print(f"available backends: {backends} (selected: {kernels.BACKEND})")
    print(f"model: desk default, {param_count(ModelConfig())} params\n")
    print(f"{'frames':>6} {'backend':>8} {'forward':>12} {'backward':>12}")
    baselines: dict[int, tuple[float, float]] = {}
    for frames in args.frames:
        for backend in backends:
            fwd, bwd = bench_passes(backend, frames, args.repeats)
            note = ""
            if backend == "numpy":
                baselines[frames] = (fwd, bwd)
            elif frames in baselines:
                note = (f"  ({baselines[frames][0] / fwd:.2f}x / "
                        f"{baselines[frames][1] / bwd:.2f}x vs numpy)")
            print(f"{frames:>6} {backend:>8} {fwd * 1e3:>10.3f}ms "
                  f"{bwd * 1e3:>10.3f}ms{note}")
    print()
    for backend in backends:
        dt = bench_round(backend)
        print(f"one federated round (10 clients x 2 epochs, {backend}): "
              f"{dt * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
