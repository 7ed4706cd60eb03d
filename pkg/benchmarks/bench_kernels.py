#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --train    # also one short training run per backend

The training comparison runs in subprocesses because the backend is chosen
at import time from HPN_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hpn import _kernels
from hpn.graphstore import gen_synthetic


def best_of(fn, repeat=5):
    fn()  # warm (and JIT) once
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    E, P = rng.normal(size=(46, 16)), rng.normal(size=(300, 16))
    S = rng.normal(size=(48, 48))
    S = S + S.T
    X, Y = rng.normal(size=(600, 32)), rng.normal(size=(600, 32))
    g, _ = gen_synthetic(6, 200, 8, 0.05, 0.01, 4.0, rng)
    allowed = np.ones(g.num_nodes, dtype=bool)
    return [
        ("cosine_matrix 46x300", lambda: _kernels._cosine_matrix_np(E, P), lambda: _kernels._cosine_matrix_nb(E, P)),
        ("jacobi_eigvals 48x48", lambda: _kernels._jacobi_eigvals_np(S.copy(), 1e-12, 100),
         lambda: _kernels._jacobi_eigvals_nb(S.copy(), 1e-12, 100)),
        ("min_pair_distance 600x600", lambda: _kernels._min_pair_distance_np(X, Y),
         lambda: _kernels._min_pair_distance_nb(X, Y)),
        ("hop_frontiers x200", lambda: [_kernels._hop_frontiers_np(g.indptr, g.indices, allowed, v, 2) for v in range(200)],
         lambda: [_kernels._hop_frontiers_nb(g.indptr, g.indices, allowed, np.int64(v), np.int64(2)) for v in range(200)]),
    ]


TRAIN_SNIPPET = """
import time
from hpn import _kernels
from hpn.graphstore import TaskSpec, gen_synthetic, make_task_subgraphs
from hpn.model import HpnModel, ModelConfig, TrainConfig, train_task
from hpn.numerics import make_rng
g, s = gen_synthetic(2, 100, 8, 0.05, 0.01, 4.0, make_rng(0))
view = make_task_subgraphs(g, TaskSpec([[0, 1]]), s)[0]
m = HpnModel(ModelConfig(d_v=8, num_classes=2))
t0 = time.perf_counter()
train_task(m, view, TrainConfig(epochs=20, warmup_epochs=5), make_rng(1))
print(_kernels.BACKEND, time.perf_counter() - t0, m.digest())
"""


def train_compare():
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, HPN_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs, digest = res.stdout.split()
        out[backend] = (float(secs), digest)
        print(f"  train 20 epochs [{backend:5s}] {float(secs):7.2f} s  digest {digest[:12]}")
    if len(out) == 2:
        same = out["numba"][1] == out["numpy"][1]
        print(f"  checkpoints identical across backends: {same}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", action="store_true")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        print("numba unavailable (or HPN_DISABLE_NUMBA set); nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in cases(rng):
        a, b = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:28s} {1e3 * a:10.3f} {1e3 * b:10.3f} {a / b:7.1f}x")
    if args.train:
        train_compare()


if __name__ == "__main__":
    main()
