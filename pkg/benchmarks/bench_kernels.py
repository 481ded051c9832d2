"""Compiled vs pure-Python kernel timing.

Backend selection happens at import, so the comparison runs this script
twice in subprocesses: once as-is (compiled kernels when built) and once
with SADSP_PURE_PY=1. Both sides compute bit-identical results; this is
purely a speed report.

Usage: python3 benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

TARGET_SECONDS = 0.4
MAX_ITERS = 200

BENCH_LABELS = {
    "matmul": "matmul 64x64 (fwd)",
    "forward_backward": "model fwd+bwd, batch 16",
    "epoch": "train epoch (64 samples)",
}


def _timed(fn) -> float:
    """Mean seconds per call, calibrated off one probe run."""
    fn()  # warmup
    t0 = time.perf_counter()
    fn()
    probe = time.perf_counter() - t0
    iters = max(1, min(MAX_ITERS, int(TARGET_SECONDS / max(probe, 1e-9))))
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters


def run_worker() -> None:
    import random

    import sadsp.ndkit as nd
    from sadsp.data import DatasetSpec, WorldConfig, make_synthetic_dataset
    from sadsp.losses import GENERATOR_PHASE, loss_total
    from sadsp.model import ModelParams, batch_tensors, forward
    from sadsp.trainer import TrainConfig, train

    print(f"WORKER backend={nd.backend_name()}")

    rng = random.Random(0)
    a = nd.tensor([[rng.gauss(0.0, 1.0) for _ in range(64)] for _ in range(64)])
    b = nd.tensor([[rng.gauss(0.0, 1.0) for _ in range(64)] for _ in range(64)])

    def bench_matmul():
        with nd.no_grad():
            nd.matmul(a, b)

    spec = DatasetSpec(num_states=8, num_objects=10, feature_dim=32, rng_seed=0)
    ds = make_synthetic_dataset(spec, WorldConfig(train_per_pair=2))
    params = ModelParams.create(8, 10, 32, hidden=64, seed=0)
    x, s_true, o_true = batch_tensors(ds.train[:16])

    def bench_forward_backward():
        params.zero_grads()
        _, total = loss_total(forward(params, x), s_true, o_true,
                              GENERATOR_PHASE)
        nd.backward(total)

    small = make_synthetic_dataset(spec, WorldConfig(train_per_pair=2))

    def bench_epoch():
        p = ModelParams.create(8, 10, 32, hidden=64, seed=0)
        train(p, small, TrainConfig(epochs=1, batch_size=2, seed=0))

    for name, fn in (("matmul", bench_matmul),
                     ("forward_backward", bench_forward_backward),
                     ("epoch", bench_epoch)):
        print(f"BENCH {name} {_timed(fn):.9f}")


def _collect(pure: bool) -> dict:
    env = dict(os.environ)
    env.pop("SADSP_PURE_PY", None)
    if pure:
        env["SADSP_PURE_PY"] = "1"
    out = subprocess.run([sys.executable, os.path.abspath(__file__), "--worker"],
                         env=env, capture_output=True, text=True, check=True)
    results = {}
    backend = "?"
    for line in out.stdout.splitlines():
        if line.startswith("WORKER backend="):
            backend = line.split("=", 1)[1]
        elif line.startswith("BENCH "):
            _, name, seconds = line.split()
            results[name] = float(seconds)
    return {"backend": backend, "times": results}


def _fmt(seconds: float) -> str:
    if seconds < 1e-3:
        return f"{seconds * 1e6:9.1f} us"
    if seconds < 1.0:
        return f"{seconds * 1e3:9.2f} ms"
    return f"{seconds:9.2f} s "


def main() -> None:
    if "--worker" in sys.argv:
        run_worker()
        return
    fast = _collect(pure=False)
    pure = _collect(pure=True)
    print(f"kernel backends: {fast['backend']} vs {pure['backend']}")
    if fast["backend"] == pure["backend"]:
        print("note: compiled kernels unavailable, comparing python to itself")
    print()
    print(f"{'':28s} {fast['backend']:>12s} {pure['backend']:>12s} {'speedup':>9s}")
    for name, label in BENCH_LABELS.items():
        tf = fast["times"][name]
        tp = pure["times"][name]
        print(f"{label:28s} {_fmt(tf)} {_fmt(tp)} {tp / tf:8.1f}x")


if __name__ == "__main__":
    main()
