"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--epochs 2]

Prints per-kernel timings on a synthetic-scale workload, then the wall time of
a few training epochs with each backend (run in a subprocess, since the
backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from outfitrec import kernels

EPOCH_SCRIPT = """
import sys, time
from outfitrec import kernels
from outfitrec.dataio import SplitSpec, SyntheticSpec, generate_synthetic, split_dataset
from outfitrec.model import ModelConfig
from outfitrec.training import Experiment, TrainConfig, train
ds = generate_synthetic(SyntheticSpec(seed=0))
ex = Experiment.from_dataset(ds, *split_dataset(ds, SplitSpec()))
t = time.perf_counter()
train(ex, ModelConfig(d=64, feature_dim=8), TrainConfig(epochs=int(sys.argv[1]), batch_com=32))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def workload(seed=0, n_outfits=256, outfit_len=5, d=64):
    rng = np.random.default_rng(seed)
    n = n_outfits * outfit_len
    x = rng.normal(size=(n, d))
    base = np.repeat(np.arange(n_outfits) * outfit_len, outfit_len * (outfit_len - 1))
    a, b = np.nonzero(~np.eye(outfit_len, dtype=bool))
    dst = (base + np.tile(a, n_outfits)).astype(np.int64)
    src = (base + np.tile(b, n_outfits)).astype(np.int64)
    w = rng.uniform(size=len(dst))
    W1 = rng.normal(size=(d, d)) / np.sqrt(d)
    grad = rng.normal(size=(n, d))
    index = rng.integers(0, n_outfits, size=n).astype(np.int64)
    ptr = np.arange(0, n + 1, outfit_len, dtype=np.int64)
    cats = rng.integers(0, 8, size=n).astype(np.int64)
    return dict(x=x, dst=dst, src=src, w=w, W1=W1, grad=grad, index=index, ptr=ptr, cats=cats,
                n_outfits=n_outfits)


def kernel_timings(mod, data, repeat):
    _, z = mod.pair_messages_forward(data["x"], data["dst"], data["src"], data["w"],
                                     data["W1"], 0.2)
    z = np.asarray(z)
    calls = {
        "pair_messages_forward": lambda: mod.pair_messages_forward(
            data["x"], data["dst"], data["src"], data["w"], data["W1"], 0.2),
        "pair_messages_backward": lambda: mod.pair_messages_backward(
            data["grad"], data["x"], data["dst"], data["src"], data["w"], data["W1"], z, 0.2),
        "scatter_add_rows": lambda: mod.scatter_add_rows(data["x"], data["index"],
                                                         data["n_outfits"]),
        "category_cooccurrence": lambda: mod.category_cooccurrence(data["ptr"], data["cats"], 8),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in calls.items()}


def epoch_time(backend, epochs):
    env = dict(os.environ)
    env.pop("OUTFITREC_PURE_PYTHON", None)
    if backend == "python":
        env["OUTFITREC_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT, str(epochs)], env=env,
                         capture_output=True, text=True, check=True)
    name, seconds = out.stdout.split()
    if name != backend:
        raise RuntimeError(f"asked for {backend}, subprocess used {name}")
    return float(seconds)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=2, help="0 skips the training run")
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; run `pip install -e .` first", file=sys.stderr)
        return 1
    data = workload()
    times = {b: kernel_timings(kernels.load_backend(b), data, args.repeat) for b in backends}
    print(f"{'kernel':<26}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name in times["python"]:
        cy, py = times["cython"][name], times["python"][name]
        print(f"{name:<26}{cy * 1e3:>12.3f}{py * 1e3:>12.3f}{py / cy:>9.1f}x")
    if args.epochs:
        cy, py = (epoch_time(b, args.epochs) for b in ("cython", "python"))
        print(f"{f'train {args.epochs} epochs (s)':<26}{cy:>12.2f}{py:>12.2f}{py / cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
