"""Time the numba and numpy versions of every kernel, then one training run per backend.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 40]

Kernel timings call both implementations directly in this process. The
training comparison runs in two subprocesses because the backend flag
``RIVERAD_DISABLE_NUMBA`` is read at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from riverad import kernels, simgen
from riverad.simgen import placement_arrays


def kernel_inputs(n: int, rng: np.random.Generator) -> dict:
    net = simgen.build_river_network(n, seed=0)
    seg, off = placement_arrays(net, net.placements)
    logits = rng.normal(size=(32, n, n))
    mask = rng.random((n, n)) < 0.2
    np.fill_diagonal(mask, True)
    alpha = kernels.IMPLEMENTATIONS["masked_softmax"][1](logits, mask)
    scores = rng.normal(size=(n, n))
    allowed = ~np.eye(n, dtype=bool)
    adj = kernels.IMPLEMENTATIONS["topk_mask"][1](scores, allowed, 5) | np.eye(n, dtype=bool)
    return {
        "river_pair_matrices": (net.parent, net.length, net.down_length, net.depth.astype(np.int64),
                                np.asarray(seg, dtype=np.int64), np.asarray(off, dtype=np.float64)),
        "masked_softmax": (logits, mask),
        "masked_softmax_backward": (alpha, rng.normal(size=alpha.shape)),
        "trailing_mean": (rng.normal(size=(1000, n)), 5),
        "topk_mask": (scores, allowed, 5),
        "pooled_percentiles": (rng.normal(size=(400, n)), adj, 99.0),
    }


TRAIN_SNIPPET = """
import time
from riverad import anomgen, pipeline, simgen
from riverad._accel import backend_name
from riverad.model import GdnHyperparams
from riverad.simgen import SimConfig
cfg = SimConfig(n={n}, T=1000, seed=0)
hp = GdnHyperparams(max_epochs=1, seed=0)
pipeline.run_experiment(cfg, anomgen.AnomalyConfig(), hp)  # warm-up and compilation
t0 = time.perf_counter()
pipeline.run_experiment(cfg, anomgen.AnomalyConfig(), GdnHyperparams(max_epochs={epochs}, seed=0))
print(backend_name(), time.perf_counter() - t0)
"""


def bench_training(n: int, epochs: int) -> list[tuple[str, float]]:
    out = []
    for flag in ("0", "1"):
        env = {**os.environ, "RIVERAD_DISABLE_NUMBA": flag}
        res = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(n=n, epochs=epochs)],
                             env=env, capture_output=True, text=True, check=True)
        name, secs = res.stdout.split()
        out.append((name, float(secs)))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=40, help="number of sensors")
    ap.add_argument("--epochs", type=int, default=3, help="epochs in the training comparison")
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args(argv)

    inputs = kernel_inputs(args.n, np.random.default_rng(0))
    print(f"{'kernel':<26}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow) in kernels.IMPLEMENTATIONS.items():
        call_args = inputs[name]
        fast(*call_args)  # compile outside the timed region
        times = []
        for fn in (fast, slow):
            number = 10
            best = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat))
            times.append(1e3 * best / number)
        print(f"{name:<26}{times[0]:>12.3f}{times[1]:>12.3f}{times[1] / times[0]:>10.2f}")

    if not args.skip_training:
        print(f"\ntraining, n={args.n}, T=1000, {args.epochs} epochs")
        for name, secs in bench_training(args.n, args.epochs):
            print(f"  {name:<8}{secs:8.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
