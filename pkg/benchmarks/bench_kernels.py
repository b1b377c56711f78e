"""Time the numba kernels against the numpy fallbacks on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Every kernel's outputs are compared across backends (1e-12) before timing.
Numba compile time is excluded (one warm-up call per kernel).
"""
import argparse
import time

import numpy as np

from skelscreen import gbdt, kernels
from skelscreen.kernels import BONE, BORDER
from skelscreen.localize import classify_voxels
from skelscreen.phantom import PhantomSpec, Pose, generate
from skelscreen.volume import VoxelVolume


def best_of(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


def cases():
    rng = np.random.default_rng(0)
    vol, _ = generate(PhantomSpec(seed=1, pose=Pose()))
    sub = np.ascontiguousarray(vol.data[:, :, : vol.data.shape[2] // 2])
    classes = classify_voxels(VoxelVolume(sub, vol.spacing_mm))
    yield "median3 phantom half", lambda be: be.median3(sub)
    yield "watershed_flood phantom half", lambda be: be.watershed_flood(sub, classes.copy())

    n, d, k = 2000, 16, 40
    X = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    sorted_idx = np.ascontiguousarray(np.stack([np.argsort(X[:, f], kind="stable") for f in range(d)]))
    p = gbdt.softmax(np.zeros((n, k)))
    g, h = gbdt.quantize(p - np.eye(k)[y], p * (1 - p))
    yield f"grow_round n={n} d={d} classes={k} depth=8", lambda be: be.grow_round(X, sorted_idx, g, h, 8, 1e-12)

    model = gbdt.train(X[:400], y[:400] % 5, 5, gbdt.TrainParams(n_rounds=50, learning_rate=0.1, max_depth=6))
    args = (X, model.feature, model.threshold, model.left, model.right, model.value, model.tree_offset, 5)
    yield f"predict_raw {model.n_trees} trees x {n} rows", lambda be: be.predict_raw(*args)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    nb, npb = kernels.get_backend("numba"), kernels.get_backend("numpy")
    print(f"{'kernel':44s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, fn in cases():
        fn(nb)  # compile
        a, t_np = best_of(lambda: fn(npb), args.repeat)
        b, t_nb = best_of(lambda: fn(nb), args.repeat)
        if not same(a, b):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:44s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
