"""Compare the compiled attention kernel against the numpy fallback.

Run:  python benchmarks/bench_kernels.py

Times the fused masked multi-head attention forward/backward at the shapes
the model actually uses: sampling (small batch) and training (batch 32),
plus an end-to-end sampling comparison with each backend forced.
"""

import time

import numpy as np

from toyedit import diffusion as D
from toyedit import kernels
from toyedit import model as M
from toyedit import world
from toyedit.kernels import _attn_cy, _attn_np


def time_fn(fn, reps):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps * 1e3


def bench_shape(b, nq, nk, d, h, reps=200):
    rng = np.random.default_rng(0)
    q = rng.standard_normal((b, nq, d)).astype(np.float32)
    k = rng.standard_normal((b, nk, d)).astype(np.float32)
    v = rng.standard_normal((b, nk, d)).astype(np.float32)
    mask = np.ones((nq, nk), dtype=np.float32)
    g = rng.standard_normal((b, nq, d)).astype(np.float32)
    rows = []
    for name, impl in (("numpy", _attn_np), ("cython", _attn_cy)):
        if impl is None:
            continue
        _, probs = impl.attention_forward(q, k, v, mask, h)
        fwd = time_fn(lambda: impl.attention_forward(q, k, v, mask, h), reps)
        bwd = time_fn(lambda: impl.attention_backward(q, k, v, probs, g, h), reps)
        rows.append((name, fwd, bwd))
    return rows


def bench_sampling(backend, n_steps=50, reps=3):
    kernels.force_backend(backend)
    try:
        cfg = M.ModelConfig()
        params = M.init_params(cfg, np.random.default_rng(0), zero_init=False, scale=0.05)
        schedule = D.make_schedule()
        cap = world.caption_of(world.all_factors()[0])
        g = D.GuidanceConfig(w_text=3.0)

        def run():
            D.ddim_sample(params, cfg, schedule, g, cap, n_steps=n_steps, seed=1)

        return time_fn(run, reps)
    finally:
        kernels.force_backend(None)


def main():
    print(f"built backend: {kernels.BACKEND}")
    print("\nkernel timings (ms per call)")
    print(f"{'shape':30s} {'backend':8s} {'fwd':>8s} {'bwd':>8s}")
    shapes = [
        (1, 21, 21, 64, 4, "T2I sampling row"),
        (2, 21, 21, 64, 4, "T2I sampling CFG"),
        (2, 19, 40, 64, 4, "edit sampling (cached)"),
        (32, 21, 21, 64, 4, "T2I training"),
        (32, 40, 40, 64, 4, "editing training"),
    ]
    for b, nq, nk, d, h, label in shapes:
        for name, fwd, bwd in bench_shape(b, nq, nk, d, h):
            print(f"{label:30s} {name:8s} {fwd:8.3f} {bwd:8.3f}")

    if _attn_cy is not None:
        print("\nend-to-end 50-step T2I sample (s)")
        for backend in ("numpy", "cython"):
            t = bench_sampling(backend)
            print(f"  {backend:8s} {t / 1e3:.3f}")


if __name__ == "__main__":
    main()
