"""Time the hot kernels on the numba path against the pure-numpy path.

The path is fixed at import time by LOCALEQ_DISABLE_NUMBA, so each path
runs in its own subprocess. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best * 1e3


def measure(repeat):
    from localeq import _accel
    from localeq.core import locale_registry, pt_registry
    from localeq.encoder import EncoderConfig
    from localeq.models import Adam, backward_logits, bce_with_logits, create_bundle, forward_logits
    from localeq.tokenizer import _bucket_ids

    rng = np.random.default_rng(0)
    B, T, d, H = 256, 28, 32, 4
    q = rng.normal(size=(B, T, d))
    k = rng.normal(size=(B, T, d))
    v = rng.normal(size=(B, T, d))
    mask = np.ones((B, T), dtype=bool)
    mask[:, 20:] = rng.random((B, T - 20)) < 0.5
    a, o = _accel.attention_core(q, k, v, mask, H, 0.35, -1e30)
    x = rng.normal(size=(B * T, d))
    g, b = np.ones(d), np.zeros(d)
    _, xhat, rstd = _accel.layer_norm(x, g, b, 1e-12)
    p = rng.normal(size=200_000)
    grad = rng.normal(size=p.size)
    m, vv = np.zeros_like(p), np.zeros_like(p)
    blob = rng.integers(0, 256, size=1 << 20, dtype=np.uint8).tobytes()
    scores = np.sort(rng.random(100_000).round(3))[::-1].copy()
    gold = rng.random(scores.size) < 0.2
    emb = np.zeros((4096, d))
    idx = rng.integers(0, 4096, size=B * T)

    words = ["".join(rng.choice(list("abcdefghij"), size=6)) for _ in range(2000)]

    cfg = EncoderConfig(d_model=d, n_layers=2, n_heads=H, d_ff=2 * d, max_len=32, n_buckets=4096)
    bundle = create_bundle("cons-aware", locale_registry([f"L{i}" for i in range(20)]),
                           pt_registry([f"P{i}" for i in range(200)]), cfg)
    ids = rng.integers(24, 4120, size=(B, T))
    ids[:, 0] = 1
    loc = rng.integers(0, 20, B)
    y = np.zeros((B, 200))
    y[np.arange(B), rng.integers(0, 200, B)] = 1
    opt = Adam([p for _, p in bundle.named_parameters()], 1e-3)
    drop_rng = np.random.default_rng(1)

    def train_step():
        bundle.zero_grad()
        pooled, z = forward_logits(bundle, ids, loc, True, drop_rng)
        _, dz = bce_with_logits(z, y)
        backward_logits(bundle, pooled, dz, loc)
        opt.step()

    cases = {
        "attention_core": lambda: _accel.attention_core(q, k, v, mask, H, 0.35, -1e30),
        "attention_core_backward": lambda: _accel.attention_core_backward(o, q, k, v, a, H, 0.35),
        "layer_norm": lambda: _accel.layer_norm(x, g, b, 1e-12),
        "layer_norm_backward": lambda: _accel.layer_norm_backward(x, xhat, rstd, g),
        "gelu": lambda: _accel.gelu(x),
        "gelu_grad": lambda: _accel.gelu_grad(x),
        "adam_update": lambda: _accel.adam_update(p, grad, m, vv, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
        "scatter_add_rows": lambda: _accel.scatter_add_rows(emb, idx, x),
        "crc64 (1 MiB)": lambda: _accel.crc64(blob),
        "tie_group_counts": lambda: _accel.tie_group_counts(gold, scores),
        "tokenize 2000 queries": lambda: _bucket_ids.__wrapped__(" ".join(words), 4096, 24),
        "train step (2 layers)": train_step,
    }
    return {name: _time(fn, repeat) for name, fn in cases.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--child", choices=["numba", "numpy"], help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        from localeq import _accel

        assert _accel.HAVE_NUMBA == (args.child == "numba"), "requested path is unavailable"
        print(json.dumps(measure(args.repeat)))
        return
    results = {}
    for path in ("numba", "numpy"):
        env = dict(os.environ, LOCALEQ_DISABLE_NUMBA="1" if path == "numpy" else "0")
        out = subprocess.run([sys.executable, __file__, "--child", path, "--repeat", str(args.repeat)],
                             env=env, check=True, capture_output=True, text=True).stdout
        results[path] = json.loads(out.strip().splitlines()[-1])
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name in results["numba"]:
        a, b = results["numba"][name], results["numpy"][name]
        print(f"{name:<26}{a:10.3f}{b:10.3f}{b / a:9.1f}x")


if __name__ == "__main__":
    main()
