"""Analytic vs central-difference gradients for a tiny encoder + head."""
from __future__ import annotations

import numpy as np

from .core import locale_registry, pt_registry
from .encoder import EncoderConfig
from .models import VariantKind, backward_logits, bce_with_logits, create_bundle, forward_logits
from .tokenizer import N_RESERVED, PAD

TINY = EncoderConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16, max_len=8, n_buckets=44, dropout_rate=0.0)
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximized."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def tiny_problem(cfg=TINY, n_pts=5, n_locales=2, batch=4, seed=0, variant=VariantKind.UNIFIED_AWARE,
                 param_std=0.5, zero_params=False):
    """Random bundle, padded batch and targets; vocab is 4 + n_locales + n_buckets."""
    rng = np.random.Generator(np.random.PCG64(seed))
    locales = locale_registry(f"L{i}" for i in range(n_locales))
    pts = pt_registry(f"P{i}" for i in range(n_pts))
    bundle = create_bundle(variant, locales, pts, cfg, seed=seed)
    for _, p in bundle.named_parameters():
        p.value[...] = 0.0 if zero_params else rng.normal(0.0, param_std, size=p.value.shape)
    vocab = bundle.encoders[0].vocab_total
    lengths = rng.integers(3, cfg.max_len + 1, size=batch)
    lengths[0] = cfg.max_len
    ids = np.full((batch, cfg.max_len), PAD, dtype=np.int64)
    loc = rng.integers(n_locales, size=batch)
    for i, n in enumerate(lengths):
        ids[i, 0] = 1
        ids[i, 1] = N_RESERVED + loc[i]
        ids[i, 2] = 2
        ids[i, 3:n] = rng.integers(N_RESERVED + n_locales, vocab, size=n - 3)
    y = (rng.random((batch, n_pts)) < 0.4).astype(np.float64)
    return bundle, ids, loc, y


def _loss(bundle, ids, loc, y):
    _, z = forward_logits(bundle, ids, loc, keep_cache=False)
    return bce_with_logits(z, y)[0]


def grad_check(cfg=TINY, seed=0, h=1e-5, n_pts=5, zero_params=False, variant=VariantKind.UNIFIED_AWARE) -> dict:
    """Max relative error per parameter group.

    Groups are parameter names with the layer prefix stripped, e.g.
    ``w_qkv`` or ``head.weight``; each appears exactly once.
    """
    bundle, ids, loc, y = tiny_problem(cfg, n_pts=n_pts, seed=seed, zero_params=zero_params, variant=variant)
    bundle.zero_grad()
    pooled, z = forward_logits(bundle, ids, loc, keep_cache=True)
    _, dz = bce_with_logits(z, y)
    backward_logits(bundle, pooled, dz, loc)

    report: dict[str, float] = {}
    for name, p in bundle.named_parameters():
        numeric = np.zeros_like(p.value)
        flat, nflat = p.value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = _loss(bundle, ids, loc, y)
            flat[i] = old - h
            down = _loss(bundle, ids, loc, y)
            flat[i] = old
            nflat[i] = (up - down) / (2 * h)
        group = _group(name)
        report[group] = max(report.get(group, 0.0), relative_error(p.grad, numeric))
    return report


def _group(name: str) -> str:
    owner, _, rest = name.partition(".")
    base = rest.rsplit(".", 1)[-1]
    return f"head.{base}" if owner.startswith("head") else base
