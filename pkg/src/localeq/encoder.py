"""From-scratch pre-layer-norm transformer encoder with manual backprop.

Shapes: ``B`` batch, ``T`` sequence length, ``d`` model width, ``H`` heads.
The pooled output is the final-layer-normed CLS (position 0) vector, so the
last block only computes the CLS query row.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _accel
from .tokenizer import PAD

LN_EPS = 1e-12
MASK_VALUE = -1e30
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    max_len: int = 32
    n_buckets: int = 4096
    dropout_rate: float = 0.001
    activation: str = "gelu"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.activation != "gelu":
            raise ValueError("only the gelu activation is supported")
        if min(self.d_model, self.n_layers, self.n_heads, self.d_ff, self.n_buckets) < 1 or self.max_len < 3:
            raise ValueError("encoder dimensions must be positive and max_len >= 3")

    def to_dict(self):
        return asdict(self)


class Parameter:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


# ---------------------------------------------------------------- layers


def layer_norm(x, g, b):
    shape = x.shape
    y, xhat, rstd = _accel.layer_norm(x.reshape(-1, shape[-1]), g, b, LN_EPS)
    return y.reshape(shape), (xhat, rstd, g)


def layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    shape = dy.shape
    dx, dg, db = _accel.layer_norm_backward(dy.reshape(-1, shape[-1]), xhat, rstd, g)
    return dx.reshape(shape), dg, db


def gelu(x):
    return _accel.gelu(x)


def gelu_grad(x):
    return _accel.gelu_grad(x)


def softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def dropout(x, rate, rng):
    """Inverted dropout; returns (output, scaled keep-mask or None)."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def attention(h, w_qkv, b_qkv, w_o, b_o, key_mask, n_heads, nq):
    """Multi-head self-attention; queries are the first ``nq`` positions."""
    B, T, d = h.shape
    h2 = h.reshape(B * T, d)
    kv = (h2 @ w_qkv[:, d:] + b_qkv[d:]).reshape(B, T, 2 * d)
    hq = h[:, :nq].reshape(B * nq, d)
    q = (hq @ w_qkv[:, :d] + b_qkv[:d]).reshape(B, nq, d)
    k = np.ascontiguousarray(kv[:, :, :d])
    v = np.ascontiguousarray(kv[:, :, d:])
    scale = 1.0 / math.sqrt(d // n_heads)
    a, o = _accel.attention_core(q, k, v, key_mask, n_heads, scale, MASK_VALUE)
    o2 = o.reshape(B * nq, d)
    out = (o2 @ w_o + b_o).reshape(B, nq, d)
    return out, (h2, hq, q, k, v, a, o2, w_qkv, w_o, scale, n_heads, (B, T, nq))


def attention_backward(dout, cache):
    h2, hq, q, k, v, a, o2, w_qkv, w_o, scale, n_heads, (B, T, nq) = cache
    d = h2.shape[1]
    dout2 = dout.reshape(B * nq, d)
    dw_o = o2.T @ dout2
    db_o = dout2.sum(0)
    do = (dout2 @ w_o.T).reshape(B, nq, d)
    dq, dk, dv = _accel.attention_core_backward(do, q, k, v, a, n_heads, scale)
    dq2 = dq.reshape(B * nq, d)
    dkv = np.concatenate([dk, dv], axis=2).reshape(B * T, 2 * d)
    dw_qkv = np.empty_like(w_qkv)
    dw_qkv[:, :d] = hq.T @ dq2
    dw_qkv[:, d:] = h2.T @ dkv
    db_qkv = np.concatenate([dq2.sum(0), dkv.sum(0)])
    dh = (dkv @ w_qkv[:, d:].T).reshape(B, T, d)
    dh[:, :nq] += (dq2 @ w_qkv[:, :d].T).reshape(B, nq, d)
    return dh, dw_qkv, db_qkv, dw_o, db_o


def feed_forward(h, w1, b1, w2, b2):
    shape = h.shape
    h2 = h.reshape(-1, shape[-1])
    u = h2 @ w1 + b1
    g = gelu(u)
    return (g @ w2 + b2).reshape(shape), (h2, u, g, w1, w2)


def feed_forward_backward(dout, cache):
    h2, u, g, w1, w2 = cache
    shape = dout.shape
    dout2 = dout.reshape(-1, shape[-1])
    dw2 = g.T @ dout2
    db2 = dout2.sum(0)
    du = (dout2 @ w2.T) * gelu_grad(u)
    dw1 = h2.T @ du
    db1 = du.sum(0)
    return (du @ w1.T).reshape(shape), dw1, db1, dw2, db2


# ---------------------------------------------------------------- encoder

_LAYER_NAMES = ("ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_o", "b_o",
                "ln2_g", "ln2_b", "w_ff1", "b_ff1", "w_ff2", "b_ff2")


def parameter_shapes(cfg: EncoderConfig, vocab_total: int) -> list[tuple[str, tuple]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("tok_emb", (vocab_total, d)), ("pos_emb", (cfg.max_len, d))]
    layer = (("ln1_g", (d,)), ("ln1_b", (d,)), ("w_qkv", (d, 3 * d)), ("b_qkv", (3 * d,)),
             ("w_o", (d, d)), ("b_o", (d,)), ("ln2_g", (d,)), ("ln2_b", (d,)),
             ("w_ff1", (d, f)), ("b_ff1", (f,)), ("w_ff2", (f, d)), ("b_ff2", (d,)))
    for i in range(cfg.n_layers):
        shapes += [(f"layer{i}.{n}", s) for n, s in layer]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,))]
    return shapes


def init_value(name: str, shape, rng, std=INIT_STD):
    base = name.rsplit(".", 1)[-1]
    if base.endswith("_g"):
        return np.ones(shape)
    if base.startswith("b_") or base.endswith("_b"):
        return np.zeros(shape)
    return rng.normal(0.0, std, size=shape)


class Encoder:
    def __init__(self, cfg: EncoderConfig, vocab_total: int, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.vocab_total = vocab_total
        rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        self.params = {n: Parameter(init_value(n, s, rng)) for n, s in parameter_shapes(cfg, vocab_total)}
        self._cache = None

    def __getitem__(self, name) -> np.ndarray:
        return self.params[name].value

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def forward(self, ids: np.ndarray, train_mode: bool = False, rng=None, keep_cache: bool | None = None):
        """Pooled CLS vectors, shape (B, d).

        Dropout is active only when ``train_mode`` and ``rng`` is given. The
        activation cache is kept for ``backward`` in train mode (or when
        ``keep_cache``); eval-mode calls leave the instance untouched.
        """
        cfg = self.cfg
        ids = np.asarray(ids)
        B, T = ids.shape
        if T > cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_total):
            raise ValueError("token id out of range")
        drop_rng = rng if train_mode else None
        rate = cfg.dropout_rate
        key_mask = ids != PAD
        x = self["tok_emb"][ids] + self["pos_emb"][:T]
        x, keep0 = dropout(x, rate, drop_rng)
        layer_caches = []
        for i in range(cfg.n_layers):
            p = f"layer{i}."
            nq = 1 if i == cfg.n_layers - 1 else T
            h, ln1 = layer_norm(x, self[p + "ln1_g"], self[p + "ln1_b"])
            att, att_c = attention(h, self[p + "w_qkv"], self[p + "b_qkv"], self[p + "w_o"], self[p + "b_o"],
                                   key_mask, cfg.n_heads, nq)
            att, keep_a = dropout(att, rate, drop_rng)
            x1 = x[:, :nq] + att
            h2, ln2 = layer_norm(x1, self[p + "ln2_g"], self[p + "ln2_b"])
            ff, ff_c = feed_forward(h2, self[p + "w_ff1"], self[p + "b_ff1"], self[p + "w_ff2"], self[p + "b_ff2"])
            ff, keep_f = dropout(ff, rate, drop_rng)
            x = x1 + ff
            layer_caches.append((nq, T, ln1, att_c, keep_a, ln2, ff_c, keep_f))
        y, lnf = layer_norm(x[:, 0], self["lnf_g"], self["lnf_b"])
        if train_mode if keep_cache is None else keep_cache:
            self._cache = (ids, keep0, layer_caches, lnf)
        return y

    def backward(self, dpooled: np.ndarray):
        """Accumulate parameter gradients for the last cached forward."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        ids, keep0, layer_caches, lnf = self._cache
        self._cache = None
        P = self.params
        dx0, dg, db = layer_norm_backward(dpooled, lnf)
        P["lnf_g"].grad += dg
        P["lnf_b"].grad += db
        B = ids.shape[0]
        d = self.cfg.d_model
        dx = np.zeros((B, 1, d))
        dx[:, 0] = dx0
        for i in reversed(range(self.cfg.n_layers)):
            p = f"layer{i}."
            nq, T, ln1, att_c, keep_a, ln2, ff_c, keep_f = layer_caches[i]
            dx1 = dx
            dff = dx if keep_f is None else dx * keep_f
            dh2, dw1, db1, dw2, db2 = feed_forward_backward(dff, ff_c)
            P[p + "w_ff1"].grad += dw1
            P[p + "b_ff1"].grad += db1
            P[p + "w_ff2"].grad += dw2
            P[p + "b_ff2"].grad += db2
            dln2, dg, db = layer_norm_backward(dh2, ln2)
            P[p + "ln2_g"].grad += dg
            P[p + "ln2_b"].grad += db
            dx1 = dx1 + dln2
            datt = dx1 if keep_a is None else dx1 * keep_a
            dh, dwqkv, dbqkv, dwo, dbo = attention_backward(datt, att_c)
            P[p + "w_qkv"].grad += dwqkv
            P[p + "b_qkv"].grad += dbqkv
            P[p + "w_o"].grad += dwo
            P[p + "b_o"].grad += dbo
            dxin, dg, db = layer_norm_backward(dh, ln1)
            P[p + "ln1_g"].grad += dg
            P[p + "ln1_b"].grad += db
            dxin[:, :nq] += dx1
            dx = dxin
        if keep0 is not None:
            dx = dx * keep0
        T = ids.shape[1]
        P["pos_emb"].grad[:T] += dx.sum(0)
        _accel.scatter_add_rows(P["tok_emb"].grad, ids.reshape(-1), dx.reshape(-1, d))

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())
