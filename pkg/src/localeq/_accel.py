"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin. Integer kernels (hashing, CRC, counting)
agree bit for bit; float kernels agree to rounding. Set
``LOCALEQ_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
import math
import os

import numpy as np
from scipy.special import erf

_SQRT_HALF = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
CRC64_POLY = 0xC96C5795D7870F42  # ECMA-182, reflected (CRC-64/XZ)


def _make_crc_table():
    table = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ CRC64_POLY if c & 1 else c >> 1
        table[i] = c
    return table


CRC64_TABLE = _make_crc_table()

_DISABLED = os.environ.get("LOCALEQ_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by LOCALEQ_DISABLE_NUMBA")
    import numba as nb

    HAVE_NUMBA = True
except ImportError:
    nb = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------- numpy path


def fnv1a_np(buf, offsets):
    """64-bit FNV-1a of each slice ``buf[offsets[i]:offsets[i+1]]``."""
    n = len(offsets) - 1
    out = np.empty(n, dtype=np.uint64)
    data = bytes(buf)
    for i in range(n):
        h = 0xCBF29CE484222325
        for byte in data[offsets[i]:offsets[i + 1]]:
            h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        out[i] = h
    return out


def scatter_add_rows_np(out, idx, rows):
    np.add.at(out, idx, rows)


def crc64_np(data):
    crc = 0xFFFFFFFFFFFFFFFF
    table = [int(t) for t in CRC64_TABLE]
    for byte in bytes(data):
        crc = table[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def tie_group_counts_np(gold_sorted, scores_sorted):
    """Cumulative (tp, fp) at the last index of each run of equal scores.

    Inputs must be sorted by score descending.
    """
    tp = np.cumsum(gold_sorted, dtype=np.int64)
    fp = np.cumsum(~gold_sorted, dtype=np.int64)
    n = len(scores_sorted)
    if n == 0:
        return np.empty(0), tp, fp
    last = np.ones(n, dtype=bool)
    last[:-1] = scores_sorted[1:] != scores_sorted[:-1]
    ends = np.flatnonzero(last)
    return scores_sorted[ends], tp[ends], fp[ends]


def attention_core_np(q, k, v, key_mask, n_heads, scale, mask_value):
    """Masked softmax attention. q (B,nq,d); k, v (B,T,d); returns probs (B,H,nq,T), out (B,nq,d).

    Query row i sits at position i; rows at padded positions get zero output.
    """
    B, nq, d = q.shape
    T = k.shape[1]
    dh = d // n_heads
    q4 = q.reshape(B, nq, n_heads, dh).transpose(0, 2, 1, 3)
    k4 = k.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    v4 = v.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    s = (q4 @ k4.transpose(0, 1, 3, 2)) * scale
    s = np.where(key_mask[:, None, None, :], s, mask_value)
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    a = e / e.sum(-1, keepdims=True)
    a *= key_mask[:, None, :nq, None]  # padded query rows attend to nothing
    o = (a @ v4).transpose(0, 2, 1, 3).reshape(B, nq, d)
    return a, o


def attention_core_backward_np(do, q, k, v, a, n_heads, scale):
    B, nq, d = q.shape
    T = k.shape[1]
    dh = d // n_heads
    q4 = q.reshape(B, nq, n_heads, dh).transpose(0, 2, 1, 3)
    k4 = k.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    v4 = v.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    do4 = do.reshape(B, nq, n_heads, dh).transpose(0, 2, 1, 3)
    da = do4 @ v4.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do4
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dq = ds @ k4
    dk = ds.transpose(0, 1, 3, 2) @ q4
    def back(x, n):
        return x.transpose(0, 2, 1, 3).reshape(B, n, d)
    return back(dq, nq), back(dk, T), back(dv, T)


def gelu_np(x):
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + erf(x * _SQRT_HALF))


def gelu_grad_np(x):
    return 0.5 * (1.0 + erf(x * _SQRT_HALF)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def layer_norm_np(x, g, b, eps):
    """Row-wise layer norm of a 2-D array; returns (y, xhat, rstd)."""
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * g + b, xhat, rstd


def layer_norm_backward_np(dy, xhat, rstd, g):
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def adam_update_np(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @nb.njit(cache=True)
    def _fnv1a_nb(buf, offsets):
        n = offsets.shape[0] - 1
        out = np.empty(n, dtype=np.uint64)
        for i in range(n):
            h = np.uint64(0xCBF29CE484222325)
            for j in range(offsets[i], offsets[i + 1]):
                h = (h ^ np.uint64(buf[j])) * np.uint64(0x100000001B3)
            out[i] = h
        return out

    @nb.njit(cache=True)
    def _scatter_add_rows_nb(out, idx, rows):
        d = out.shape[1]
        for i in range(idx.shape[0]):
            r = idx[i]
            for j in range(d):
                out[r, j] += rows[i, j]

    @nb.njit(cache=True)
    def _crc64_nb(data, table):
        crc = np.uint64(0xFFFFFFFFFFFFFFFF)
        for i in range(data.shape[0]):
            crc = table[(crc ^ np.uint64(data[i])) & np.uint64(0xFF)] ^ (crc >> np.uint64(8))
        return crc ^ np.uint64(0xFFFFFFFFFFFFFFFF)

    @nb.njit(cache=True)
    def _tie_group_counts_nb(gold_sorted, scores_sorted):
        n = scores_sorted.shape[0]
        thr = np.empty(n, dtype=np.float64)
        tps = np.empty(n, dtype=np.int64)
        fps = np.empty(n, dtype=np.int64)
        tp = 0
        fp = 0
        k = 0
        for i in range(n):
            if gold_sorted[i]:
                tp += 1
            else:
                fp += 1
            if i == n - 1 or scores_sorted[i + 1] != scores_sorted[i]:
                thr[k] = scores_sorted[i]
                tps[k] = tp
                fps[k] = fp
                k += 1
        return thr[:k], tps[:k], fps[:k]

    @nb.njit(cache=True)
    def _attention_core_nb(q, k, v, key_mask, n_heads, scale, mask_value):
        B, nq, d = q.shape
        T = k.shape[1]
        dh = d // n_heads
        a = np.zeros((B, n_heads, nq, T))
        o = np.zeros((B, nq, d))
        for b in range(B):
            for i in range(nq):
                if not key_mask[b, i]:
                    continue
                for h in range(n_heads):
                    c0 = h * dh
                    m = -np.inf
                    for t in range(T):
                        if key_mask[b, t]:
                            acc = 0.0
                            for j in range(dh):
                                acc += q[b, i, c0 + j] * k[b, t, c0 + j]
                            acc *= scale
                            a[b, h, i, t] = acc
                            if acc > m:
                                m = acc
                    z = 0.0
                    for t in range(T):
                        if key_mask[b, t]:
                            e = np.exp(a[b, h, i, t] - m)
                            a[b, h, i, t] = e
                            z += e
                    for t in range(T):
                        if key_mask[b, t]:
                            p = a[b, h, i, t] / z
                            a[b, h, i, t] = p
                            for j in range(dh):
                                o[b, i, c0 + j] += p * v[b, t, c0 + j]
        return a, o

    @nb.njit(cache=True)
    def _attention_core_backward_nb(do, q, k, v, a, n_heads, scale):
        B, nq, d = q.shape
        T = k.shape[1]
        dh = d // n_heads
        dq = np.zeros((B, nq, d))
        dk = np.zeros((B, T, d))
        dv = np.zeros((B, T, d))
        da = np.empty(T)
        for b in range(B):
            for h in range(n_heads):
                c0 = h * dh
                for i in range(nq):
                    dot = 0.0
                    for t in range(T):
                        p = a[b, h, i, t]
                        if p == 0.0:
                            da[t] = 0.0
                            continue
                        acc = 0.0
                        for j in range(dh):
                            g = do[b, i, c0 + j]
                            acc += g * v[b, t, c0 + j]
                            dv[b, t, c0 + j] += p * g
                        da[t] = acc
                        dot += acc * p
                    for t in range(T):
                        p = a[b, h, i, t]
                        if p == 0.0:
                            continue
                        ds = p * (da[t] - dot) * scale
                        for j in range(dh):
                            dq[b, i, c0 + j] += ds * k[b, t, c0 + j]
                            dk[b, t, c0 + j] += ds * q[b, i, c0 + j]
        return dq, dk, dv

    @nb.njit(cache=True)
    def _gelu_nb(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.shape[0]):
            xi = flat[i]
            out[i] = 0.5 * xi * (1.0 + math.erf(xi * _SQRT_HALF))
        return out.reshape(x.shape)

    @nb.njit(cache=True)
    def _gelu_grad_nb(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.shape[0]):
            xi = flat[i]
            out[i] = 0.5 * (1.0 + math.erf(xi * _SQRT_HALF)) + xi * _INV_SQRT_2PI * math.exp(-0.5 * xi * xi)
        return out.reshape(x.shape)

    @nb.njit(cache=True)
    def _layer_norm_nb(x, g, b, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty((n, 1))
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            r = 1.0 / np.sqrt(var / d + eps)
            rstd[i, 0] = r
            for j in range(d):
                xh = (x[i, j] - mu) * r
                xhat[i, j] = xh
                y[i, j] = xh * g[j] + b[j]
        return y, xhat, rstd

    @nb.njit(cache=True)
    def _layer_norm_backward_nb(dy, xhat, rstd, g):
        n, d = dy.shape
        dx = np.empty_like(dy)
        dg = np.zeros(d)
        db = np.zeros(d)
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                dxh = dy[i, j] * g[j]
                s1 += dxh
                s2 += dxh * xhat[i, j]
                dg[j] += dy[i, j] * xhat[i, j]
                db[j] += dy[i, j]
            s1 /= d
            s2 /= d
            r = rstd[i, 0]
            for j in range(d):
                dx[i, j] = r * (dy[i, j] * g[j] - s1 - xhat[i, j] * s2)
        return dx, dg, db

    @nb.njit(cache=True)
    def _adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
        for i in range(p.shape[0]):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def fnv1a(buf, offsets):
    buf = np.frombuffer(bytes(buf), dtype=np.uint8) if not isinstance(buf, np.ndarray) else buf
    offsets = np.asarray(offsets, dtype=np.int64)
    if HAVE_NUMBA:
        return _fnv1a_nb(buf, offsets)
    return fnv1a_np(buf, offsets)


def scatter_add_rows(out, idx, rows):
    """``out[idx[i]] += rows[i]`` in index order (unbuffered)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    rows = np.ascontiguousarray(rows, dtype=out.dtype)
    if HAVE_NUMBA:
        _scatter_add_rows_nb(out, idx, rows)
    else:
        scatter_add_rows_np(out, idx, rows)


def crc64(data):
    """CRC-64/XZ checksum as a Python int."""
    if HAVE_NUMBA:
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
        return int(_crc64_nb(arr, CRC64_TABLE))
    return crc64_np(data)


def tie_group_counts(gold_sorted, scores_sorted):
    gold_sorted = np.ascontiguousarray(gold_sorted, dtype=np.bool_)
    scores_sorted = np.ascontiguousarray(scores_sorted, dtype=np.float64)
    if HAVE_NUMBA:
        return _tie_group_counts_nb(gold_sorted, scores_sorted)
    return tie_group_counts_np(gold_sorted, scores_sorted)


def attention_core(q, k, v, key_mask, n_heads, scale, mask_value):
    if HAVE_NUMBA:
        return _attention_core_nb(q, k, v, key_mask, n_heads, scale, mask_value)
    return attention_core_np(q, k, v, key_mask, n_heads, scale, mask_value)


def attention_core_backward(do, q, k, v, a, n_heads, scale):
    if HAVE_NUMBA:
        return _attention_core_backward_nb(np.ascontiguousarray(do), q, k, v, a, n_heads, scale)
    return attention_core_backward_np(do, q, k, v, a, n_heads, scale)


def gelu(x):
    if HAVE_NUMBA:
        return _gelu_nb(np.ascontiguousarray(x))
    return gelu_np(x)


def gelu_grad(x):
    if HAVE_NUMBA:
        return _gelu_grad_nb(np.ascontiguousarray(x))
    return gelu_grad_np(x)


def layer_norm(x, g, b, eps):
    if HAVE_NUMBA:
        return _layer_norm_nb(np.ascontiguousarray(x), g, b, eps)
    return layer_norm_np(x, g, b, eps)


def layer_norm_backward(dy, xhat, rstd, g):
    if HAVE_NUMBA:
        return _layer_norm_backward_nb(np.ascontiguousarray(dy), xhat, rstd, g)
    return layer_norm_backward_np(dy, xhat, rstd, g)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    """In-place Adam step on flat contiguous views."""
    if HAVE_NUMBA:
        _adam_update_nb(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1), lr, beta1, beta2, eps, c1, c2)
    else:
        adam_update_np(p, g, m, v, lr, beta1, beta2, eps, c1, c2)


def set_threads(n):
    """Cap BLAS worker threads; ``n=None`` leaves defaults. The kernels here are serial."""
    if n is None:
        return
    from threadpoolctl import threadpool_limits

    threadpool_limits(max(1, int(n)))
