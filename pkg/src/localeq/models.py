"""The three query-to-product-type classifier variants, training and prediction.

All variants share one text encoder design and a linear sigmoid head over
every product type. They differ in routing:

=================  ============  =========  ==============
variant            encoders      heads      locale token
=================  ============  =========  ==============
noncons            1 shared      1/locale   no
cons-agnostic      1 shared      1 shared   no
cons-aware         1 shared      1 shared   yes
disjoint           1/locale      1/locale   no
=================  ============  =========  ==============
"""
from __future__ import annotations

import copy
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from . import _accel
from .core import Dataset, LocaleId, Registry
from .encoder import Encoder, EncoderConfig, Parameter, init_value
from .tokenizer import TokenizerSettings, pad_batch, tokenize

log = logging.getLogger(__name__)

_SCORE_LO = np.nextafter(0.0, 1.0)
_SCORE_HI = np.nextafter(1.0, 0.0)


class VariantKind(str, Enum):
    NON_UNIFIED = "noncons"
    UNIFIED_AGNOSTIC = "cons-agnostic"
    UNIFIED_AWARE = "cons-aware"
    DISJOINT = "disjoint"

    @property
    def per_locale_heads(self) -> bool:
        return self in (VariantKind.NON_UNIFIED, VariantKind.DISJOINT)

    @property
    def per_locale_encoders(self) -> bool:
        return self is VariantKind.DISJOINT

    @property
    def uses_locale_token(self) -> bool:
        return self is VariantKind.UNIFIED_AWARE


class UnknownLocaleError(KeyError):
    pass


class UnknownLocaleWarning(UserWarning):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 8e-5
    dropout: float = 0.001
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    sort_pool: int = 32  # batches per length-sorted pool; 1 disables bucketing

    def __post_init__(self):
        if (self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1
                or self.sort_pool < 1):
            raise ValueError("learning_rate, batch_size, max_epochs, patience and sort_pool must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0 and self.epsilon > 0):
            raise ValueError("adam betas must be in (0, 1) and epsilon positive")


class ClassifierHead:
    def __init__(self, d_model: int, n_pts: int, rng):
        self.params = {
            "weight": Parameter(init_value("weight", (d_model, n_pts), rng)),
            "bias": Parameter(np.zeros(n_pts)),
        }

    @property
    def weight(self):
        return self.params["weight"].value

    @property
    def bias(self):
        return self.params["bias"].value


@dataclass
class ModelBundle:
    variant: VariantKind
    encoder_cfg: EncoderConfig
    locales: Registry
    pts: Registry
    encoders: list
    heads: list
    metadata: dict = field(default_factory=dict)

    @property
    def tokenizer(self) -> TokenizerSettings:
        return TokenizerSettings(len(self.locales), self.encoder_cfg.n_buckets, self.encoder_cfg.max_len)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        """All parameters in the fixed serialization order."""
        out = []
        for i, enc in enumerate(self.encoders):
            out += [(f"encoder{i}.{n}", p) for n, p in enc.params.items()]
        for i, head in enumerate(self.heads):
            out += [(f"head{i}.{n}", p) for n, p in head.params.items()]
        return out

    def n_parameters(self) -> int:
        return sum(p.value.size for _, p in self.named_parameters())

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def locale_index(self, locale) -> int | None:
        code = locale.code if isinstance(locale, LocaleId) else locale
        found = self.locales.get(code)
        return None if found is None else found.index


def create_bundle(variant, locales: Registry, pts: Registry, encoder_cfg: EncoderConfig,
                  seed: int = 0) -> ModelBundle:
    """Fresh bundle; encoders are initialized before heads from one seeded stream."""
    variant = VariantKind(variant)
    locales.freeze()
    pts.freeze()
    rng = np.random.Generator(np.random.PCG64(seed))
    vocab = TokenizerSettings(len(locales), encoder_cfg.n_buckets, encoder_cfg.max_len).vocab_total
    n_enc = len(locales) if variant.per_locale_encoders else 1
    n_head = len(locales) if variant.per_locale_heads else 1
    encoders = [Encoder(encoder_cfg, vocab, rng) for _ in range(n_enc)]
    heads = [ClassifierHead(encoder_cfg.d_model, len(pts), rng) for _ in range(n_head)]
    return ModelBundle(variant, encoder_cfg, locales, pts, encoders, heads, {"seed": seed})


# ---------------------------------------------------------------- inputs


def encode_inputs(bundle: ModelBundle, queries, locales) -> tuple[list, np.ndarray, np.ndarray]:
    """Token sequences, locale indices (-1 = unknown) and a known-locale mask."""
    settings = bundle.tokenizer
    variant = bundle.variant
    seqs, loc_idx = [], []
    for q, loc in zip(queries, locales):
        idx = bundle.locale_index(loc) if loc is not None else None
        if idx is None and variant.per_locale_heads:
            raise UnknownLocaleError(f"no head for locale {loc!r}")
        seqs.append(tokenize(q, idx, settings, with_locale=variant.uses_locale_token))
        loc_idx.append(-1 if idx is None else idx)
    loc_idx = np.asarray(loc_idx, dtype=np.int64)
    known = loc_idx >= 0
    if variant.uses_locale_token and not known.all():
        warnings.warn("unknown locale mapped to UNK_LOCALE token", UnknownLocaleWarning, stacklevel=3)
    return seqs, loc_idx, known


def _groups(route: np.ndarray):
    """(route value, row selector) pairs; a single route selects everything."""
    values = np.unique(route)
    if len(values) == 1:
        return [(int(values[0]), slice(None))]
    return [(int(v), np.flatnonzero(route == v)) for v in values]


def _routes(bundle, loc_idx):
    zero = np.zeros_like(loc_idx)
    enc = loc_idx if bundle.variant.per_locale_encoders else zero
    head = loc_idx if bundle.variant.per_locale_heads else zero
    return enc, head


def forward_logits(bundle: ModelBundle, ids: np.ndarray, loc_idx: np.ndarray, train_mode=False, rng=None,
                   keep_cache=None):
    enc_route, head_route = _routes(bundle, loc_idx)
    B = ids.shape[0]
    pooled = np.empty((B, bundle.encoder_cfg.d_model))
    for e, rows in _groups(enc_route):
        pooled[rows] = bundle.encoders[e].forward(ids[rows], train_mode, rng, keep_cache)
    logits = np.empty((B, len(bundle.pts)))
    for h, rows in _groups(head_route):
        head = bundle.heads[h]
        logits[rows] = pooled[rows] @ head.weight + head.bias
    return pooled, logits


def backward_logits(bundle: ModelBundle, pooled, dlogits, loc_idx):
    enc_route, head_route = _routes(bundle, loc_idx)
    dpooled = np.empty_like(pooled)
    for h, rows in _groups(head_route):
        head = bundle.heads[h]
        head.params["weight"].grad += pooled[rows].T @ dlogits[rows]
        head.params["bias"].grad += dlogits[rows].sum(0)
        dpooled[rows] = dlogits[rows] @ head.weight.T
    for e, rows in _groups(enc_route):
        bundle.encoders[e].backward(dpooled[rows])


def bce_with_logits(z, y):
    """Mean binary cross-entropy over all elements and its gradient wrt ``z``."""
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss.mean(), (expit(z) - y) / z.size


def forward_scores(bundle: ModelBundle, queries, locales, train_mode=False, rng=None, batch_size=512) -> np.ndarray:
    """Sigmoid probabilities, shape (len(queries), n_pts), strictly inside (0, 1)."""
    seqs, loc_idx, _ = encode_inputs(bundle, queries, locales)
    return scores_from_tokens(bundle, seqs, loc_idx, train_mode, rng, batch_size)


def scores_from_tokens(bundle, seqs, loc_idx, train_mode=False, rng=None, batch_size=512):
    out = np.empty((len(seqs), len(bundle.pts)))
    for s in range(0, len(seqs), batch_size):
        ids = pad_batch(seqs[s:s + batch_size])
        _, z = forward_logits(bundle, ids, loc_idx[s:s + batch_size], train_mode, rng, keep_cache=False)
        out[s:s + batch_size] = np.clip(expit(z), _SCORE_LO, _SCORE_HI)
    return out


def predict(bundle: ModelBundle, query: str, locale, threshold: float) -> list[tuple]:
    """(product type, score) pairs with score >= threshold, best first; empty = refrain."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    scores = forward_scores(bundle, [query], [locale])[0]
    keep = np.flatnonzero(scores >= threshold)
    order = keep[np.lexsort((keep, -scores[keep]))]
    return [(bundle.pts[int(i)], float(scores[i])) for i in order]


# ---------------------------------------------------------------- training


class Adam:
    def __init__(self, params: list[Parameter], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            _accel.adam_update(p.value, p.grad, m, v, self.lr, self.beta1, self.beta2, self.eps, c1, c2)


@dataclass
class _Prepared:
    seqs: list
    loc_idx: np.ndarray
    labels: list  # list of PT index arrays


def _prepare(bundle: ModelBundle, ds: Dataset) -> _Prepared:
    labels = []
    for ex in ds.examples:
        idx = []
        for pt in ex.labels:
            found = bundle.pts.get(pt.name)
            if found is None:
                raise ValueError(f"label {pt.name!r} not in the model's product-type registry")
            idx.append(found.index)
        labels.append(np.asarray(idx, dtype=np.int64))
    if bundle.variant.uses_locale_token or bundle.variant.per_locale_heads:
        for ex in ds.examples:
            if bundle.locales.get(ex.locale.code) is None:
                raise UnknownLocaleError(f"training locale {ex.locale.code!r} not in the model registry")
    seqs, loc_idx, _ = encode_inputs(bundle, [e.query for e in ds.examples], [e.locale.code for e in ds.examples])
    return _Prepared(seqs, loc_idx, labels)


def _multi_hot(labels, n_pts):
    y = np.zeros((len(labels), n_pts))
    for i, lab in enumerate(labels):
        y[i, lab] = 1.0
    return y


def dataset_loss(bundle: ModelBundle, data: _Prepared | Dataset, batch_size=512) -> float:
    if isinstance(data, Dataset):
        data = _prepare(bundle, data)
    total, n = 0.0, 0
    P = len(bundle.pts)
    for s in range(0, len(data.seqs), batch_size):
        ids = pad_batch(data.seqs[s:s + batch_size])
        _, z = forward_logits(bundle, ids, data.loc_idx[s:s + batch_size], keep_cache=False)
        loss, _ = bce_with_logits(z, _multi_hot(data.labels[s:s + batch_size], P))
        total += loss * z.size
        n += z.size
    return total / n


def _epoch_batches(perm, lengths, batch_size, pool, rng):
    """Split a shuffled order into batches of similar length to cut padding."""
    if pool == 1:
        return [perm[s:s + batch_size] for s in range(0, len(perm), batch_size)]
    batches = []
    span = batch_size * pool
    for s in range(0, len(perm), span):
        chunk = perm[s:s + span]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        group = [chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size)]
        batches += [group[i] for i in rng.permutation(len(group))]
    return batches


def _snapshot(bundle):
    return [p.value.copy() for _, p in bundle.named_parameters()]


def _restore(bundle, values):
    for (_, p), v in zip(bundle.named_parameters(), values):
        p.value[...] = v


def train(bundle: ModelBundle, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, progress=None):
    """Mini-batch Adam on mean BCE; returns (bundle, history) with the best-validation parameters."""
    if not len(train_ds) or not len(val_ds):
        raise ValueError("train and validation datasets must be non-empty")
    enc_cfg = replace(bundle.encoder_cfg, dropout_rate=cfg.dropout)
    bundle.encoder_cfg = enc_cfg
    for enc in bundle.encoders:
        enc.cfg = enc_cfg
    tr = _prepare(bundle, train_ds)
    va = _prepare(bundle, val_ds)
    P = len(bundle.pts)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(seeds[0]))
    drop_rng = np.random.Generator(np.random.PCG64(seeds[1]))
    opt = Adam([p for _, p in bundle.named_parameters()], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    history = []
    best_val, best_state, best_epoch, bad = math.inf, _snapshot(bundle), 0, 0
    n = len(tr.seqs)
    lengths = np.asarray([len(q) for q in tr.seqs])
    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for rows in _epoch_batches(perm, lengths, cfg.batch_size, cfg.sort_pool, shuffle_rng):
            ids = pad_batch([tr.seqs[i] for i in rows])
            loc = tr.loc_idx[rows]
            y = _multi_hot([tr.labels[i] for i in rows], P)
            bundle.zero_grad()
            pooled, z = forward_logits(bundle, ids, loc, train_mode=True, rng=drop_rng)
            loss, dz = bce_with_logits(z, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; lower the learning rate (now {cfg.learning_rate:g})")
            backward_logits(bundle, pooled, dz, loc)
            opt.step()
            total += loss * len(rows)
        val_loss = dataset_loss(bundle, va)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}; lower the learning rate")
        history.append({"epoch": epoch, "train_loss": total / n, "val_loss": val_loss})
        if progress:
            progress(f"[{bundle.variant.value}] epoch {epoch} train {total / n:.5f} val {val_loss:.5f}")
        if val_loss < best_val:
            best_val, best_state, best_epoch, bad = val_loss, _snapshot(bundle), epoch, 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    _restore(bundle, best_state)
    bundle.metadata.update({
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "final_val_loss": best_val,
        "train_config": asdict(cfg),
    })
    return bundle, history


def clone(bundle: ModelBundle) -> ModelBundle:
    return copy.deepcopy(bundle)
