import warnings

import numpy as np
import pytest

from localeq.core import Dataset, LabeledExample, Provenance, Split, locale_registry, pt_registry
from localeq.encoder import EncoderConfig
from localeq.models import (TrainConfig, UnknownLocaleError, UnknownLocaleWarning, VariantKind, bce_with_logits, clone,
                            create_bundle, dataset_loss, forward_scores, predict, train)

CFG = EncoderConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, max_len=12, n_buckets=256, dropout_rate=0.0)


def expected_count(variant, L, P, cfg=CFG):
    d, f = cfg.d_model, cfg.d_ff
    vocab = 4 + L + cfg.n_buckets
    layer = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
    enc = vocab * d + cfg.max_len * d + cfg.n_layers * layer + 2 * d
    head = d * P + P
    n_enc = L if variant == "disjoint" else 1
    n_head = L if variant in ("noncons", "disjoint") else 1
    return n_enc * enc + n_head * head


def _regs(L=3, P=4):
    return locale_registry(f"L{i}" for i in range(L)), pt_registry(f"P{i}" for i in range(P))


@pytest.mark.parametrize("variant", [v.value for v in VariantKind])
def test_parameter_count(variant):
    locs, pts = _regs()
    assert create_bundle(variant, locs, pts, CFG).n_parameters() == expected_count(variant, 3, 4)


def test_creation_is_seeded():
    a = create_bundle("cons-aware", *_regs(), CFG, seed=5)
    b = create_bundle("cons-aware", *_regs(), CFG, seed=5)
    c = create_bundle("cons-aware", *_regs(), CFG, seed=6)
    for (_, p), (_, q), (_, r) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(p.value, q.value)
    assert any(not np.array_equal(p.value, r.value) for (_, p), (_, r) in zip(a.named_parameters(),
                                                                             c.named_parameters()))


def test_unknown_locale_behaviour():
    locs, pts = _regs()
    with pytest.raises(UnknownLocaleError):
        forward_scores(create_bundle("noncons", locs, pts, CFG), ["mug"], ["ZZ"])
    agnostic = create_bundle("cons-agnostic", *_regs(), CFG)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s_unknown = forward_scores(agnostic, ["mug"], ["ZZ"])
    np.testing.assert_array_equal(s_unknown, forward_scores(agnostic, ["mug"], ["L0"]))
    aware = create_bundle("cons-aware", *_regs(), CFG)
    with pytest.warns(UnknownLocaleWarning):
        s = forward_scores(aware, ["mug"], ["ZZ"])
    assert s.shape == (1, 4) and ((s > 0) & (s < 1)).all()


def test_aware_scores_depend_on_locale():
    aware = create_bundle("cons-aware", *_regs(), CFG, seed=2)
    s = forward_scores(aware, ["mug", "mug"], ["L0", "L1"])
    assert not np.array_equal(s[0], s[1])


def test_bce_matches_direct_formula(rng):
    z = rng.normal(size=(4, 3)) * 5
    y = (rng.random((4, 3)) < 0.5).astype(float)
    p = 1 / (1 + np.exp(-z))
    loss, grad = bce_with_logits(z, y)
    assert loss == pytest.approx(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean(), rel=1e-12)
    np.testing.assert_allclose(grad, (p - y) / z.size, rtol=1e-12)
    big, _ = bce_with_logits(np.array([[800.0, -800.0]]), np.array([[1.0, 0.0]]))
    assert big == 0.0


def test_predict_orders_and_refrains():
    b = create_bundle("cons-agnostic", *_regs(), CFG, seed=1)
    b.heads[0].params["bias"].value[:] = [3.0, -3.0, 1.0, 1.0]
    hits = predict(b, "anything", "L0", 0.5)
    assert [pt.name for pt, _ in hits][:1] == ["P0"]
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)
    assert predict(b, "anything", "L0", 1.0) == []
    with pytest.raises(ValueError):
        predict(b, "x", "L0", 1.5)


def _toy(locs, pts, n=12, seed=0):
    rng = np.random.default_rng(seed)
    words = ["mug", "shirt", "pants", "lamp"]
    ex = []
    for i in range(n):
        k = int(rng.integers(4))
        ex.append(LabeledExample(locs[int(rng.integers(len(locs)))], f"{words[k]} {i}", (pts[k],)))
    return Dataset(ex, Split.TRAIN, Provenance.DERIVED)


@pytest.mark.parametrize("variant", ["noncons", "cons-agnostic", "cons-aware"])
def test_training_reduces_loss_and_is_deterministic(variant):
    locs, pts = _regs()
    ds = _toy(locs, pts)
    tc = TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=30, patience=30, dropout=0.1, seed=3)
    runs = []
    for _ in range(2):
        b = create_bundle(variant, locs, pts, CFG, seed=1)
        before = dataset_loss(b, ds)
        b, hist = train(b, ds, ds, tc)
        runs.append((b, hist))
        assert dataset_loss(b, ds) < before / 3
    (b1, h1), (b2, h2) = runs
    assert h1 == h2
    for (_, p), (_, q) in zip(b1.named_parameters(), b2.named_parameters()):
        np.testing.assert_array_equal(p.value, q.value)


def test_early_stopping_restores_best():
    locs, pts = _regs()
    tr = _toy(locs, pts, seed=0)
    # validation labels contradict training, so validation loss rises once fitting starts
    va = Dataset([LabeledExample(e.locale, e.query, (pts[(e.labels[0].index + 1) % 4],)) for e in tr],
                 Split.VALIDATION, Provenance.SYNTHETIC_GOLD)
    b = create_bundle("cons-agnostic", locs, pts, CFG, seed=1)
    b, hist = train(b, tr, va, TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=40, patience=2, seed=0))
    vals = [h["val_loss"] for h in hist]
    assert len(hist) < 40
    best = int(np.argmin(vals))
    assert len(hist) == best + 1 + 2
    assert b.metadata["best_epoch"] == best + 1
    assert dataset_loss(b, va) == pytest.approx(vals[best], rel=1e-12)


def test_train_rejects_bad_input():
    locs, pts = _regs()
    b = create_bundle("noncons", locs, pts, CFG)
    with pytest.raises(ValueError):
        train(b, Dataset([], Split.TRAIN, Provenance.DERIVED), _toy(locs, pts), TrainConfig())
    other = locale_registry(["QQ"])
    bad = Dataset([LabeledExample(other["QQ"], "mug", (pts[0],))], Split.TRAIN, Provenance.DERIVED)
    with pytest.raises(UnknownLocaleError):
        train(b, bad, bad, TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)


def test_clone_is_independent():
    b = create_bundle("cons-aware", *_regs(), CFG)
    c = clone(b)
    c.heads[0].params["bias"].value += 1
    assert not np.array_equal(b.heads[0].bias, c.heads[0].bias)


def test_single_locale_noncons_equals_agnostic():
    locs, pts = _regs(L=1)
    ds = _toy(locs, pts)
    tc = TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=5, patience=5, seed=2)
    out = []
    for v in ("noncons", "cons-agnostic"):
        b = create_bundle(v, *_regs(L=1), CFG, seed=9)
        out.append(train(b, ds, ds, tc))
    (b1, h1), (b2, h2) = out
    assert h1 == h2
    for (_, p), (_, q) in zip(b1.named_parameters(), b2.named_parameters()):
        np.testing.assert_array_equal(p.value, q.value)
