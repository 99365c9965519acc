import numpy as np
import pytest

from localeq.encoder import Encoder, EncoderConfig, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax
from localeq.gradcheck import TINY, grad_check, relative_error
from localeq.models import VariantKind
from localeq.tokenizer import PAD


@pytest.mark.parametrize("variant", list(VariantKind))
def test_grad_check_all_variants(variant):
    report = grad_check(variant=variant)
    assert report and max(report.values()) < 1e-4, report


def test_grad_check_two_layers():
    cfg = EncoderConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_len=6, n_buckets=20, dropout_rate=0.0)
    assert max(grad_check(cfg, seed=3).values()) < 1e-4


def test_grad_check_at_zero_parameters():
    # exercises the relative-error floor where gradients vanish
    assert max(grad_check(zero_params=True).values()) < 1e-4


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)
    assert relative_error(np.array([]), np.array([])) == 0.0


def test_gelu_known_values():
    x = np.array([-1.0, 0.0, 1.0, 2.0])
    # x * Phi(x), Phi from tables
    np.testing.assert_allclose(gelu(x), [-0.15865525393145707, 0.0, 0.8413447460685429, 1.9544997361036416],
                               rtol=1e-12)
    h = 1e-6
    np.testing.assert_allclose(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), rtol=1e-7, atol=1e-9)


def test_layer_norm_and_backward(rng):
    x = rng.normal(size=(3, 5, 6))
    g, b = rng.normal(size=6), rng.normal(size=6)
    y, cache = layer_norm(x, g, b)
    ref = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-12) * g + b
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)
    dy = rng.normal(size=y.shape)
    dx, dg, db = layer_norm_backward(dy, cache)
    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = ((layer_norm(xp, g, b)[0] - layer_norm(xm, g, b)[0]) * dy).sum() / (2 * h)
    np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(db, dy.reshape(-1, 6).sum(0), rtol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    s = softmax(rng.normal(size=(4, 7)) * 50)
    np.testing.assert_allclose(s.sum(-1), 1.0, rtol=1e-14)


def _encoder(seed=0):
    cfg = EncoderConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_len=10, n_buckets=30, dropout_rate=0.0)
    return Encoder(cfg, 40, np.random.default_rng(seed))


def test_padding_does_not_change_output(rng):
    enc = _encoder()
    ids = np.array([[1, 5, 2, 17, 33, 21]])
    padded = np.concatenate([ids, np.full((1, 4), PAD)], axis=1)
    np.testing.assert_array_equal(enc.forward(ids), enc.forward(padded))


def test_batch_rows_are_independent():
    enc = _encoder()
    a = np.array([[1, 5, 2, 17, 33, PAD]])
    b = np.array([[1, 6, 2, 9, 10, 11]])
    both = enc.forward(np.concatenate([a, b]))
    np.testing.assert_allclose(both[0], enc.forward(a)[0], rtol=0, atol=1e-14)
    np.testing.assert_allclose(both[1], enc.forward(b)[0], rtol=0, atol=1e-14)


def test_forward_validates_ids():
    enc = _encoder()
    with pytest.raises(ValueError):
        enc.forward(np.array([[1, 40]]))
    with pytest.raises(ValueError):
        enc.forward(np.ones((1, 11), dtype=np.int64))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        EncoderConfig(activation="relu")
    with pytest.raises(ValueError):
        EncoderConfig(max_len=2)


def test_tiny_config_matches_acceptance_shape():
    assert (TINY.d_model, TINY.n_layers) == (8, 1)
    assert 4 + 2 + TINY.n_buckets == 50
