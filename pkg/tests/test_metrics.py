import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from localeq.metrics import (MetricError, UndefinedCorrelation, head_torso_tail, pearson, per_pt_accuracy_from_scores,
                             pr_sweep, recall_at_precision)


def brute_sweep(scores, gold):
    rows = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, g in zip(scores, gold) if s >= t and g)
        fp = sum(1 for s, g in zip(scores, gold) if s >= t and not g)
        fn = sum(1 for s, g in zip(scores, gold) if s < t and g)
        rows.append((t, tp, fp, fn))
    return rows


def brute_rap(scores, gold, target):
    best = None
    for t, tp, fp, fn in brute_sweep(scores, gold):
        prec = tp / (tp + fp) if tp + fp else 1.0
        rec = tp / (tp + fn)
        if prec >= target and (best is None or rec > best[0]):
            best = (rec, t)
    return best


def random_instance(rng):
    n = int(rng.integers(1, 501))
    # coarse grid forces many ties
    scores = (rng.integers(0, int(rng.integers(2, 60)), size=n) / 59.0).tolist()
    gold = (rng.random(n) < rng.uniform(0.05, 0.9)).tolist()
    if not any(gold):
        gold[0] = True
    return scores, gold


def test_sweep_and_recall_match_brute_force_on_100_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        scores, gold = random_instance(rng)
        curve = pr_sweep(scores, gold)
        got = list(zip(curve.thresholds.tolist(), curve.tp.tolist(), curve.fp.tolist(), curve.fn.tolist()))
        assert got == brute_sweep(scores, gold)
        target = float(rng.choice([0.5, 0.8, 0.95]))
        op = recall_at_precision(curve, target)
        ref = brute_rap(scores, gold, target)
        if ref is None:
            assert not op.attainable and op.recall == 0.0 and op.threshold == math.inf
        else:
            assert (op.recall, op.threshold) == ref


def test_sweep_hand_example():
    curve = pr_sweep([0.9, 0.8, 0.8, 0.3], [True, False, True, True])
    assert curve.thresholds.tolist() == [0.9, 0.8, 0.3]
    assert curve.precision.tolist() == [1.0, 2 / 3, 0.75]
    assert curve.recall.tolist() == [1 / 3, 2 / 3, 1.0]
    op = recall_at_precision(curve, 0.7)
    assert (op.recall, op.threshold) == (1.0, 0.3)


def test_sweep_errors():
    with pytest.raises(MetricError):
        pr_sweep([0.1, 0.2], [False, False])
    with pytest.raises(MetricError):
        pr_sweep([0.1], [True, False])


def two_pass_pearson(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    dx, dy = x - x.mean(), y - y.mean()
    return float((dx * dy).sum() / math.sqrt((dx * dx).sum() * (dy * dy).sum()))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 1000).map(lambda k: k / 1000)), min_size=2, max_size=60))
def test_pearson_matches_two_pass(pairs):
    xs, ys = zip(*pairs)
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        with pytest.raises(UndefinedCorrelation):
            pearson(xs, ys)
        return
    ref = two_pass_pearson(xs, ys)
    r = pearson(xs, ys)
    assert -1.0 <= r <= 1.0
    assert r == pytest.approx(ref, abs=1e-9)


def test_pearson_exact_line():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_head_torso_tail_partition_and_rule():
    mass = {"a": 50, "b": 20, "c": 15, "d": 10, "e": 5, "z": 0}
    b = head_torso_tail(mass)
    # cumulative mass before each PT: a 0, b .5, c .7, d .85, e .95
    assert (b.head, b.torso, b.tail) == (["a"], ["b"], ["c", "d", "e"])
    assert b.masses == pytest.approx((0.5, 0.2, 0.3))
    assert set(b.bucket_of()) == {"a", "b", "c", "d", "e"}


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.integers(1, 1000), min_size=1, max_size=50))
def test_head_torso_tail_is_a_partition(mass):
    b = head_torso_tail(mass)
    names = b.head + b.torso + b.tail
    assert sorted(names) == sorted(mass) and len(set(names)) == len(names)
    assert sum(b.masses) == pytest.approx(1.0)


def test_per_pt_accuracy():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    gold = np.array([[1, 0, 0], [1, 0, 0], [0, 1, 1]], dtype=bool)
    assert per_pt_accuracy_from_scores(scores, gold) == {0: (2, 0.5), 1: (1, 0.0), 2: (1, 0.0)}
