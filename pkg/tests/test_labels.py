from collections import defaultdict
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from localeq.core import Catalog, ClickRecord, locale_registry, pt_registry
from localeq.labels import NoTrainableLabels, aggregate, derive, derive_all, pt_mass


def _log(spec):
    """spec: list of (locale, query, pt, clicks)."""
    cat = Catalog(locale_registry(), pt_registry())
    recs = []
    for loc, q, pt, c in spec:
        p = cat.pts.add(pt)
        item = cat.add_item(p.index, p)
        recs.append(ClickRecord(cat.locales.add(loc), q, item, c, 0))
    return recs


def test_sleep_mask_share():
    (agg,) = aggregate(_log([("CA", "mask", "SLEEPING_MASK", 8), ("CA", "mask", "SAFETY_MASK", 2)]))
    assert dict((p.name, v) for p, v in agg.probabilities()) == {"SLEEPING_MASK": 0.8, "SAFETY_MASK": 0.2}
    ex = derive(agg)
    assert [p.name for p in ex.labels] == ["SLEEPING_MASK"]


def test_exact_half_yields_no_label():
    (agg,) = aggregate(_log([("US", "q", "A", 5), ("US", "q", "B", 5)]))
    assert derive(agg) is None


def test_just_above_half():
    (agg,) = aggregate(_log([("US", "q", "A", 501), ("US", "q", "B", 499)]))
    assert derive(agg).labels[0].name == "A"


def test_threshold_bounds():
    (agg,) = aggregate(_log([("US", "q", "A", 3)]))
    for bad in (0.4, 1.0):
        with pytest.raises(ValueError):
            derive(agg, bad)
    assert derive(agg, Fraction(2, 3)) is not None


def test_zero_click_rows_ignored_and_no_labels_error():
    recs = _log([("US", "q", "A", 0), ("US", "r", "A", 1), ("US", "r", "B", 1)])
    assert [a.query for a in aggregate(recs)] == ["r"]
    with pytest.raises(NoTrainableLabels):
        derive_all(recs)


def test_min_total_clicks():
    recs = _log([("US", "a", "A", 1), ("US", "b", "A", 4)])
    assert [e.query for e in derive_all(recs, min_total_clicks=2)] == ["b"]


def test_pt_mass():
    recs = _log([("US", "a", "A", 2), ("DE", "b", "B", 3), ("DE", "a", "A", 1)])
    assert pt_mass(recs, 2) == [3, 3]


rows = st.lists(st.tuples(st.sampled_from(["US", "DE", "JP"]), st.sampled_from(["q1", "q2", "q3"]),
                          st.sampled_from(["A", "B", "C", "D"]), st.integers(0, 30)), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(rows)
def test_derivation_matches_reaggregation(spec):
    recs = _log(spec)
    totals = defaultdict(lambda: defaultdict(int))
    for loc, q, pt, c in spec:
        totals[(loc, q)][pt] += c
    expected = {}
    for key, per in totals.items():
        n = sum(per.values())
        if n == 0:
            continue
        best = max(per.values())
        winners = [p for p, c in per.items() if c == best]
        if 2 * best > n:
            expected[key] = winners[0]
    got = {}
    for agg in aggregate(recs):
        assert abs(sum(v for _, v in agg.probabilities()) - 1.0) <= 1e-12
        ex = derive(agg)
        if ex is not None:
            assert len(ex.labels) == 1
            got[(agg.locale.code, agg.query)] = ex.labels[0].name
    assert got == expected
