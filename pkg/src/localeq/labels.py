"""Weak labels from aggregated click logs.

The click share of product type ``p`` for query ``q`` is the fraction of
the query's clicks that landed on items of ``p``. A query is kept only when
one product type strictly exceeds the threshold share.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .core import Dataset, LabeledExample, LocaleId, Provenance, ProductTypeId, Split


class NoTrainableLabels(ValueError):
    pass


@dataclass(frozen=True)
class ClickAggregate:
    locale: LocaleId
    query: str
    per_pt_clicks: dict  # ProductTypeId -> int
    total_clicks: int

    def probabilities(self) -> list[tuple[ProductTypeId, float]]:
        return [(pt, c / self.total_clicks) for pt, c in sorted(self.per_pt_clicks.items())]

    def dominant(self) -> tuple[ProductTypeId, int]:
        """Most-clicked PT (lowest index on ties) and its click count."""
        pt = min(self.per_pt_clicks, key=lambda p: (-self.per_pt_clicks[p], p.index))
        return pt, self.per_pt_clicks[pt]


def aggregate(clicklog) -> list[ClickAggregate]:
    """One aggregate per (locale, query) with at least one click, sorted by key."""
    acc: dict[tuple, dict] = {}
    for rec in clicklog:
        if rec.clicks == 0:
            continue
        per_pt = acc.setdefault((rec.locale, rec.query), {})
        per_pt[rec.item.pt] = per_pt.get(rec.item.pt, 0) + rec.clicks
    out = []
    for (locale, query), per_pt in sorted(acc.items(), key=lambda kv: (kv[0][0].index, kv[0][1])):
        out.append(ClickAggregate(locale, query, per_pt, sum(per_pt.values())))
    return out


def _as_fraction(threshold) -> Fraction:
    return threshold if isinstance(threshold, Fraction) else Fraction(str(threshold))


def derive(agg: ClickAggregate, threshold=0.5) -> LabeledExample | None:
    # Exact rational comparison: clicks / total > t  <=>  clicks * den > num * total.
    t = _as_fraction(threshold)
    if not Fraction(1, 2) <= t < 1:
        raise ValueError(f"threshold must be in [0.5, 1), got {threshold}")
    pt, clicks = agg.dominant()
    if clicks * t.denominator > t.numerator * agg.total_clicks:
        return LabeledExample(agg.locale, agg.query, (pt,))
    return None


def derive_all(clicklog, threshold=0.5, min_total_clicks: int = 1, split=Split.TRAIN) -> Dataset:
    examples = []
    for agg in aggregate(clicklog):
        if agg.total_clicks < min_total_clicks:
            continue
        ex = derive(agg, threshold)
        if ex is not None:
            examples.append(ex)
    if not examples:
        raise NoTrainableLabels("no trainable labels: no query has a product type above the threshold")
    examples.sort(key=lambda e: (e.locale.index, e.query))
    return Dataset(examples, split, Provenance.DERIVED)


def pt_mass(clicklog, n_pts: int) -> list[int]:
    """Total clicks per product type (query mass proxy), indexed by PT."""
    mass = [0] * n_pts
    for rec in clicklog:
        mass[rec.item.pt.index] += rec.clicks
    return mass
