"""How the same query's click distribution differs between two locales.

Distances use the earth mover's distance with a 0/1 ground metric between
product types, which reduces to half the L1 distance. Disagreements are
sorted into similar, noisy (count-level uncertainty) and dialectal-or-selection,
with selection singled out when one side's dominant product type gets no
clicks at all in the other locale.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import Registry, write_csv


class EmptyIntersection(ValueError):
    pass


class Category(str, Enum):
    SIMILAR = "similar"
    NOISY = "noisy"
    DIALECTAL_OR_SELECTION = "dialectal-or-selection"
    SELECTION = "selection"


@dataclass(frozen=True)
class PTDistribution:
    probs: np.ndarray
    pts: Registry
    total_clicks: int = 0
    counts: np.ndarray | None = None  # integer clicks when built from a log

    def __post_init__(self):
        if self.probs.shape != (len(self.pts),):
            raise ValueError("distribution length must match the product-type registry")
        if (self.probs < 0).any() or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("a distribution needs non-negative entries summing to 1")

    @classmethod
    def from_counts(cls, counts, pts: Registry) -> "PTDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total <= 0:
            raise ValueError("no clicks")
        return cls(counts / total, pts, total, counts)

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.probs))


@dataclass(frozen=True)
class EMDRecord:
    query: str
    locale_a: str
    locale_b: str
    emd: float
    clicks_a: int
    clicks_b: int


class ClickIndex:
    """Per-(locale, query) PT click counts plus per-locale PT totals."""

    def __init__(self, clicklog, pts: Registry):
        self.pts = pts
        self.by_key: dict[tuple[str, str], Counter] = {}
        self.locale_totals: dict[str, Counter] = {}
        for rec in clicklog:
            if rec.clicks == 0:
                continue
            code = rec.locale.code
            self.by_key.setdefault((code, rec.query), Counter())[rec.item.pt.index] += rec.clicks
            self.locale_totals.setdefault(code, Counter())[rec.item.pt.index] += rec.clicks

    def locales(self) -> set[str]:
        return set(self.locale_totals)

    def queries(self, locale: str) -> set[str]:
        return {q for (code, q) in self.by_key if code == locale}

    def counts(self, locale: str, query: str) -> Counter | None:
        return self.by_key.get((locale, query))

    def distribution(self, locale: str, query: str) -> PTDistribution | None:
        c = self.by_key.get((locale, query))
        if not c:
            return None
        vec = np.zeros(len(self.pts), dtype=np.int64)
        for i, n in c.items():
            vec[i] = n
        return PTDistribution.from_counts(vec, self.pts)


def _code(locale) -> str:
    return getattr(locale, "code", locale)


def _as_index(clicklog, pts) -> ClickIndex:
    if isinstance(clicklog, ClickIndex):
        return clicklog
    if pts is None:
        raise ValueError("a product-type registry is needed to index a raw click log")
    return ClickIndex(clicklog, pts)


def pt_distribution(clicklog, locale, query: str, pts: Registry | None = None) -> PTDistribution | None:
    """Normalized per-PT clicks of ``query`` in ``locale``; None when it has no clicks."""
    return _as_index(clicklog, pts).distribution(_code(locale), query)


def emd_unit(p: PTDistribution, q: PTDistribution) -> float:
    """Transport cost with ground distance 1 between distinct PTs (half the L1 distance)."""
    if p.pts is not q.pts and p.pts != q.pts:
        raise ValueError("distributions are over different product-type registries")
    if p.counts is not None and q.counts is not None:
        # exact rational value, rounded once
        na, nb = p.total_clicks, q.total_clicks
        nz = np.flatnonzero((p.counts > 0) | (q.counts > 0))
        num = sum(abs(int(p.counts[i]) * nb - int(q.counts[i]) * na) for i in nz.tolist())
        return num / (2 * na * nb)
    return 0.5 * math.fsum(np.abs(p.probs - q.probs).tolist())


@dataclass
class PairDivergence:
    records: list
    bin_edges: np.ndarray
    density: np.ndarray


def pair_divergence(clicklog, locale_a, locale_b, min_clicks: int = 5, n_bins: int = 19,
                    pts: Registry | None = None) -> PairDivergence:
    """EMD for every query seen with at least ``min_clicks`` clicks in both locales."""
    index = _as_index(clicklog, pts)
    a, b = _code(locale_a), _code(locale_b)
    for code in (a, b):
        if code not in index.locales():
            raise ValueError(f"locale {code!r} has no clicks in the log")
    records = []
    for query in sorted(index.queries(a) & index.queries(b)):
        pa, pb = index.distribution(a, query), index.distribution(b, query)
        if pa.total_clicks < min_clicks or pb.total_clicks < min_clicks:
            continue
        records.append(EMDRecord(query, a, b, emd_unit(pa, pb), pa.total_clicks, pb.total_clicks))
    if not records:
        raise EmptyIntersection(f"no shared queries with >= {min_clicks} clicks in both {a} and {b}")
    density, edges = np.histogram([r.emd for r in records], bins=n_bins, range=(0.0, 1.0), density=True)
    return PairDivergence(records, edges, density)


def two_proportion_pvalue(x1: int, n1: int, x2: int, n2: int) -> float:
    """Two-sided pooled z-test for equal proportions."""
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return 1.0
    z = (x1 / n1 - x2 / n2) / se
    return math.erfc(abs(z) / math.sqrt(2.0))


def _dominant(counts: Counter) -> int:
    return min(counts, key=lambda i: (-counts[i], i))


def categorize(record: EMDRecord, clicklog, low: float = 0.1, alpha: float = 0.01,
               pts: Registry | None = None) -> Category:
    if record.emd < low:
        return Category.SIMILAR
    index = _as_index(clicklog, pts)
    ca = index.counts(record.locale_a, record.query)
    cb = index.counts(record.locale_b, record.query)
    na, nb = sum(ca.values()), sum(cb.values())
    dom = _dominant(ca + cb)
    if two_proportion_pvalue(ca[dom], na, cb[dom], nb) >= alpha:
        return Category.NOISY
    tot_a = index.locale_totals.get(record.locale_a, Counter())
    tot_b = index.locale_totals.get(record.locale_b, Counter())
    if tot_b[_dominant(ca)] == 0 or tot_a[_dominant(cb)] == 0:
        return Category.SELECTION
    return Category.DIALECTAL_OR_SELECTION


def write_emd_csvs(result: PairDivergence, categories, out_dir):
    out = Path(out_dir)
    write_csv(out / "emd_records.csv", ["query", "locale_a", "locale_b", "emd", "clicks_a", "clicks_b", "category"],
              ([r.query, r.locale_a, r.locale_b, repr(r.emd), r.clicks_a, r.clicks_b, c.value]
               for r, c in zip(result.records, categories)))
    write_csv(out / "emd_hist.csv", ["bin_lo", "bin_hi", "density"],
              ([repr(float(lo)), repr(float(hi)), repr(float(d))]
               for lo, hi, d in zip(result.bin_edges[:-1], result.bin_edges[1:], result.density)))
