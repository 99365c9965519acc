"""Precision/recall sweeps, recall at fixed precision, per-PT analyses and reports.

Precision and recall are micro-averaged over (example, product type) pairs.
Bucket and worldwide values pool the pairs of their locales and sweep once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .core import Dataset, write_csv


class MetricError(ValueError):
    pass


class UndefinedCorrelation(MetricError):
    pass


@dataclass
class PRCurve:
    thresholds: np.ndarray  # strictly decreasing
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def precision(self) -> np.ndarray:
        pred = self.tp + self.fp
        return np.where(pred > 0, self.tp / np.maximum(pred, 1), 1.0)

    @property
    def recall(self) -> np.ndarray:
        return self.tp / (self.tp + self.fn)

    @property
    def n_gold(self) -> int:
        return int(self.tp[0] + self.fn[0]) if len(self.tp) else 0

    def points(self):
        """(threshold, precision, recall, tp, fp, fn) tuples, highest threshold first."""
        p, r = self.precision, self.recall
        return [(float(t), float(pi), float(ri), int(a), int(b), int(c))
                for t, pi, ri, a, b, c in zip(self.thresholds, p, r, self.tp, self.fp, self.fn)]


def pr_sweep(scores, is_gold) -> PRCurve:
    """Precision/recall at every distinct score used as an inclusive threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gold = np.asarray(is_gold, dtype=bool).ravel()
    if scores.shape != gold.shape:
        raise MetricError("scores and gold flags differ in length")
    n_gold = int(gold.sum())
    if n_gold == 0:
        raise MetricError("no gold pairs to sweep")
    order = np.argsort(-scores, kind="stable")
    thr, tp, fp = _accel.tie_group_counts(gold[order], scores[order])
    return PRCurve(np.asarray(thr, dtype=np.float64), np.asarray(tp), np.asarray(fp), n_gold - np.asarray(tp))


def pr_sweep_pairs(pairs) -> PRCurve:
    pairs = list(pairs)
    return pr_sweep([s for s, _ in pairs], [g for _, g in pairs])


@dataclass(frozen=True)
class OperatingPoint:
    recall: float
    threshold: float  # inf when unattainable: nothing is predicted
    attainable: bool
    precision: float = float("nan")


def recall_at_precision(curve: PRCurve, target: float = 0.8) -> OperatingPoint:
    """Best recall among curve points with precision >= target.

    Among equally good points the highest threshold wins.
    """
    prec, rec = curve.precision, curve.recall
    ok = np.flatnonzero(prec >= target)
    if len(ok) == 0:
        return OperatingPoint(0.0, math.inf, False)
    best = ok[np.argmax(rec[ok])]  # argmax returns the first (highest-threshold) maximum
    return OperatingPoint(float(rec[best]), float(curve.thresholds[best]), True, float(prec[best]))


# ---------------------------------------------------------------- per-PT


def gold_matrix(examples, n_pts: int, pt_index) -> np.ndarray:
    y = np.zeros((len(examples), n_pts), dtype=bool)
    for i, ex in enumerate(examples):
        for pt in ex.labels:
            y[i, pt_index(pt)] = True
    return y


def per_pt_accuracy_from_scores(scores: np.ndarray, gold: np.ndarray) -> dict[int, tuple[int, float]]:
    """PT index -> (occurrences, accuracy); a row counts for each of its gold PTs.

    The prediction is the argmax; it is correct when it is one of the gold PTs.
    """
    if len(scores) == 0:
        raise MetricError("empty evaluation set")
    pred = np.argmax(scores, axis=1)
    correct = gold[np.arange(len(pred)), pred]
    occ = gold.sum(0)
    hits = (gold & correct[:, None]).sum(0)
    return {int(p): (int(occ[p]), float(hits[p] / occ[p])) for p in np.flatnonzero(occ)}


def per_pt_accuracy(bundle, eval_ds: Dataset) -> dict:
    """Product type -> accuracy of argmax predictions over its gold occurrences."""
    from .models import forward_scores

    if not len(eval_ds):
        raise MetricError("empty evaluation set")
    scores = forward_scores(bundle, [e.query for e in eval_ds], [e.locale.code for e in eval_ds])
    gold = gold_matrix(eval_ds.examples, len(bundle.pts), lambda pt: bundle.pts[pt.name].index)
    return {bundle.pts[p]: acc for p, (_, acc) in per_pt_accuracy_from_scores(scores, gold).items()}


@dataclass
class PTBuckets:
    head: list
    torso: list
    tail: list
    masses: tuple  # fraction of total mass in (head, torso, tail)

    def bucket_of(self) -> dict:
        out = {}
        for name in ("head", "torso", "tail"):
            for pt in getattr(self, name):
                out[pt] = name
        return out


def head_torso_tail(mass: dict) -> PTBuckets:
    """Split PTs by descending mass so each bucket holds about a third of it.

    A PT goes to head while the mass accumulated before it is below 1/3,
    to torso while below 2/3, else to tail. Ties sort by key.
    """
    items = [(k, v) for k, v in mass.items() if v > 0]
    total = float(sum(v for _, v in items))
    if total <= 0:
        raise MetricError("total mass must be positive")
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    buckets = ([], [], [])
    sums = [0.0, 0.0, 0.0]
    before = 0.0
    for k, v in items:
        frac = before / total
        b = 0 if frac < 1 / 3 else (1 if frac < 2 / 3 else 2)
        buckets[b].append(k)
        sums[b] += v
        before += v
    return PTBuckets(*buckets, masses=tuple(s / total for s in sums))


def pearson(xs, ys) -> float:
    """Product-moment correlation via a single Welford pass."""
    if len(xs) != len(ys):
        raise MetricError("xs and ys differ in length")
    if len(xs) < 2:
        raise UndefinedCorrelation("need at least two points")
    n = 0
    mx = my = sxx = syy = sxy = 0.0
    for x, y in zip(xs, ys):
        n += 1
        dx = float(x) - mx
        mx += dx / n
        dy = float(y) - my
        my += dy / n
        sxx += dx * (float(x) - mx)
        syy += dy * (float(y) - my)
        sxy += dx * (float(y) - my)
    if sxx <= 0 or syy <= 0:
        raise UndefinedCorrelation("zero variance: correlation undefined")
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------- report


@dataclass
class EvalReport:
    target_precision: float
    threshold_mode: str
    locales: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)
    per_pt: list = field(default_factory=list)
    pt_buckets: dict = field(default_factory=dict)
    pearson: dict = field(default_factory=dict)
    variant: str = ""

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "target_precision": self.target_precision,
            "threshold_mode": self.threshold_mode,
            "locales": self.locales,
            "buckets": self.buckets,
            "pt_buckets": self.pt_buckets,
            "pearson": self.pearson,
            "per_pt": self.per_pt,
        }

    def calibration(self) -> dict:
        thresholds = {loc: row["threshold"] for loc, row in self.locales.items() if row.get("attainable")}
        ww = self.buckets.get("WW", {})
        return {"target_precision": self.target_precision, "mode": self.threshold_mode,
                "thresholds": thresholds,
                "default": ww.get("threshold") if ww.get("attainable") else None}


def _json_float(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _point_dict(op: OperatingPoint, n_examples, refrain=None):
    out = {"recall": op.recall, "threshold": _json_float(op.threshold), "attainable": op.attainable,
           "precision": _json_float(op.precision), "n_examples": int(n_examples)}
    if refrain is not None:
        out["refrain_rate"] = refrain
    return out


def _refrain_rate(scores, threshold):
    if len(scores) == 0:
        return None
    return float((scores.max(axis=1) < threshold).mean())


def build_report(bundle, eval_ds: Dataset, hi_re, lo_re, target: float = 0.8, global_threshold: bool = False,
                 train_ds: Dataset | None = None, pt_mass: dict | None = None, scores=None) -> EvalReport:
    """Per-locale and pooled recall at ``target`` precision, plus per-PT analyses.

    ``hi_re``/``lo_re`` are locale codes. ``train_ds`` supplies per-PT sample
    counts for correlations; ``pt_mass`` (PT name -> mass) defines the
    head/torso/tail split, defaulting to training counts.
    """
    from .models import forward_scores

    examples = eval_ds.examples
    if scores is None:
        scores = forward_scores(bundle, [e.query for e in examples], [e.locale.code for e in examples])
    n_pts = len(bundle.pts)
    gold = gold_matrix(examples, n_pts, lambda pt: bundle.pts[pt.name].index)
    codes = np.asarray([e.locale.code for e in examples])
    report = EvalReport(target, "global" if global_threshold else "per-locale", variant=bundle.variant.value)

    def sweep(mask):
        return recall_at_precision(pr_sweep(scores[mask], gold[mask]), target)

    ww = sweep(np.ones(len(examples), dtype=bool))
    for name, group in (("Lo-Re", lo_re), ("Hi-Re", hi_re), ("WW", None)):
        mask = np.ones(len(examples), dtype=bool) if group is None else np.isin(codes, list(group))
        if not mask.any():
            report.buckets[name] = {"error": "no examples"}
            continue
        try:
            op = ww if group is None else sweep(mask)
            report.buckets[name] = _point_dict(op, mask.sum(), _refrain_rate(scores[mask], op.threshold))
        except MetricError as e:
            report.buckets[name] = {"error": str(e)}

    for loc in bundle.locales:
        mask = codes == loc.code
        if not mask.any():
            continue
        try:
            curve = pr_sweep(scores[mask], gold[mask])
            op = recall_at_precision(curve, target)
            if global_threshold:
                t = ww.threshold
                pred = scores[mask] >= t
                tp = int((pred & gold[mask]).sum())
                n_pred = int(pred.sum())
                op = OperatingPoint(tp / curve.n_gold, t, ww.attainable, tp / n_pred if n_pred else 1.0)
            report.locales[loc.code] = _point_dict(op, mask.sum(), _refrain_rate(scores[mask], op.threshold))
        except MetricError as e:
            report.locales[loc.code] = {"error": str(e), "n_examples": int(mask.sum())}

    # per-PT accuracy and correlations
    acc = per_pt_accuracy_from_scores(scores, gold)
    train_counts = np.zeros(n_pts, dtype=np.int64)
    if train_ds is not None:
        for ex in train_ds:
            for pt in ex.labels:
                found = bundle.pts.get(pt.name)
                if found is not None:
                    train_counts[found.index] += 1
    if pt_mass is None:
        pt_mass = {bundle.pts[p].name: int(train_counts[p]) for p in range(n_pts)}
    if sum(pt_mass.values()) <= 0:
        pt_mass = {bundle.pts[p].name: occ for p, (occ, _) in acc.items()}
    parts = head_torso_tail(pt_mass)
    bucket_of = parts.bucket_of()
    for p, (occ, a) in sorted(acc.items()):
        name = bundle.pts[p].name
        report.per_pt.append({"pt": name, "count": occ, "train_count": int(train_counts[p]),
                              "accuracy": a, "bucket": bucket_of.get(name, "none")})
    for bname, frac in zip(("head", "torso", "tail"), parts.masses):
        rows = [r for r in report.per_pt if r["bucket"] == bname]
        occ = sum(r["count"] for r in rows)
        hits = sum(r["count"] * r["accuracy"] for r in rows)
        report.pt_buckets[bname] = {"n_pts": len(getattr(parts, bname)), "mass": frac,
                                    "accuracy": hits / occ if occ else None, "occurrences": occ}

    if train_ds is not None:
        for name, group in (("Lo-Re", lo_re), ("Hi-Re", hi_re), ("WW", None)):
            mask = np.ones(len(examples), dtype=bool) if group is None else np.isin(codes, list(group))
            report.pearson[name] = _bucket_pearson(scores[mask], gold[mask], train_ds, bundle, group)
    return report


def _bucket_pearson(scores, gold, train_ds, bundle, group):
    if len(scores) == 0:
        return None
    counts = np.zeros(len(bundle.pts), dtype=np.int64)
    for ex in train_ds:
        if group is None or ex.locale.code in group:
            for pt in ex.labels:
                found = bundle.pts.get(pt.name)
                if found is not None:
                    counts[found.index] += 1
    acc = per_pt_accuracy_from_scores(scores, gold)
    keys = sorted(acc)
    try:
        return pearson([counts[p] for p in keys], [acc[p][1] for p in keys])
    except UndefinedCorrelation:
        return None


# ---------------------------------------------------------------- CSV


def write_pr_curve_csv(curve: PRCurve, path):
    write_csv(path, ["threshold", "precision", "recall"],
              ([repr(t), repr(p), repr(r)] for t, p, r, *_ in curve.points()))


def _blank(x):
    return "" if x is None else x


def write_report_csvs(report: EvalReport, out_dir):
    out = Path(out_dir)
    rows = [[name, _blank(row.get("recall")), _blank(row.get("threshold")), _blank(row.get("refrain_rate"))]
            for name, row in list(report.locales.items()) + list(report.buckets.items())]
    write_csv(out / "report.csv", ["locale_or_bucket", "recall_at_p", "threshold", "refrain_rate"], rows)
    write_csv(out / "per_pt.csv", ["pt", "count", "accuracy", "bucket"],
              ([r["pt"], r["count"], r["accuracy"], r["bucket"]] for r in report.per_pt))
