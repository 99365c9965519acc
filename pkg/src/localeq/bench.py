"""The seeded three-variant comparison behind the ``bench`` subcommand."""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RunConfig
from .core import FORMAT_LINE, bucket_locales, write_csv
from .labels import derive_all, pt_mass
from .metrics import build_report, pr_sweep, gold_matrix, write_pr_curve_csv, write_report_csvs
from .models import create_bundle, forward_scores, train
from .synthgen import generate, split_world


def flip_accuracy(bundle, examples) -> float | None:
    """Top-1 accuracy on gold examples (flipped-locale dialect queries in the benchmark)."""
    if not examples:
        return None
    scores = forward_scores(bundle, [e.query for e in examples], [e.locale.code for e in examples])
    top = np.argmax(scores, axis=1)
    hits = sum(bundle.pts[int(t)].name in {p.name for p in e.labels} for t, e in zip(top, examples))
    return hits / len(examples)


def run_bench(cfg: RunConfig, out_dir=None, progress=None) -> dict:
    """Generate, derive, train every variant and evaluate; returns the report dict.

    The report holds no timings or paths, so equal configs give equal reports.
    """
    say = progress or (lambda msg: None)
    t0 = time.perf_counter()
    world = generate(cfg.world)
    split = split_world(world, cfg.split.fractions, cfg.split.seed)
    train_ds = derive_all(split.train_clicklog, cfg.eval.label_threshold)
    say(f"world: {len(world.clicklog)} click records, {len(train_ds)} derived training examples "
        f"({time.perf_counter() - t0:.1f}s)")

    if cfg.eval.n_hi_re is None:
        hi_re = set(world.hi_re)
        lo_re = set(world.catalog.locales.names()) - hi_re
    else:
        counts = {loc: 0 for loc in world.catalog.locales}
        counts.update(train_ds.locale_counts())
        hi, lo = bucket_locales(counts, cfg.eval.n_hi_re)
        hi_re, lo_re = {x.code for x in hi}, {x.code for x in lo}
    mass = pt_mass(world.clicklog, len(world.catalog.pts))
    mass = {world.catalog.pts[i].name: m for i, m in enumerate(mass)}
    flipped = {(r.query, r.locale) for r in world.flip_manifest}
    flip_test = [e for e in split.test if (e.query, e.locale.code) in flipped]

    out = Path(out_dir) if out_dir is not None else None
    variants = {}
    for variant in cfg.variants:
        bundle = create_bundle(variant, world.catalog.locales, world.catalog.pts, cfg.encoder, seed=cfg.model_seed)
        tv = time.perf_counter()
        bundle, history = train(bundle, train_ds, split.validation, cfg.train, progress=progress)
        say(f"[{variant}] trained {len(history)} epochs in {time.perf_counter() - tv:.1f}s")
        examples = split.test.examples
        scores = forward_scores(bundle, [e.query for e in examples], [e.locale.code for e in examples])
        report = build_report(bundle, split.test, hi_re, lo_re, cfg.eval.target_precision,
                              cfg.eval.global_threshold, train_ds=train_ds, pt_mass=mass, scores=scores)
        blob = checkpoint.to_bytes(bundle)
        entry = report.to_dict()
        entry["flip_accuracy"] = flip_accuracy(bundle, flip_test)
        entry["history"] = history
        entry["checkpoint_crc64"] = checkpoint.digest(blob)
        variants[variant] = entry
        if out is not None:
            vdir = out / variant
            vdir.mkdir(parents=True, exist_ok=True)
            (vdir / "model.lqpt").write_bytes(blob)
            write_report_csvs(report, vdir)
            gold = gold_matrix(examples, len(bundle.pts), lambda pt: bundle.pts[pt.name].index)
            write_pr_curve_csv(pr_sweep(scores, gold), vdir / "pr_curve.csv")
            (vdir / "calibration.json").write_text(json.dumps(report.calibration(), indent=2, sort_keys=True) + "\n")

    result = {
        "format": FORMAT_LINE,
        "config": cfg.to_dict(),
        "hi_re": sorted(hi_re),
        "lo_re": sorted(lo_re),
        "n_train": len(train_ds),
        "n_validation": len(split.validation),
        "n_test": len(split.test),
        "n_flip_test": len(flip_test),
        "grid": grid(variants),
        "variants": variants,
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps(result))
        write_csv(out / "grid.csv", ["variant", "Lo-Re", "Hi-Re", "WW", "flip_accuracy"],
                  ([v, *(row[b] for b in ("Lo-Re", "Hi-Re", "WW")), row["flip_accuracy"]]
                   for v, row in result["grid"].items()))
    return result


def grid(variants: dict) -> dict:
    return {v: {**{b: r["buckets"].get(b, {}).get("recall") for b in ("Lo-Re", "Hi-Re", "WW")},
                "flip_accuracy": r["flip_accuracy"]} for v, r in variants.items()}


def dumps(result: dict) -> str:
    return json.dumps(result, indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_grid(result: dict) -> str:
    rows = [f"{'variant':<16}{'Lo-Re':>8}{'Hi-Re':>8}{'WW':>8}{'flip':>8}"]

    def cell(x):
        return f"{x:8.3f}" if x is not None else f"{'-':>8}"

    for v, row in result["grid"].items():
        rows.append(f"{v:<16}" + "".join(cell(row[b]) for b in ("Lo-Re", "Hi-Re", "WW", "flip_accuracy")))
    return "\n".join(rows)
