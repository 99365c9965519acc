"""``localeq`` command line: synth, derive, train, eval, analyses, predict, serve, bench.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _accel, checkpoint
from .config import RunConfig, bench_config
from .core import FormatError, bucket_locales, load_clicklog, load_dataset, save_dataset, write_csv
from .labels import NoTrainableLabels, derive_all, pt_mass
from .metrics import MetricError, build_report, gold_matrix, pr_sweep, write_pr_curve_csv, write_report_csvs
from .models import UnknownLocaleError, UnknownLocaleWarning, VariantKind, create_bundle, forward_scores, predict, \
    train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
VARIANTS = [v.value for v in VariantKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _progress(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _threads(args):
    n = args.threads
    if n is None:
        env = os.environ.get("LOCALEQ_THREADS")
        if env:
            if not env.isdigit() or int(env) < 1:
                raise UsageError(f"LOCALEQ_THREADS must be a positive integer, got {env!r}")
            n = int(env)
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be positive")
        _accel.set_threads(n)


def _run_config(args) -> RunConfig:
    return RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()


def _train_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {k: getattr(args, k) for k in ("learning_rate", "max_epochs", "batch_size", "patience", "dropout", "seed")
            if getattr(args, k, None) is not None}
    if over:
        cfg.train = replace(cfg.train, **over)
    return cfg


def _load_catalog(path):
    from .synthgen import load_catalog

    return load_catalog(path)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- subcommands


def cmd_synth(args):
    from .synthgen import WorldSpec, generate, write_world

    cfg = RunConfig.from_json(args.config) if args.config else bench_config()
    spec = cfg.world
    if args.seed is not None:
        spec = WorldSpec.from_dict({**spec.__dict__, "seed": args.seed})
    world = generate(spec)
    split_seed = cfg.split.seed if args.seed is None else args.seed
    sp = write_world(world, args.out, cfg.split.fractions, split_seed)
    _progress(f"wrote world to {args.out}: {len(world.clicklog)} click records, {len(world.gold)} gold examples, "
              f"{len(sp.train)}/{len(sp.validation)}/{len(sp.test)} train/validation/test gold")
    return EXIT_OK


def cmd_derive(args):
    catalog = _load_catalog(args.catalog)[0] if args.catalog else None
    log = load_clicklog(args.clicklog, catalog)
    ds = derive_all(log, args.threshold, args.min_clicks)
    save_dataset(ds, args.out)
    _progress(f"derived {len(ds)} labeled examples from {len(log)} click records")
    return EXIT_OK


def cmd_train(args):
    cfg = _train_overrides(_run_config(args), args)
    catalog, _ = _load_catalog(args.catalog)
    train_ds = load_dataset(args.train, catalog)
    val_ds = load_dataset(args.validation, catalog)
    enc = cfg.encoder
    bundle = create_bundle(args.variant, catalog.locales, catalog.pts, enc, seed=cfg.model_seed)
    bundle, history = train(bundle, train_ds, val_ds, cfg.train, progress=_progress)
    checkpoint.save(bundle, args.out)
    _progress(f"saved {args.variant} model ({bundle.n_parameters()} parameters) to {args.out}")
    return EXIT_OK


def _buckets(catalog, hi_re_saved, train_ds, n_hi_re):
    if n_hi_re is None and hi_re_saved:
        hi = set(hi_re_saved)
        return hi, set(catalog.locales.names()) - hi
    if n_hi_re is None:
        raise UsageError("no Hi-Re list in the catalog; pass --n-hi-re")
    counts = {loc: 0 for loc in catalog.locales}
    if train_ds is not None:
        counts.update(train_ds.locale_counts())
    hi, lo = bucket_locales(counts, n_hi_re)
    return {x.code for x in hi}, {x.code for x in lo}


def _eval_inputs(args):
    bundle = checkpoint.load(args.model)
    catalog, hi_saved = _load_catalog(args.catalog)
    ds = load_dataset(args.data, catalog)
    train_ds = load_dataset(args.train, catalog) if getattr(args, "train", None) else None
    mass = None
    if getattr(args, "clicklog", None):
        m = pt_mass(load_clicklog(args.clicklog, catalog), len(catalog.pts))
        mass = {catalog.pts[i].name: v for i, v in enumerate(m)}
    hi, lo = _buckets(catalog, hi_saved, train_ds, getattr(args, "n_hi_re", None))
    return bundle, ds, train_ds, mass, hi, lo


def cmd_eval(args):
    bundle, ds, train_ds, mass, hi, lo = _eval_inputs(args)
    report = build_report(bundle, ds, hi, lo, args.target, args.global_threshold, train_ds=train_ds, pt_mass=mass)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    _write_json(out / "calibration.json", report.calibration())
    write_report_csvs(report, out)
    for name, row in report.buckets.items():
        print(f"{name}\trecall@{args.target:g}p\t{row.get('recall', row.get('error'))}")
    return EXIT_OK


def cmd_pr_curve(args):
    bundle = checkpoint.load(args.model)
    catalog, _ = _load_catalog(args.catalog)
    ds = load_dataset(args.data, catalog)
    examples = ds.examples if not args.locale else [e for e in ds.examples if e.locale.code in set(args.locale)]
    if not examples:
        raise ValueError("no examples for the requested locales")
    scores = forward_scores(bundle, [e.query for e in examples], [e.locale.code for e in examples])
    gold = gold_matrix(examples, len(bundle.pts), lambda pt: bundle.pts[pt.name].index)
    write_pr_curve_csv(pr_sweep(scores, gold), args.out)
    return EXIT_OK


def cmd_analyze_pt(args):
    bundle, ds, train_ds, mass, hi, lo = _eval_inputs(args)
    report = build_report(bundle, ds, hi, lo, train_ds=train_ds, pt_mass=mass)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "per_pt.csv", ["pt", "count", "train_count", "accuracy", "bucket"],
              ([r["pt"], r["count"], r["train_count"], r["accuracy"], r["bucket"]] for r in report.per_pt))
    _write_json(out / "pt_analysis.json", {"pt_buckets": report.pt_buckets, "pearson": report.pearson})
    for name, row in report.pt_buckets.items():
        print(f"{name}\tmass {row['mass']:.3f}\taccuracy {row['accuracy']}")
    for name, r in report.pearson.items():
        print(f"pearson {name}\t{r}")
    return EXIT_OK


def cmd_analyze_emd(args):
    from .divergence import ClickIndex, categorize, pair_divergence, write_emd_csvs

    catalog, _ = _load_catalog(args.catalog)
    index = ClickIndex(load_clicklog(args.clicklog, catalog), catalog.pts)
    result = pair_divergence(index, args.locale_a, args.locale_b, args.min_clicks, args.bins)
    cats = [categorize(r, index, args.low, args.alpha) for r in result.records]
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_emd_csvs(result, cats, args.out)
    counts = {c: sum(x is c for x in cats) for c in dict.fromkeys(cats)}
    print(f"{len(result.records)} shared queries; median EMD {float(np.median([r.emd for r in result.records])):.4f}")
    for c, n in sorted(counts.items(), key=lambda kv: kv[0].value):
        print(f"{c.value}\t{n}")
    return EXIT_OK


def cmd_predict(args):
    from .server import Predictor, load_calibration

    bundle = checkpoint.load(args.model)
    cal = load_calibration(args.calibration) if args.calibration else None
    pred = Predictor(bundle, cal)
    threshold = args.threshold if args.threshold is not None else pred.threshold_for(args.locale)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnknownLocaleWarning)
        hits = predict(bundle, args.query, args.locale, threshold)
    if not hits:
        print(f"(refrain: no product type scores >= {threshold:g})")
    for pt, score in hits:
        print(f"{pt.name}\t{score:.6f}")
    return EXIT_OK


def cmd_serve(args):
    from .server import load_predictor, make_server

    warnings.simplefilter("ignore", UnknownLocaleWarning)
    predictor = load_predictor(args.model, args.calibration)
    try:
        server = make_server(predictor, args.bind)
    except OSError as e:
        raise ValueError(f"cannot bind {args.bind}: {e}") from None
    host, port = server.server_address[:2]
    _progress(f"serving {predictor.model_version} on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_bench(args):
    from .bench import dumps, format_grid, run_bench

    cfg = RunConfig.from_json(args.config) if args.config else bench_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    cfg = _train_overrides(cfg, args)
    result = run_bench(cfg, args.out, progress=_progress)
    if args.report:
        Path(args.report).write_text(dumps(result), encoding="utf-8")
    print(format_grid(result))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_flags(p):
    g = p.add_argument_group("training overrides")
    g.add_argument("--learning-rate", type=float, dest="learning_rate")
    g.add_argument("--max-epochs", type=int, dest="max_epochs")
    g.add_argument("--batch-size", type=int, dest="batch_size")
    g.add_argument("--patience", type=int)
    g.add_argument("--dropout", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localeq", description="Multi-locale query to product-type workbench.")
    parser.add_argument("--threads", type=int, help="worker threads (fallback: LOCALEQ_THREADS)")
    # also accepted after the subcommand; SUPPRESS keeps an absent flag from hiding the global one
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic world")
    p.add_argument("--config", help="run config JSON; its 'world' and 'split' sections are used (default: the shipped benchmark)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="world and split seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("derive", parents=[common], help="derive weak labels from a click log")
    p.add_argument("--clicklog", required=True)
    p.add_argument("--catalog")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-clicks", type=int, default=1, dest="min_clicks")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("train", parents=[common], help="train one model variant")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--train", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="training seed")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    def eval_common(p, with_target=True):
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True, help="labeled JSONL to evaluate on")
        p.add_argument("--catalog", required=True)
        p.add_argument("--train", help="training JSONL (per-PT sample counts)")
        p.add_argument("--clicklog", help="click log for PT query mass")
        p.add_argument("--n-hi-re", type=int, dest="n_hi_re")
        p.add_argument("--out", required=True)
        if with_target:
            p.add_argument("--target", type=float, default=0.8)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model; writes report JSON, CSVs and calibration")
    eval_common(p)
    p.add_argument("--global-threshold", action="store_true", dest="global_threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pr-curve", parents=[common], help="write a pooled precision/recall curve CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--locale", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pr_curve)

    p = sub.add_parser("analyze-pt", parents=[common], help="head/torso/tail accuracy and Pearson correlations")
    eval_common(p, with_target=False)
    p.set_defaults(func=cmd_analyze_pt)

    p = sub.add_parser("analyze-emd", parents=[common], help="per-query EMD between two locales")
    p.add_argument("--clicklog", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--locale-a", required=True, dest="locale_a")
    p.add_argument("--locale-b", required=True, dest="locale_b")
    p.add_argument("--min-clicks", type=int, default=5, dest="min_clicks")
    p.add_argument("--bins", type=int, default=19)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_emd)

    p = sub.add_parser("predict", parents=[common], help="score one query")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--locale", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--calibration")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", parents=[common], help="HTTP prediction service")
    p.add_argument("--model", required=True)
    p.add_argument("--calibration")
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", parents=[common], help="train and compare the three variants on the shipped benchmark")
    p.add_argument("--config", help="run config JSON (default: the shipped benchmark)")
    p.add_argument("--seed", type=int, help="master seed for world, split and training")
    p.add_argument("--out", help="directory for models, CSVs and report.json")
    p.add_argument("--report", help="write the report JSON here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        _threads(args)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, NoTrainableLabels, MetricError, UnknownLocaleError, checkpoint.CheckpointError,
            ValueError, KeyError, OSError) as e:
        print(f"localeq: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
