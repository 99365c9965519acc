"""Seeded generator of multi-locale click-log worlds.

A world has a long-tailed product-type popularity, a few high-resource
locales carrying most traffic, and three planted kinds of cross-locale
disagreement:

* dialectal: a dialect word flips the intended PT of queries in a locale group
* selection: a PT is missing from some locale catalogs; queries redirect
* noisy: a fraction of clicks lands on random catalog items
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_HIRE,
    DEFAULT_LORE,
    FORMAT_LINE,
    Catalog,
    ClickRecord,
    Dataset,
    LabeledExample,
    Provenance,
    Split,
    locale_registry,
    pt_registry,
    save_clicklog,
    save_dataset,
)

_ONSETS = ("b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl", "gr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "", "", "n", "r", "s", "l", "m")


@dataclass
class WorldSpec:
    n_locales: int = 20
    n_pts: int = 200
    n_items_per_pt: int = 5
    zipf_exponent: float = 1.1
    hi_re_fraction: float = 0.45
    size_ratio: float = 100.0
    vocab_size: int = 2400
    terms_per_pt: int = 8
    flip_fraction: float = 0.02
    selection_fraction: float = 0.05
    click_noise: float = 0.1
    queries_per_locale: dict | None = None
    seed: int = 7
    # volumes and template budget; not named in the reference design
    n_templates: int = 3000
    lore_queries: int = 400
    clicks_per_query: int = 2
    dialect_templates_per_pt: int = 10
    locale_codes: list | None = None

    def validate(self):
        for name in ("hi_re_fraction", "flip_fraction", "selection_fraction", "click_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be positive")
        for name in ("n_locales", "n_pts", "n_items_per_pt", "vocab_size", "terms_per_pt",
                     "n_templates", "lore_queries", "clicks_per_query"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.size_ratio <= 0:
            raise ValueError("size_ratio must be positive")
        if self.n_pts * self.terms_per_pt > self.vocab_size:
            raise ValueError(
                f"n_pts*terms_per_pt = {self.n_pts * self.terms_per_pt} exceeds vocab_size "
                f"{self.vocab_size}: cannot build disjoint term pools")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        codes = self.codes()
        if len(set(codes)) != len(codes) or len(codes) != self.n_locales:
            raise ValueError("locale_codes must be n_locales unique codes")
        if self.queries_per_locale is not None:
            unknown = set(self.queries_per_locale) - set(codes)
            if unknown:
                raise ValueError(f"queries_per_locale has unknown locales {sorted(unknown)}")
        return self

    def codes(self) -> list[str]:
        if self.locale_codes is not None:
            return list(self.locale_codes)
        known = DEFAULT_HIRE + DEFAULT_LORE
        if self.n_locales <= len(known):
            n_hi = self.n_hi_re()
            hi = list(DEFAULT_HIRE[:n_hi])
            lo = list(DEFAULT_LORE[: self.n_locales - len(hi)])
            if len(hi) + len(lo) == self.n_locales:
                return hi + lo
        return [f"L{i:02d}" for i in range(self.n_locales)]

    def n_hi_re(self) -> int:
        if self.n_locales == 1:
            return 1
        return min(self.n_locales - 1, max(1, round(self.hi_re_fraction * self.n_locales)))

    def volumes(self) -> list[int]:
        codes = self.codes()
        n_hi = self.n_hi_re()
        out = []
        for i, code in enumerate(codes):
            if self.queries_per_locale and code in self.queries_per_locale:
                out.append(int(self.queries_per_locale[code]))
            elif i < n_hi:
                out.append(int(round(self.lore_queries * self.size_ratio)))
            else:
                out.append(int(self.lore_queries))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown WorldSpec keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path) -> "WorldSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FlipRecord:
    query: str
    locale: str
    intended_pt: str


@dataclass
class World:
    spec: WorldSpec
    catalog: Catalog
    clicklog: list
    gold: Dataset
    flip_manifest: list
    hi_re: list  # locale codes
    pt_popularity: np.ndarray
    masked: set = field(default_factory=set)  # (locale code, pt name)
    template_pt: dict = field(default_factory=dict)  # query -> base PT name


def _make_vocab(rng, n):
    words, seen = [], set()
    while len(words) < n:
        n_syl = 2 if rng.random() < 0.85 else 3
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    + _CODAS[rng.integers(len(_CODAS))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _compose(rng, pool, stop, n_words):
    words = [pool[rng.integers(len(pool))]]
    for _ in range(n_words - 1):
        if rng.random() < 0.6 or not stop:
            words.append(pool[rng.integers(len(pool))])
        else:
            words.append(stop[rng.integers(len(stop))])
    rng.shuffle(words)
    return words


def _n_words(rng):
    return int(rng.choice([1, 2, 3, 4], p=[0.15, 0.35, 0.3, 0.2]))


def _pick_group(rng, L, volumes, size, max_share=1 / 3, draws=200):
    """Busiest of several random locale subsets whose traffic share stays a minority."""
    total = sum(volumes)
    best = None
    for _ in range(draws):
        group = sorted(rng.choice(L, size=size, replace=False).tolist())
        share = sum(volumes[i] for i in group) / total
        key = (share <= max_share, share if share <= max_share else -share)
        if best is None or key > best[0]:
            best = (key, group)
    return best[1]


def generate(spec: WorldSpec) -> World:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    L, P = spec.n_locales, spec.n_pts
    codes = spec.codes()
    locales = locale_registry(codes).freeze()
    pts = pt_registry(f"PT{p:04d}" for p in range(P)).freeze()
    catalog = Catalog(locales, pts)
    for p in range(P):
        for j in range(spec.n_items_per_pt):
            catalog.add_item(p * spec.n_items_per_pt + j, pts[p])
    volumes = spec.volumes()
    hi_re = codes[: spec.n_hi_re()] if spec.queries_per_locale is None else \
        [codes[i] for i in sorted(range(L), key=lambda i: (-volumes[i], i))[: spec.n_hi_re()]]

    vocab = _make_vocab(rng, spec.vocab_size)
    pools = [vocab[p * spec.terms_per_pt:(p + 1) * spec.terms_per_pt] for p in range(P)]
    stop = vocab[P * spec.terms_per_pt:]

    ranks = np.arange(1, P + 1, dtype=np.float64)
    pop = ranks ** -spec.zipf_exponent
    pop /= pop.sum()
    per_pt = np.maximum(2, np.round(spec.n_templates * pop)).astype(int)

    # dialect PTs: popular enough to host several dialectal templates
    n_flip = int(round(spec.flip_fraction * per_pt.sum())) if L >= 2 else 0
    dialect = {}  # base pt -> (dialect word, partner pt, locale group, n templates)
    if n_flip:
        k = spec.dialect_templates_per_pt
        candidates = [p for p in rng.permutation(P).tolist() if per_pt[p] >= 2 * k]
        # one shared locale group, so the locale-conditioned reading is a single pattern
        group = _pick_group(rng, L, volumes, max(1, round(L / 4)))
        for a in candidates:
            if n_flip <= 0 or not stop:
                break
            m = min(k, n_flip)
            word = stop.pop(int(rng.integers(len(stop))))
            b = int(rng.integers(P - 1))
            b = b + 1 if b >= a else b
            dialect[a] = (word, b, group, m)
            n_flip -= m

    # templates: (surface, base pt, dialect base pt or -1)
    templates, seen = [], set()
    for p in range(P):
        n_dial = dialect[p][3] if p in dialect else 0
        made, tries = 0, 0
        while made < per_pt[p]:
            tries += 1
            if tries > 1000 * per_pt[p]:
                raise ValueError(f"cannot build {per_pt[p]} distinct templates for PT {p}; raise vocab_size")
            is_dial = made < n_dial
            if is_dial:
                words = _compose(rng, pools[p], stop, max(1, _n_words(rng) - 1))
                words.insert(int(rng.integers(len(words) + 1)), dialect[p][0])
            else:
                words = _compose(rng, pools[p], stop, _n_words(rng))
            surface = " ".join(words)
            if surface in seen:
                continue
            seen.add(surface)
            templates.append((surface, p, p if is_dial else -1))
            made += 1

    # selection masking: PT absent from a locale subset, redirected to nearest present PT
    masked = set()
    n_sel = int(round(spec.selection_fraction * P)) if L >= 2 and P >= 2 else 0
    dialect_partners = {v[1] for v in dialect.values()} | set(dialect)
    # catalog gaps hit niche PTs; the most popular tenth is always stocked
    n_staple = P // 10
    sel_candidates = [p for p in rng.permutation(P).tolist() if p not in dialect_partners and p >= n_staple]
    for p in sel_candidates[:n_sel]:
        group = rng.choice(L, size=max(1, min(L - 1, round(L / 4))), replace=False)
        for loc in group.tolist():
            masked.add((loc, p))

    def present(loc, p):
        return (loc, p) not in masked

    def redirect(loc, p):
        if present(loc, p):
            return p
        for off in range(1, P):
            for q in (p + off, p - off):
                if 0 <= q < P and present(loc, q):
                    return q
        raise ValueError("no product type left in catalog")

    n_items = spec.n_items_per_pt
    catalog_items = []
    for loc in range(L):
        ids = [i for p in range(P) if present(loc, p) for i in range(p * n_items, (p + 1) * n_items)]
        catalog_items.append(np.asarray(ids, dtype=np.int64))

    t_pt = np.asarray([t[1] for t in templates])
    t_prob = pop[t_pt] / per_pt[t_pt]
    t_prob = t_prob / t_prob.sum()

    clicklog, gold, manifest = [], [], []
    items = catalog.items
    for loc in range(L):
        locale = locales[loc]
        counts = rng.multinomial(volumes[loc], t_prob)
        issued = np.flatnonzero(counts)
        rows = []
        for t in issued.tolist():
            surface, base, dial = templates[t]
            intended = base
            if dial >= 0 and loc in dialect[dial][2]:
                intended = dialect[dial][1]
            intended = redirect(loc, intended)
            total = int(counts[t]) * spec.clicks_per_query
            n_noise = int(rng.binomial(total, spec.click_noise))
            item_clicks = np.zeros(P * n_items, dtype=np.int64)
            if total - n_noise:
                item_clicks[intended * n_items:(intended + 1) * n_items] += rng.multinomial(
                    total - n_noise, np.full(n_items, 1.0 / n_items))
            if n_noise:
                noise_items = catalog_items[loc][rng.integers(len(catalog_items[loc]), size=n_noise)]
                np.add.at(item_clicks, noise_items, 1)
            rows.append((surface, item_clicks, total, intended))
            if dial >= 0 and loc in dialect[dial][2]:
                manifest.append(FlipRecord(surface, locale.code, pts[intended].name))
        rows.sort(key=lambda r: r[0])
        for surface, item_clicks, total, intended in rows:
            for i in np.flatnonzero(item_clicks).tolist():
                clicklog.append(ClickRecord(locale, surface, items[i], int(item_clicks[i]), total))
            gold.append(LabeledExample(locale, surface, (pts[intended],)))

    manifest.sort(key=lambda r: (locales[r.locale].index, r.query))
    return World(
        spec=spec,
        catalog=catalog,
        clicklog=clicklog,
        gold=Dataset(gold, Split.TEST, Provenance.SYNTHETIC_GOLD),
        flip_manifest=manifest,
        hi_re=list(hi_re),
        pt_popularity=pop,
        masked={(codes[loc], pts[p].name) for loc, p in masked},
        template_pt={t[0]: pts[t[1]].name for t in templates},
    )


@dataclass
class WorldSplit:
    train: Dataset
    validation: Dataset
    test: Dataset
    train_clicklog: list


def _split_sizes(n, fractions):
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be three positive numbers summing to 1")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"a split would be empty ({n_train}/{n_val}/{n_test} of {n} templates)")
    return n_train, n_val, n_test


def split_queries(queries, fractions, seed):
    """Assign each distinct query (template) to train/validation/test."""
    queries = sorted(set(queries))
    n_train, n_val, _ = _split_sizes(len(queries), fractions)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(queries))
    assign = {}
    for rank, i in enumerate(order.tolist()):
        assign[queries[i]] = Split.TRAIN if rank < n_train else (
            Split.VALIDATION if rank < n_train + n_val else Split.TEST)
    return assign


def split_world(world: World, fractions=(0.8, 0.1, 0.1), seed=0) -> WorldSplit:
    gold = world.gold
    assign = split_queries([e.query for e in gold], fractions, seed)
    parts = {s: [] for s in Split}
    for ex in gold:
        parts[assign[ex.query]].append(ex)
    clicks = [r for r in world.clicklog if assign.get(r.query) == Split.TRAIN]
    return WorldSplit(
        Dataset(parts[Split.TRAIN], Split.TRAIN, Provenance.SYNTHETIC_GOLD),
        Dataset(parts[Split.VALIDATION], Split.VALIDATION, Provenance.SYNTHETIC_GOLD),
        Dataset(parts[Split.TEST], Split.TEST, Provenance.SYNTHETIC_GOLD),
        clicks,
    )


# ---------------------------------------------------------------- persistence


def save_catalog(catalog: Catalog, path, hi_re=(), n_items_per_pt=None):
    obj = {
        "format": FORMAT_LINE.lstrip("#"),
        "locales": catalog.locales.names(),
        "product_types": catalog.pts.names(),
        "hi_re": list(hi_re),
    }
    if n_items_per_pt:
        obj["n_items_per_pt"] = n_items_per_pt
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_catalog(path) -> tuple[Catalog, list]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != FORMAT_LINE.lstrip("#"):
        raise ValueError(f"{path}: unsupported catalog format {obj.get('format')!r}")
    cat = Catalog(locale_registry(obj["locales"]).freeze(), pt_registry(obj["product_types"]).freeze())
    return cat, list(obj.get("hi_re", []))


def save_flip_manifest(records, path):
    lines = [FORMAT_LINE] + [json.dumps(asdict(r), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_flip_manifest(path) -> list[FlipRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [FlipRecord(**json.loads(line)) for line in lines[1:] if line.strip()]


def write_world(world: World, out_dir, fractions=(0.8, 0.1, 0.1), split_seed=None) -> WorldSplit:
    """World files plus the template split used downstream."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_seed = world.spec.seed if split_seed is None else split_seed
    parts = split_world(world, fractions, split_seed)
    save_catalog(world.catalog, out / "catalog.json", world.hi_re, world.spec.n_items_per_pt)
    save_clicklog(world.clicklog, out / "clicklog.tsv")
    save_dataset(world.gold, out / "gold.jsonl")
    save_flip_manifest(world.flip_manifest, out / "flip_manifest.jsonl")
    save_clicklog(parts.train_clicklog, out / "train_clicklog.tsv")
    save_dataset(parts.train, out / "gold_train.jsonl")
    save_dataset(parts.validation, out / "gold_validation.jsonl")
    save_dataset(parts.test, out / "gold_test.jsonl")
    (out / "spec.json").write_text(json.dumps(asdict(world.spec), indent=1, sort_keys=True) + "\n")
    return parts
