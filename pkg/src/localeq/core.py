"""Identifier registries, click-log and dataset containers, and their file formats."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

FORMAT_LINE = "#localeq-format v1"
CLICKLOG_COLUMNS = ("locale_code", "query", "item_index", "pt_name", "clicks", "impressions")

# Default locale codes for the high- and low-resource buckets.
DEFAULT_HIRE = ("US", "DE", "UK", "JP", "IN", "IT", "CA", "FR", "ES")
DEFAULT_LORE = ("MX", "BR", "AE", "AU", "SA", "EG", "NL", "TR", "SE", "SG", "PL")


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {msg}" if where else msg)


@dataclass(frozen=True, order=True)
class LocaleId:
    index: int
    code: str


@dataclass(frozen=True, order=True)
class ProductTypeId:
    index: int
    name: str


@dataclass(frozen=True, order=True)
class ItemId:
    index: int
    pt: ProductTypeId


class Registry:
    """Dense name <-> index mapping; append-only until frozen."""

    def __init__(self, factory, names: Iterable[str] = ()):
        self._factory = factory
        self._by_name: dict[str, object] = {}
        self._items: list = []
        self.frozen = False
        for n in names:
            self.add(n)

    def add(self, name: str):
        found = self._by_name.get(name)
        if found is not None:
            return found
        if self.frozen:
            raise KeyError(f"unknown {self._factory.__name__} {name!r} (registry frozen)")
        if not name or any(c in name for c in "\t\n\r"):
            raise ValueError(f"invalid identifier {name!r}")
        obj = self._factory(len(self._items), name)
        self._items.append(obj)
        self._by_name[name] = obj
        return obj

    def freeze(self):
        self.frozen = True
        return self

    def get(self, name: str):
        return self._by_name.get(name)

    def __getitem__(self, key):
        if isinstance(key, str):
            try:
                return self._by_name[key]
            except KeyError:
                raise KeyError(f"unknown {self._factory.__name__} {key!r}") from None
        return self._items[key]

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def names(self) -> list[str]:
        return [_label(x) for x in self._items]

    def __eq__(self, other):
        return isinstance(other, Registry) and self.names() == other.names()


def _label(x) -> str:
    return x.code if isinstance(x, LocaleId) else x.name


def locale_registry(codes: Iterable[str] = ()) -> Registry:
    return Registry(LocaleId, codes)


def pt_registry(names: Iterable[str] = ()) -> Registry:
    return Registry(ProductTypeId, names)


@dataclass
class Catalog:
    locales: Registry
    pts: Registry
    items: dict[int, ItemId] = field(default_factory=dict)

    def add_item(self, index: int, pt: ProductTypeId) -> ItemId:
        item = self.items.get(index)
        if item is None:
            item = ItemId(index, pt)
            self.items[index] = item
        elif item.pt != pt:
            raise ValueError(f"item {index} already mapped to {item.pt.name}, not {pt.name}")
        return item

    @classmethod
    def empty(cls) -> "Catalog":
        return cls(locale_registry(), pt_registry())


@dataclass(frozen=True)
class ClickRecord:
    locale: LocaleId
    query: str
    item: ItemId
    clicks: int
    impressions: int = 0

    def __post_init__(self):
        if self.clicks < 0:
            raise ValueError("clicks must be non-negative")
        if self.impressions < 0 or (self.impressions and self.impressions < self.clicks):
            raise ValueError("impressions must be 0 (unknown) or >= clicks")


@dataclass(frozen=True)
class LabeledExample:
    locale: LocaleId
    query: str
    labels: tuple[ProductTypeId, ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError("labels must be non-empty")
        labels = tuple(sorted(self.labels))
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate product types in labels")
        object.__setattr__(self, "labels", labels)


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class Provenance(str, Enum):
    DERIVED = "derived"
    SYNTHETIC_GOLD = "synthetic-gold"
    EXTERNAL = "external"


@dataclass
class Dataset:
    examples: list[LabeledExample]
    split: Split
    provenance: Provenance

    def __post_init__(self):
        self.split = Split(self.split)
        self.provenance = Provenance(self.provenance)
        self._counts = Counter(ex.locale for ex in self.examples)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def locale_counts(self) -> Counter:
        return self._counts

    def for_locale(self, locale: LocaleId) -> "Dataset":
        return Dataset([e for e in self.examples if e.locale == locale], self.split, self.provenance)

    def for_locales(self, locales) -> "Dataset":
        locales = set(locales)
        return Dataset([e for e in self.examples if e.locale in locales], self.split, self.provenance)


# ------------------------------------------------------------------ click logs


def _header_lines(path, lines):
    """Strip the version line; return (remaining lines, first data line number)."""
    if not lines:
        return [], 1
    first = lines[0].rstrip("\r\n")
    if not first.startswith("#localeq-format"):
        raise FormatError("missing '#localeq-format v1' version line", 1, path)
    if first.split()[1] != "v1":
        raise FormatError(f"unsupported format version {first.split()[1]!r}", 1, path)
    return lines[1:], 2


def load_clicklog(path, catalog: Catalog | None = None) -> list[ClickRecord]:
    """Parse a click-log TSV, extending ``catalog`` in file order.

    A frozen locale or PT registry makes unknown codes an error.
    """
    path = Path(path)
    catalog = catalog if catalog is not None else Catalog.empty()
    with open(path, encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    lines, lineno = _header_lines(path, lines)
    if not lines:
        return []
    if tuple(lines[0].rstrip().split("\t")) != CLICKLOG_COLUMNS:
        raise FormatError("expected column header " + "\\t".join(CLICKLOG_COLUMNS), lineno, path)
    records = []
    for lineno, line in enumerate(lines[1:], start=lineno + 1):
        if not line.strip():
            continue
        parts = line.rstrip(" \r").split("\t")
        if len(parts) != 6:
            raise FormatError(f"expected 6 tab-separated fields, got {len(parts)}", lineno, path)
        code, query, item_s, pt_name, clicks_s, impr_s = parts
        try:
            item_index, clicks, impressions = int(item_s), int(clicks_s), int(impr_s)
            locale = catalog.locales.add(code)
            pt = catalog.pts.add(pt_name)
            item = catalog.add_item(item_index, pt)
            records.append(ClickRecord(locale, query, item, clicks, impressions))
        except (ValueError, KeyError) as e:
            raise FormatError(str(e).strip("'\""), lineno, path) from None
    return records


def format_clicklog(records: Iterable[ClickRecord]) -> str:
    out = [FORMAT_LINE, "\t".join(CLICKLOG_COLUMNS)]
    for r in records:
        if any(c in r.query for c in "\t\n\r"):
            raise ValueError(f"query contains a tab or newline: {r.query!r}")
        out.append(f"{r.locale.code}\t{r.query}\t{r.item.index}\t{r.item.pt.name}\t{r.clicks}\t{r.impressions}")
    return "\n".join(out) + "\n"


def save_clicklog(records, path):
    Path(path).write_text(format_clicklog(records), encoding="utf-8")


# ---------------------------------------------------------------- datasets


def format_dataset(ds: Dataset) -> str:
    out = [f"{FORMAT_LINE} split={ds.split.value} provenance={ds.provenance.value}"]
    for ex in ds.examples:
        obj = {"locale": ex.locale.code, "query": ex.query, "labels": [p.name for p in ex.labels]}
        out.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(out) + "\n"


def save_dataset(ds: Dataset, path):
    Path(path).write_text(format_dataset(ds), encoding="utf-8")


def load_dataset(path, catalog: Catalog | None = None, split=None, provenance=None) -> Dataset:
    path = Path(path)
    catalog = catalog if catalog is not None else Catalog.empty()
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    meta = {}
    if lines:
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:] if "=" in tok)
    body, lineno = _header_lines(path, lines)
    examples = []
    for lineno, line in enumerate(body, start=lineno):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            locale = catalog.locales.add(obj["locale"])
            labels = tuple(catalog.pts.add(n) for n in obj["labels"])
            examples.append(LabeledExample(locale, obj["query"], labels))
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"bad example: {e}", lineno, path) from None
    split = split or meta.get("split", "test")
    provenance = provenance or meta.get("provenance", "external")
    return Dataset(examples, Split(split), Provenance(provenance))


# ---------------------------------------------------------------- buckets


def bucket_locales(counts: dict, k: int) -> tuple[set, set]:
    """Top-``k`` locales by sample count are high-resource; ties go to the lower index."""
    locales = sorted(counts, key=lambda loc: (-counts[loc], loc.index))
    if not 1 <= k < len(locales):
        raise ValueError(f"k must be in [1, {len(locales) - 1}], got {k}")
    return set(locales[:k]), set(locales[k:])


# ---------------------------------------------------------------- CSV


def write_csv(path, columns, rows):
    """Plot-ready CSV preceded by the format-version line."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(FORMAT_LINE + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if first != FORMAT_LINE:
            raise FormatError(f"missing format line {FORMAT_LINE!r}", 1, path)
        return list(csv.DictReader(f))
