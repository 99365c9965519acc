"""Hashing tokenizer: whole words plus boundary-marked character trigrams."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _accel

PAD, CLS, SEP, UNK_LOCALE = 0, 1, 2, 3
N_RESERVED = 4


@dataclass(frozen=True)
class TokenizerSettings:
    n_locales: int
    n_buckets: int
    max_len: int

    @property
    def bucket_offset(self) -> int:
        return N_RESERVED + self.n_locales

    @property
    def vocab_total(self) -> int:
        return self.bucket_offset + self.n_buckets


def locale_token(locale_index: int | None) -> int:
    """Reserved id for a locale; ``None`` means unknown."""
    return UNK_LOCALE if locale_index is None else N_RESERVED + locale_index


def pieces(query: str) -> list[str]:
    """Word and trigram strings in emission order."""
    out = []
    for word in query.lower().split():
        out.append(word)
        marked = "<" + word + ">"
        out.extend(marked[i:i + 3] for i in range(len(marked) - 2))
    return out


def bucket_ids(query: str, n_buckets: int, offset: int) -> list[int]:
    return list(_bucket_ids(query, n_buckets, offset))


@lru_cache(maxsize=1 << 17)
def _bucket_ids(query, n_buckets, offset):
    enc = [p.encode("utf-8") for p in pieces(query)]
    if not enc:
        return ()
    offsets = np.zeros(len(enc) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(e) for e in enc])
    hashes = _accel.fnv1a(np.frombuffer(b"".join(enc), dtype=np.uint8), offsets)
    return tuple(((hashes % np.uint64(n_buckets)).astype(np.int64) + offset).tolist())


def tokenize(query: str, locale: int | None, settings: TokenizerSettings, with_locale: bool = True) -> list[int]:
    """Token ids: ``[CLS]`` then, if ``with_locale``, the locale token and ``[SEP]``.

    ``locale`` is a locale index, or ``None`` for an unknown locale (mapped to
    UNK_LOCALE). Sequences are truncated to ``settings.max_len``.
    """
    if settings.max_len < 3:
        raise ValueError("max_len must be >= 3")
    ids = [CLS]
    if with_locale:
        ids += [locale_token(locale), SEP]
    ids += bucket_ids(query, settings.n_buckets, settings.bucket_offset)
    return ids[: settings.max_len]


def pad_batch(seqs: list[list[int]], length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out
