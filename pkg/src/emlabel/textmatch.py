"""Binary keyword features and word-search candidate generation.

Matching is plain case-insensitive substring containment, no stemming and
no regular expressions; richer matchers can slot in behind the same
feature interface later.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class KeywordFeatureSet:
    """Ordered, lower-cased match strings; index i is stable for a version."""

    match_strings: tuple[str, ...] = ()
    version: int = 0

    def __post_init__(self):
        lowered = tuple(s.lower() for s in self.match_strings)
        if any(not s for s in lowered):
            raise InvalidArgument("keyword features must be nonempty strings")
        if len(set(lowered)) != len(lowered):
            raise InvalidArgument("duplicate keyword feature")
        object.__setattr__(self, "match_strings", lowered)

    def __len__(self) -> int:
        return len(self.match_strings)

    def __iter__(self):
        return iter(self.match_strings)


def keyword_bits(obj, features: KeywordFeatureSet) -> np.ndarray:
    """bit i = 1 iff the lower-cased listing text contains match_strings[i]."""
    return text_bits(obj.text, features)


def text_bits(text: str, features: KeywordFeatureSet) -> np.ndarray:
    lowered = text.lower()
    return np.array([1 if s in lowered else 0 for s in features], dtype=np.uint8)


def bits_matrix(texts, features: KeywordFeatureSet) -> np.ndarray:
    """Row per text, column per feature."""
    out = np.zeros((len(texts), len(features)), dtype=np.uint8)
    for j, s in enumerate(features):
        for i, t in enumerate(texts):
            if s in t:  # texts are pre-lowered by the catalog
                out[i, j] = 1
    return out


def _term_digest(term: str) -> int:
    return int.from_bytes(hashlib.blake2s(term.encode("utf-8")).digest()[:8], "big")


def search_matches(catalog, term: str) -> list[str]:
    """All object ids whose text contains the term, case-insensitive."""
    if not term:
        raise InvalidArgument("search term must be nonempty")
    needle = term.lower()
    return [catalog.ids[i] for i, t in enumerate(catalog.lower_texts) if needle in t]


def word_search(catalog, term: str, seed: int, page: int = 0, page_size: int = 48):
    """Deterministically shuffled page of matching object ids.

    Returns (page_ids, total_matches). The shuffle order depends only on
    (term, seed), so the union of all pages is exactly the match set and
    repeated calls return identical pages.
    """
    if page < 0 or page_size < 1:
        raise InvalidArgument("page must be >= 0 and page_size >= 1")
    matches = sorted(search_matches(catalog, term))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, _term_digest(term)])
    order = rng.permutation(len(matches))
    shuffled = [matches[i] for i in order]
    start = page * page_size
    return shuffled[start : start + page_size], len(matches)
