"""Keyword dictionary and user/group interest models.

The dictionary is a flat, ordered keyword list standing in for an
Open-Directory-style category tree. Interest models map keywords to
positive integer preference weights; group profiles are plain keyword sets
that get folded into member models as they join groups.
"""

from __future__ import annotations

import struct
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path

import numpy as np

PROFILE_ENTRY = struct.Struct("<If")


class TaxonomyError(ValueError):
    pass


class DuplicateKeywordError(TaxonomyError):
    def __init__(self, keyword: str):
        super().__init__(f"duplicate keyword in dictionary: {keyword!r}")
        self.keyword = keyword


class UnknownKeywordError(TaxonomyError):
    def __init__(self, keywords: Iterable[str]):
        self.keywords = sorted(set(keywords))
        super().__init__(f"keywords not in dictionary: {', '.join(self.keywords)}")


@dataclass(frozen=True)
class KeywordDictionary:
    keywords: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.keywords:
            raise TaxonomyError("dictionary must contain at least one keyword")
        index: dict[str, int] = {}
        for pos, kw in enumerate(self.keywords):
            if kw in index:
                raise DuplicateKeywordError(kw)
            index[kw] = pos
        object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return len(self.keywords)

    def __len__(self) -> int:
        return len(self.keywords)

    def __contains__(self, keyword: object) -> bool:
        return keyword in self._index

    def index_of(self, keyword: str) -> int:
        """0-based position of ``keyword`` (position j in 1..n is ``index_of + 1``)."""
        try:
            return self._index[keyword]
        except KeyError:
            raise UnknownKeywordError([keyword]) from None

    def check(self, keywords: Iterable[str]) -> None:
        missing = [kw for kw in keywords if kw not in self._index]
        if missing:
            raise UnknownKeywordError(missing)


def parse_dictionary(lines: Iterable[str]) -> KeywordDictionary:
    keywords = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if line:
            keywords.append(line)
    return KeywordDictionary(tuple(keywords))


def load_dictionary(source: str | Path | Iterable[str] | None = None) -> KeywordDictionary:
    """Load a keyword dictionary from a fixture.

    ``source`` may be a path, an iterable of lines, or ``None`` for the
    bundled sample fixture. Blank lines and ``#`` comments are skipped and
    file order defines the index.
    """
    if source is None:
        text = resources.files("pcbe.data").joinpath("odp_sample.txt").read_text("utf-8")
        return parse_dictionary(text.splitlines())
    if isinstance(source, (str, Path)):
        return parse_dictionary(Path(source).read_text("utf-8").splitlines())
    return parse_dictionary(source)


def synthetic_dictionary(n: int, prefix: str = "topic") -> KeywordDictionary:
    """A dictionary of ``n`` generated keywords, for benchmarks at full dictionary scale."""
    width = len(str(n))
    return KeywordDictionary(tuple(f"{prefix}/kw{i:0{width}d}" for i in range(1, n + 1)))


@dataclass(frozen=True)
class InterestModel:
    entries: Mapping[str, int]
    owner: str | None = None

    def __post_init__(self):
        for kw, w in self.entries.items():
            if int(w) != w or w < 1:
                raise TaxonomyError(f"weight for {kw!r} must be a positive integer, got {w!r}")
        object.__setattr__(self, "entries", dict(self.entries))

    @property
    def m(self) -> int:
        return len(self.entries)

    def total_weight(self) -> int:
        return sum(self.entries.values())

    def __getitem__(self, keyword: str) -> int:
        return self.entries[keyword]

    def __contains__(self, keyword: object) -> bool:
        return keyword in self.entries


@dataclass(frozen=True)
class GroupProfile:
    group_id: str
    keywords: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "keywords", frozenset(self.keywords))
        if not self.keywords:
            raise TaxonomyError(f"group {self.group_id!r} has an empty keyword profile")

    def as_model(self) -> InterestModel:
        # Group profiles carry no weights: every keyword enters at the insertion weight.
        return InterestModel({kw: 1 for kw in self.keywords}, owner=self.group_id)


def init_interest(chosen: Iterable[str], dictionary: KeywordDictionary,
                  owner: str | None = None) -> InterestModel:
    chosen = list(chosen)
    if not chosen:
        raise TaxonomyError("initial interest set must not be empty")
    dictionary.check(chosen)
    return InterestModel({kw: 1 for kw in chosen}, owner=owner)


def update_interest(model: InterestModel, groups: Iterable[Iterable[str] | GroupProfile],
                    dictionary: KeywordDictionary | None = None) -> InterestModel:
    """Fold group keyword sets into ``model``: increment known keywords, insert new ones at 1.

    All keywords are validated before anything is applied, so a bad group
    leaves no partial update behind.
    """
    sets = [g.keywords if isinstance(g, GroupProfile) else list(g) for g in groups]
    if dictionary is not None:
        dictionary.check(kw for s in sets for kw in s)
    counts = Counter(model.entries)
    for keyword_set in sets:
        for kw in keyword_set:
            counts[kw] += 1
    return InterestModel(dict(counts), owner=model.owner)


def to_plain_vector(model: InterestModel, dictionary: KeywordDictionary) -> np.ndarray:
    dictionary.check(model.entries)
    vec = np.zeros(dictionary.n, dtype=np.float64)
    for kw, w in model.entries.items():
        vec[dictionary.index_of(kw)] = w
    return vec


def serialize_profile(model: InterestModel, dictionary: KeywordDictionary) -> bytes:
    """Binary profile: per keyword a little-endian uint32 index and float32 weight."""
    dictionary.check(model.entries)
    items = sorted((dictionary.index_of(kw), w) for kw, w in model.entries.items())
    return b"".join(PROFILE_ENTRY.pack(i, float(w)) for i, w in items)


def deserialize_profile(blob: bytes, dictionary: KeywordDictionary,
                        owner: str | None = None) -> InterestModel:
    if len(blob) % PROFILE_ENTRY.size:
        raise TaxonomyError(f"profile blob length {len(blob)} is not a multiple of {PROFILE_ENTRY.size}")
    entries = {}
    for idx, w in PROFILE_ENTRY.iter_unpack(blob):
        if idx >= dictionary.n:
            raise TaxonomyError(f"keyword index {idx} out of range for n={dictionary.n}")
        entries[dictionary.keywords[idx]] = int(w)
    return InterestModel(entries, owner=owner)


def kilobytes(nbytes: int, places: int = 4) -> Decimal:
    """Byte count as KB (1024 B) rounded half-up to ``places`` decimals."""
    q = Decimal(1).scaleb(-places)
    return (Decimal(nbytes) / Decimal(1024)).quantize(q, rounding=ROUND_HALF_UP)
