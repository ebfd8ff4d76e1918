"""Feature-space foundations: schemas, vectors, datasets, interval sets,
manipulation constraints and seeded randomness.

Everything here is immutable once built. The only mutable object handed
around is a :class:`numpy.random.Generator`, which callers derive per unit
of work with :func:`derive_rng` and never share.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

RNG_ALGORITHM = "numpy.PCG64+SeedSequence"

BENIGN = 0
MALICIOUS = 1
UNLABELED = -1

LABEL_NAMES = {BENIGN: "benign", MALICIOUS: "malicious", UNLABELED: "unlabeled"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}

CONTINUOUS = "continuous"
INTEGER = "integer"


class CoreError(Exception):
    """Base class for errors raised by this package."""


class EmptySet(CoreError):
    pass


class NoInteger(CoreError):
    pass


class SchemaMismatch(CoreError):
    pass


class EmptyDataset(CoreError):
    pass


# ---------------------------------------------------------------------------
# Intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Interval:
    """A single real interval with independently open/closed endpoints.

    Empty intervals are representable (``is_empty``) but never survive
    normalization into an :class:`IntervalSet`.
    """

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints cannot be NaN")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @classmethod
    def closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, False, False)

    @property
    def is_empty(self) -> bool:
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and (self.lo_open or self.hi_open)

    @property
    def width(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    def __contains__(self, x: float) -> bool:
        if self.lo_open:
            if not x > self.lo:
                return False
        elif not x >= self.lo:
            return False
        if self.hi_open:
            return x < self.hi
        return x <= self.hi

    def intersect(self, other: "Interval") -> "Interval":
        if self.lo > other.lo:
            lo, lo_open = self.lo, self.lo_open
        elif other.lo > self.lo:
            lo, lo_open = other.lo, other.lo_open
        else:
            lo, lo_open = self.lo, self.lo_open or other.lo_open
        if self.hi < other.hi:
            hi, hi_open = self.hi, self.hi_open
        elif other.hi < self.hi:
            hi, hi_open = other.hi, other.hi_open
        else:
            hi, hi_open = self.hi, self.hi_open or other.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def integer_bounds(self) -> tuple[int, int]:
        """Smallest and largest integer inside; ``lo > hi`` when there are none."""
        lo = math.ceil(self.lo)
        if self.lo_open and lo == self.lo:
            lo += 1
        hi = math.floor(self.hi)
        if self.hi_open and hi == self.hi:
            hi -= 1
        return lo, hi

    def to_list(self) -> list:
        return [self.lo, self.hi, self.lo_open, self.hi_open]

    @classmethod
    def from_list(cls, item: Sequence) -> "Interval":
        lo, hi, lo_open, hi_open = item
        return cls(float(lo), float(hi), bool(lo_open), bool(hi_open))

    def __str__(self) -> str:
        if self.lo == self.hi and not self.is_empty:
            return f"{{{_fmt(self.lo)}}}"
        left = "(" if self.lo_open else "["
        right = ")" if self.hi_open else "]"
        return f"{left}{_fmt(self.lo)}, {_fmt(self.hi)}{right}"


def _fmt(x: float) -> str:
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _touch_or_overlap(a: Interval, b: Interval) -> bool:
    # a.lo <= b.lo assumed
    if b.lo < a.hi:
        return True
    if b.lo == a.hi:
        return not (a.hi_open and b.lo_open)
    return False


def _normalize(parts: Iterable[Interval]) -> tuple[Interval, ...]:
    live = sorted((p for p in parts if not p.is_empty), key=lambda p: (p.lo, p.lo_open))
    out: list[Interval] = []
    for p in live:
        if out and _touch_or_overlap(out[-1], p):
            last = out[-1]
            if p.hi > last.hi:
                hi, hi_open = p.hi, p.hi_open
            elif p.hi < last.hi:
                hi, hi_open = last.hi, last.hi_open
            else:
                hi, hi_open = last.hi, last.hi_open and p.hi_open
            out[-1] = Interval(last.lo, hi, last.lo_open, hi_open)
        else:
            out.append(p)
    return tuple(out)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint intervals kept in canonical (normalized) form.

    Construction always normalizes, so two sets with the same point
    membership compare equal.
    """

    parts: tuple[Interval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", _normalize(self.parts))

    @classmethod
    def of(cls, *parts: Interval) -> "IntervalSet":
        return cls(tuple(parts))

    @classmethod
    def closed(cls, lo: float, hi: float) -> "IntervalSet":
        return cls((Interval(lo, hi),))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @property
    def is_empty(self) -> bool:
        return not self.parts

    @property
    def measure(self) -> float:
        return sum(p.width for p in self.parts)

    def __contains__(self, x: float) -> bool:
        return any(x in p for p in self.parts)

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __and__(self, other: "IntervalSet") -> "IntervalSet":
        return interval_intersect(self, other)

    def __or__(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self.parts + other.parts)

    def count_integers(self) -> int:
        total = 0
        for p in self.parts:
            lo, hi = p.integer_bounds()
            if hi >= lo:
                total += hi - lo + 1
        return total

    def to_list(self) -> list:
        return [p.to_list() for p in self.parts]

    @classmethod
    def from_list(cls, items: Sequence) -> "IntervalSet":
        return cls(tuple(Interval.from_list(i) for i in items))

    def __str__(self) -> str:
        if not self.parts:
            return "∅"
        return " ∪ ".join(str(p) for p in self.parts)


def interval_intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    out = []
    i = j = 0
    pa, pb = a.parts, b.parts
    while i < len(pa) and j < len(pb):
        x = pa[i].intersect(pb[j])
        if not x.is_empty:
            out.append(x)
        # advance whichever part ends first
        ea = (pa[i].hi, not pa[i].hi_open)
        eb = (pb[j].hi, not pb[j].hi_open)
        if ea < eb:
            i += 1
        elif eb < ea:
            j += 1
        else:
            i += 1
            j += 1
    return IntervalSet(tuple(out))


def interval_complement(domain: Interval, s: IntervalSet) -> IntervalSet:
    """``domain \\ s`` with endpoint openness flipped at every cut."""
    s = interval_intersect(IntervalSet((domain,)), s)
    gaps = []
    cur, cur_open = domain.lo, domain.lo_open
    for p in s.parts:
        gaps.append(Interval(cur, p.lo, cur_open, not p.lo_open))
        cur, cur_open = p.hi, not p.hi_open
    gaps.append(Interval(cur, domain.hi, cur_open, domain.hi_open))
    return IntervalSet(tuple(gaps))


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("derivation keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """A 64-bit child seed determined by ``seed`` and the key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for one unit of work, e.g. ``(seed, "round", 3)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def sample_from(s: IntervalSet, kind: str, rng: np.random.Generator) -> float:
    """Draw uniformly from ``s``.

    Continuous kind: uniform over total length (isolated points only matter
    when the set has zero length). Integer kind: uniform over the integers
    contained in ``s``.
    """
    if s.is_empty:
        raise EmptySet("cannot sample from the empty set")
    if kind == INTEGER:
        bounds = [p.integer_bounds() for p in s.parts]
        counts = [max(0, hi - lo + 1) for lo, hi in bounds]
        total = sum(counts)
        if total == 0:
            raise NoInteger(f"{s} contains no integer")
        k = int(rng.integers(total))
        for (lo, _), c in zip(bounds, counts):
            if k < c:
                return float(lo + k)
            k -= c
        raise AssertionError("unreachable")

    widths = np.array([p.width for p in s.parts])
    total = widths.sum()
    if total == 0.0:
        return s.parts[int(rng.integers(len(s.parts)))].lo
    idx = int(np.searchsorted(np.cumsum(widths), rng.random() * total, side="right"))
    part = s.parts[min(idx, len(s.parts) - 1)]
    if part.width == 0.0:
        return part.lo
    for _ in range(64):
        v = part.lo + rng.random() * part.width
        v = min(max(v, part.lo), part.hi)
        if v in part:
            return float(v)
    nudge = 1e-9 * part.width
    v = min(max(v, part.lo + nudge), part.hi - nudge)
    return float(v)


# ---------------------------------------------------------------------------
# Schema, vectors, datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    domain: Interval

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, INTEGER):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        d = self.domain
        if d.lo_open or d.hi_open or d.lo > d.hi:
            raise ValueError(f"domain of {self.name} must be a non-empty closed interval")
        if self.kind == INTEGER and not (d.lo.is_integer() and d.hi.is_integer()):
            raise ValueError(f"integer feature {self.name} needs integer domain endpoints")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Feature:
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaMismatch(f"unknown feature {name!r}") from None

    def domain_set(self, i: int) -> IntervalSet:
        return IntervalSet((self.features[i].domain,))

    @property
    def lows(self) -> np.ndarray:
        return np.array([f.domain.lo for f in self.features])

    @property
    def highs(self) -> np.ndarray:
        return np.array([f.domain.hi for f in self.features])

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([f.kind == INTEGER for f in self.features])

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind, "domain": f.domain.to_list()}
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls(
            tuple(
                Feature(f["name"], f["kind"], Interval.from_list(f["domain"]))
                for f in d["features"]
            )
        )


@dataclass(frozen=True)
class FeatureVector:
    id: str
    values: tuple[float, ...]
    label: int = UNLABELED

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


def validate_vector(schema: FeatureSchema, fv: FeatureVector) -> list[str]:
    """All invariant violations of ``fv`` against ``schema``; empty means valid."""
    problems = []
    if fv.label not in LABEL_NAMES:
        problems.append(f"unknown label {fv.label!r}")
    if len(fv.values) != len(schema):
        problems.append(f"expected {len(schema)} values, got {len(fv.values)}")
        return problems
    for f, v in zip(schema.features, fv.values):
        if not math.isfinite(v):
            problems.append(f"{f.name}: non-finite value {v}")
            continue
        if v not in f.domain:
            problems.append(f"{f.name}: value {v} out of domain {f.domain}")
        if f.kind == INTEGER and not float(v).is_integer():
            problems.append(f"{f.name}: non-integral value {v}")
    return problems


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled feature vectors stored column-aligned with ``schema``.

    ``X`` is an ``(n, d)`` float64 array, ``y`` holds label codes
    (``BENIGN``/``MALICIOUS``/``UNLABELED``). Arrays are read-only.
    """

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64).reshape(-1, len(self.schema))
        y = np.asarray(self.y, dtype=np.int8).reshape(-1)
        if len(y) != len(X) or len(self.ids) != len(X):
            raise ValueError("X, y and ids must have equal length")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @classmethod
    def from_vectors(cls, schema: FeatureSchema, vectors: Sequence[FeatureVector]) -> "Dataset":
        for fv in vectors:
            problems = validate_vector(schema, fv)
            if problems:
                raise SchemaMismatch(f"vector {fv.id}: {'; '.join(problems)}")
        X = np.array([fv.values for fv in vectors], dtype=np.float64).reshape(-1, len(schema))
        return cls(schema, X, [fv.label for fv in vectors], [fv.id for fv in vectors])

    def __len__(self) -> int:
        return len(self.y)

    @property
    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector(i, tuple(x), int(l)) for i, x, l in zip(self.ids, self.X, self.y)]

    def __iter__(self) -> Iterator[FeatureVector]:
        return iter(self.vectors)

    @property
    def malicious_idx(self) -> np.ndarray:
        return np.flatnonzero(self.y == MALICIOUS)

    @property
    def benign_idx(self) -> np.ndarray:
        return np.flatnonzero(self.y == BENIGN)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.schema, self.X[idx], self.y[idx], [self.ids[i] for i in idx])

    @property
    def malicious(self) -> "Dataset":
        return self.subset(self.malicious_idx)

    @property
    def benign(self) -> "Dataset":
        return self.subset(self.benign_idx)

    def with_values(self, X: np.ndarray) -> "Dataset":
        return Dataset(self.schema, X, self.y, self.ids)

    def validate(self) -> list[str]:
        """Violations across the whole dataset (vectorized)."""
        problems = []
        X = self.X
        if not np.isfinite(X).all():
            problems.append("non-finite values present")
        lo, hi = self.schema.lows, self.schema.highs
        bad = (X < lo) | (X > hi)
        for j in np.flatnonzero(bad.any(axis=0)):
            problems.append(f"{self.schema[j].name}: {int(bad[:, j].sum())} values out of domain")
        intm = self.schema.integer_mask
        frac = (X[:, intm] != np.round(X[:, intm])).any(axis=0)
        for j in np.flatnonzero(intm)[frac]:
            problems.append(f"{self.schema[j].name}: non-integral values")
        if not np.isin(self.y, list(LABEL_NAMES)).all():
            problems.append("unknown label codes")
        return problems

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and self.ids == other.ids
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.X, other.X)
        )


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """Per-feature manipulation constraints.

    A missing entry means unconstrained (the schema domain). An empty
    semantics entry freezes the feature.
    """

    schema: FeatureSchema
    domain_map: Mapping[str, IntervalSet] = field(default_factory=dict)
    semantics_map: Mapping[str, IntervalSet] = field(default_factory=dict)

    def __post_init__(self):
        for table in (self.domain_map, self.semantics_map):
            for name, s in table.items():
                dom = self.schema.domain_set(self.schema.index(name))
                if interval_intersect(dom, s) != s:
                    raise ValueError(f"constraint for {name} leaves the schema domain")
        object.__setattr__(self, "domain_map", dict(self.domain_map))
        object.__setattr__(self, "semantics_map", dict(self.semantics_map))
        object.__setattr__(self, "_allowed_cache", {})

    def domain_of(self, i: int) -> IntervalSet:
        name = self.schema[i].name
        return self.domain_map.get(name, self.schema.domain_set(i))

    def semantics_of(self, i: int) -> IntervalSet:
        name = self.schema[i].name
        return self.semantics_map.get(name, self.schema.domain_set(i))

    def allowed(self, i: int) -> IntervalSet:
        """domain_map ∩ semantics_map for feature ``i``."""
        cache = self._allowed_cache
        if i not in cache:
            cache[i] = interval_intersect(self.domain_of(i), self.semantics_of(i))
        return cache[i]

    def frozen(self, *names: str) -> "ConstraintSet":
        sem = dict(self.semantics_map)
        for n in names:
            self.schema.index(n)
            sem[n] = IntervalSet.empty()
        return ConstraintSet(self.schema, self.domain_map, sem)

    def to_dict(self) -> dict:
        return {
            "domain_map": {k: v.to_list() for k, v in self.domain_map.items()},
            "semantics_map": {k: v.to_list() for k, v in self.semantics_map.items()},
        }

    @classmethod
    def from_dict(cls, schema: FeatureSchema, d: Mapping) -> "ConstraintSet":
        return cls(
            schema,
            {k: IntervalSet.from_list(v) for k, v in d.get("domain_map", {}).items()},
            {k: IntervalSet.from_list(v) for k, v in d.get("semantics_map", {}).items()},
        )


def unconstrained(schema: FeatureSchema) -> ConstraintSet:
    return ConstraintSet(schema)


def schema_to_json(schema: FeatureSchema, constraints: ConstraintSet | None = None) -> str:
    doc = schema.to_dict()
    if constraints is not None:
        doc["constraints"] = constraints.to_dict()
    return json.dumps(doc, indent=2)


def schema_from_json(text: str) -> tuple[FeatureSchema, ConstraintSet]:
    doc = json.loads(text)
    schema = FeatureSchema.from_dict(doc)
    return schema, ConstraintSet.from_dict(schema, doc.get("constraints", {}))
