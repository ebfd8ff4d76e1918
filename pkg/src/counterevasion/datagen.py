"""Synthetic website feature data.

Sixteen cross-layer features (URL/content statistics from the application
layer, traffic statistics from the network layer). Benign pages are one
truncated-normal population per feature. Malicious pages come from a number
of campaigns: each campaign gets a center drawn per feature from the
malicious center distribution and its pages scatter tightly around it, so a
single feature rarely gives a campaign away but the conjunction does.
Domains and parameters are invented but web-plausible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .core import (
    BENIGN,
    CONTINUOUS,
    INTEGER,
    LABEL_CODES,
    LABEL_NAMES,
    MALICIOUS,
    ConstraintSet,
    CoreError,
    Dataset,
    Feature,
    FeatureSchema,
    Interval,
    IntervalSet,
    SchemaMismatch,
    schema_from_json,
    schema_to_json,
)


class ParseError(CoreError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + msg)
        self.line = line
        self.column = column


# name, kind, domain, benign (mean, sd), malicious campaign centers (mean, sd)
FEATURE_TABLE = [
    ("URL_length", INTEGER, (12, 2048), (38, 12), (59, 12)),
    ("Content_length", INTEGER, (1, 2_000_000), (62_000, 24_000), (20_000, 24_000)),
    ("#Redirect", INTEGER, (0, 50), (1.0, 1.0), (2.75, 1.0)),
    ("#Scripts", INTEGER, (0, 500), (14, 7), (26.25, 7)),
    ("#Embedded_URL", INTEGER, (0, 10_000), (130, 55), (33.75, 55)),
    ("#Special_character", INTEGER, (0, 500), (5, 3), (10.25, 3)),
    ("#Iframe", INTEGER, (0, 200), (1.0, 1.2), (3.1, 1.2)),
    ("#JS_function", INTEGER, (0, 10_000), (85, 40), (15, 40)),
    ("#Long_string", INTEGER, (0, 1_000), (3, 3), (8.25, 3)),
    ("#Src_app_bytes", INTEGER, (0, 1_000_000), (3_000, 1_000), (4_750, 1_000)),
    ("#Local_app_packet", INTEGER, (0, 10_000), (42, 15), (15.75, 15)),
    ("Dest_app_bytes", INTEGER, (0, 10_000_000), (82_000, 30_000), (29_500, 30_000)),
    ("Duration", CONTINUOUS, (0.01, 300.0), (2.0, 1.0), (3.75, 1.0)),
    ("#Dist_remote_tcp_port", INTEGER, (0, 100), (2.0, 1.0), (3.75, 1.0)),
    ("#Dist_remote_IP", INTEGER, (0, 100), (3.0, 1.5), (5.625, 1.5)),
    ("#DNS_query", INTEGER, (0, 500), (5, 2), (8.5, 2)),
]


def default_schema() -> tuple[FeatureSchema, ConstraintSet]:
    """The 16-feature schema with its default manipulation constraints.

    ``#Scripts`` may not drop to 0 (the attack needs a script), and
    ``URL_length``/``Content_length`` keep lower bounds a working page
    cannot go below.
    """
    schema = FeatureSchema(
        tuple(Feature(name, kind, Interval.closed(*dom)) for name, kind, dom, _, _ in FEATURE_TABLE)
    )
    dom = {n: schema[schema.index(n)].domain for n in ("URL_length", "Content_length", "#Scripts")}
    constraints = ConstraintSet(
        schema,
        domain_map={
            "URL_length": IntervalSet.closed(12, dom["URL_length"].hi),
            "Content_length": IntervalSet.closed(1, dom["Content_length"].hi),
        },
        semantics_map={
            "#Scripts": IntervalSet.closed(1, dom["#Scripts"].hi),
        },
    )
    return schema, constraints


@dataclass(frozen=True)
class GeneratorParams:
    n_malicious: int = 838
    n_benign: int = 3352
    separation: float = 1.0  # scales the benign-to-campaign-center gap; smaller means more overlap
    spread: float = 1.0  # scales every standard deviation
    n_campaigns: int = 20
    campaign_spread: float = 0.12  # within-campaign sd as a fraction of the benign sd
    noise_fraction: float = 0.0  # share of features made label-independent
    class_params: dict = field(default_factory=dict)  # name -> ((mb, sb), (mm, sm)) overrides

    def __post_init__(self):
        if self.n_malicious < 0 or self.n_benign < 0:
            raise ValueError("counts must be non-negative")
        if self.spread <= 0 or self.campaign_spread <= 0:
            raise ValueError("spreads must be positive")
        if self.n_campaigns < 1:
            raise ValueError("need at least one campaign")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        for name, (b, m) in self.class_params.items():
            if b[1] <= 0 or m[1] <= 0:
                raise ValueError(f"spreads for {name} must be positive")

    @classmethod
    def with_ratio(cls, n_malicious: int, ratio: float = 4.0, **kw) -> "GeneratorParams":
        """Benign count fixed at ``ratio`` times the malicious count."""
        return cls(n_malicious=n_malicious, n_benign=int(round(ratio * n_malicious)), **kw)

    def to_dict(self) -> dict:
        return {
            "n_malicious": self.n_malicious,
            "n_benign": self.n_benign,
            "separation": self.separation,
            "spread": self.spread,
            "noise_fraction": self.noise_fraction,
            "n_campaigns": self.n_campaigns,
            "campaign_spread": self.campaign_spread,
            "class_params": {k: [list(b), list(m)] for k, (b, m) in self.class_params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        d = dict(d)
        cp = {k: (tuple(b), tuple(m)) for k, (b, m) in d.pop("class_params", {}).items()}
        return cls(class_params=cp, **d)


def class_conditionals(params: GeneratorParams, schema: FeatureSchema | None = None) -> dict:
    """Resolved ``name -> ((benign mean, sd), (center mean, sd) or None)``.

    ``None`` marks a label-independent feature: malicious values follow the
    benign distribution.
    """
    table = {name: (b, m) for name, _, _, b, m in FEATURE_TABLE}
    table.update(params.class_params)
    names = schema.names if schema is not None else [r[0] for r in FEATURE_TABLE]
    # weakest features become noise first
    gap = {n: abs(table[n][1][0] - table[n][0][0]) / table[n][0][1] for n in names}
    n_noise = int(math.floor(params.noise_fraction * len(names) + 1e-9))
    noise = set(sorted(names, key=lambda n: (gap[n], n))[:n_noise])
    out = {}
    for n in names:
        (mb, sb), (mm, sm) = table[n]
        benign = (mb, sb * params.spread)
        if n in noise:
            out[n] = (benign, None)
        else:
            out[n] = (benign, (mb + params.separation * (mm - mb), sm * params.spread))
    return out


def _truncnorm(mean, sd, lo, hi, size, rng):
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)


def generate(params: GeneratorParams, rng: np.random.Generator, schema: FeatureSchema | None = None) -> Dataset:
    """Labeled dataset drawn from the benign population and the malicious campaigns.

    Rows are shuffled; ids are ``w000000``-style and positional.
    """
    if schema is None:
        schema, _ = default_schema()
    cond = class_conditionals(params, schema)
    nm, nb = params.n_malicious, params.n_benign
    n = nm + nb
    y = np.concatenate([np.full(nm, MALICIOUS), np.full(nb, BENIGN)]).astype(np.int8)
    campaign = rng.integers(params.n_campaigns, size=nm)
    X = np.empty((n, len(schema)))
    for j, f in enumerate(schema.features):
        (mb, sb), centers = cond[f.name]
        lo, hi = f.domain.lo, f.domain.hi
        col = np.empty(n)
        if nb:
            col[nm:] = _truncnorm(mb, sb, lo, hi, nb, rng)
        if nm and centers is None:
            col[:nm] = _truncnorm(mb, sb, lo, hi, nm, rng)
        elif nm:
            mu = rng.normal(centers[0], centers[1], params.n_campaigns)
            for k in range(params.n_campaigns):
                rows = np.flatnonzero(campaign == k)
                if len(rows):
                    col[rows] = _truncnorm(mu[k], params.campaign_spread * sb, lo, hi, len(rows), rng)
        if f.kind == INTEGER:
            col = np.clip(np.round(col), lo, hi)
        else:
            col = np.clip(col, lo, hi)
        X[:, j] = col
    perm = rng.permutation(n)
    return Dataset(schema, X[perm], y[perm], [f"w{i:06d}" for i in range(n)])


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _format(v: float, kind: str) -> str:
    if kind == INTEGER:
        return str(int(v))
    return repr(float(v))


def dumps_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", *ds.schema.names])
    kinds = [f.kind for f in ds.schema.features]
    for i in range(len(ds)):
        label = LABEL_NAMES[int(ds.y[i])]
        w.writerow([ds.ids[i], label, *(_format(v, k) for v, k in zip(ds.X[i], kinds))])
    return buf.getvalue()


def save_csv(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_csv(ds), encoding="utf-8", newline="")


def loads_csv(text: str, schema: FeatureSchema | None = None) -> Dataset:
    if schema is None:
        schema, _ = default_schema()
    rows = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    expected = ["id", "label", *schema.names]
    if header != expected:
        raise SchemaMismatch(f"header {header} does not match schema columns {expected}")
    ids, ys, X = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(expected):
            raise ParseError(f"expected {len(expected)} fields, got {len(row)}", lineno)
        label = row[1]
        if label not in ("benign", "malicious"):
            raise ParseError(f"bad label {label!r}", lineno, 2)
        vals = []
        for col, (tok, f) in enumerate(zip(row[2:], schema.features), start=3):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"{f.name}: not a number {tok!r}", lineno, col) from None
            if not math.isfinite(v) or v not in f.domain:
                raise ParseError(f"{f.name}: value {tok} outside domain {f.domain}", lineno, col)
            if f.kind == INTEGER and not v.is_integer():
                raise ParseError(f"{f.name}: non-integral value {tok}", lineno, col)
            vals.append(v)
        ids.append(row[0])
        ys.append(LABEL_CODES[label])
        X.append(vals)
    return Dataset(schema, np.array(X, dtype=np.float64).reshape(-1, len(schema)), ys, ids)


def load_csv(path, schema: FeatureSchema | None = None) -> Dataset:
    return loads_csv(Path(path).read_text(encoding="utf-8"), schema)


def desk_params(**overrides) -> GeneratorParams:
    """Default desk-scale parameters: 838 malicious, 4:1 benign."""
    return replace(GeneratorParams.with_ratio(838), **overrides)


def schema_from_json_file(path) -> tuple[FeatureSchema, ConstraintSet]:
    return schema_from_json(Path(path).read_text(encoding="utf-8"))


def save_schema_json(path, schema: FeatureSchema, constraints: ConstraintSet | None = None) -> None:
    Path(path).write_text(schema_to_json(schema, constraints) + "\n", encoding="utf-8")
