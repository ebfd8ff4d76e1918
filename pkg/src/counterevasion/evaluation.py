"""Metrics, the end-to-end defense-vs-attack evaluation, experiment grids,
and feature-usage analyses.

Seeds are derived hierarchically from one master seed:
``master -> ("rep", r) -> {"data", "split", "attack", "defense"}``. The
attack seed does not depend on the strategy, so single-round attacks are
identical across strategies, and round streams are prefix-stable, so a grid
can compute the longest chain once and read shorter runs off its prefix.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    BENIGN,
    MALICIOUS,
    ConstraintSet,
    Dataset,
    EmptyDataset,
    derive_rng,
    derive_seed,
)
from .datagen import GeneratorParams, default_schema, desk_params, generate, load_csv, schema_from_json_file
from .defense import DefenseConfig, Ensemble, build_ensemble, vote_decision
from .dtree import DecisionTree, TrainParams, entropy, train
from .evasion import (
    FAILED,
    MANIPULATIONS,
    STRATEGIES,
    SUCCESS,
    ManipulationOutcome,
    adaptation_rounds,
)

# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionReport:
    acc: float | None
    tp: float | None
    fn: float | None
    fp: float | None
    tp_count: int
    fn_count: int
    fp_count: int
    tn_count: int

    @property
    def n_malicious(self) -> int:
        return self.tp_count + self.fn_count

    @property
    def n_benign(self) -> int:
        return self.fp_count + self.tn_count

    def to_dict(self) -> dict:
        return asdict(self)


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def compute_metrics(predicted: Sequence[int], truth: Sequence[int]) -> DetectionReport:
    """Confusion rates with malicious as the positive class.

    Rates over an absent class are ``None`` rather than 0.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    pm = predicted == MALICIOUS
    tm = truth == MALICIOUS
    tb = truth == BENIGN
    tp = int((pm & tm).sum())
    fn = int((~pm & tm).sum())
    fp = int((pm & tb).sum())
    tn = int((~pm & tb).sum())
    n = tp + fn + fp + tn
    return DetectionReport(
        acc=_rate(tp + tn, n),
        tp=_rate(tp, tp + fn),
        fn=_rate(fn, tp + fn),
        fp=_rate(fp, fp + tn),
        tp_count=tp,
        fn_count=fn,
        fp_count=fp,
        tn_count=tn,
    )


@dataclass(frozen=True)
class AttackReport:
    fn_rate: float | None
    mean_manipulated_features: float | None
    failed_attempt_rate: float | None
    n_success: int = 0
    n_failed: int = 0
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def attack_stats(
    outcomes: Sequence[ManipulationOutcome],
    post_predictions: Sequence[int] | None = None,
    truth: Sequence[int] | None = None,
) -> AttackReport:
    """FN of the target model after the attack, #MF over successes and FA
    over attempted (non-skipped) manipulations.

    Without predictions the FN rate is derived from the outcomes alone:
    every success and every skipped vector is a false negative.
    """
    st = Counter(o.status for o in outcomes)
    ns, nf = st[SUCCESS], st[FAILED]
    nk = len(outcomes) - ns - nf
    mf = [o.n_manipulated for o in outcomes if o.status == SUCCESS]
    if post_predictions is not None:
        fn_rate = compute_metrics(post_predictions, truth).fn
    else:
        fn_rate = _rate(ns + nk, len(outcomes))
    return AttackReport(
        fn_rate=fn_rate,
        mean_manipulated_features=float(np.mean(mf)) if mf else None,
        failed_attempt_rate=_rate(nf, ns + nf),
        n_success=ns,
        n_failed=nf,
        n_skipped=nk,
    )


# ---------------------------------------------------------------------------
# Experiment setup
# ---------------------------------------------------------------------------


def split_dataset(ds: Dataset, rng: np.random.Generator, train_fraction: float = 0.5) -> tuple[Dataset, Dataset]:
    """Stratified split into (training, evaluation) sets, keeping row order."""
    train_idx = []
    for label in (MALICIOUS, BENIGN):
        idx = np.flatnonzero(ds.y == label)
        k = int(round(train_fraction * len(idx)))
        train_idx.append(rng.permutation(idx)[:k])
    tr = np.sort(np.concatenate(train_idx)).astype(np.intp)
    mask = np.zeros(len(ds), bool)
    mask[tr] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


@dataclass(frozen=True)
class ExperimentSpec:
    """One evaluation scenario. ``alpha == 0`` disables the attack."""

    st_a: str = "full"
    f_a: str = "F1"
    alpha: int = 1
    st_d: str = "full"
    f_d: str = "F1"
    gamma: int = 8
    generator: GeneratorParams = field(default_factory=desk_params)
    data_csv: str | None = None
    schema_json: str | None = None
    defender_csv: str | None = None  # proactive data; defaults to the training split
    train_fraction: float = 0.5
    seed: int = 0
    reps: int = 5
    train_params: TrainParams = TrainParams()

    def __post_init__(self):
        for s in (self.st_a, self.st_d):
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for f in (self.f_a, self.f_d):
            if f not in MANIPULATIONS:
                raise ValueError(f"unknown manipulation {f!r}")
        if self.alpha < 0 or self.gamma < 0 or self.reps < 1:
            raise ValueError("alpha, gamma must be >= 0 and reps >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class RepContext:
    rep: int
    rep_seed: int
    train: Dataset
    test: Dataset
    defender: Dataset
    constraints: ConstraintSet
    m0: DecisionTree
    train_params: TrainParams


def prepare_rep(spec: ExperimentSpec, rep: int) -> RepContext:
    rep_seed = derive_seed(spec.seed, "rep", rep)
    if spec.schema_json:
        schema, constraints = schema_from_json_file(spec.schema_json)
    else:
        schema, constraints = default_schema()
    if spec.data_csv:
        data = load_csv(spec.data_csv, schema)
    else:
        data = generate(spec.generator, derive_rng(rep_seed, "data"), schema)
    tr, te = split_dataset(data, derive_rng(rep_seed, "split"), spec.train_fraction)
    defender = load_csv(spec.defender_csv, schema) if spec.defender_csv else tr
    m0 = train(tr, spec.train_params)
    return RepContext(rep, rep_seed, tr, te, defender, constraints, m0, spec.train_params)


def attack_chain(ctx: RepContext, strategy: str, manipulation: str, alpha: int):
    """Rounds ``1..alpha`` of the attack on the evaluation split."""
    if alpha == 0:
        return []
    return adaptation_rounds(
        ctx.m0, ctx.test, strategy, manipulation, alpha, ctx.constraints,
        ctx.train_params, derive_seed(ctx.rep_seed, "attack"), "attack", retrain_last=False,
    )


def defense_ensemble(ctx: RepContext, strategy: str, manipulation: str, gamma: int) -> Ensemble:
    cfg = DefenseConfig(
        strategy, manipulation, gamma, ctx.constraints, ctx.train_params, derive_seed(ctx.rep_seed, "defense")
    )
    return build_ensemble(ctx.m0, ctx.defender, cfg)


@dataclass(frozen=True)
class RepResult:
    ensemble: DetectionReport
    static: DetectionReport  # M_0 alone on the same data
    attack: AttackReport | None


def _score(ctx: RepContext, data: Dataset, votes: np.ndarray, rounds) -> RepResult:
    ens_pred = np.where(vote_decision(votes), MALICIOUS, BENIGN)
    static_pred = np.where(votes[:, 0], MALICIOUS, BENIGN)
    truth = ctx.test.y
    attack = None
    if rounds:
        attack = attack_stats(rounds[-1].outcomes, static_pred, truth)
    return RepResult(compute_metrics(ens_pred, truth), compute_metrics(static_pred, truth), attack)


def evaluate_rep(spec: ExperimentSpec, rep: int) -> RepResult:
    ctx = prepare_rep(spec, rep)
    rounds = attack_chain(ctx, spec.st_a, spec.f_a, spec.alpha)
    data = rounds[-1].dataset if rounds else ctx.test
    ens = defense_ensemble(ctx, spec.st_d, spec.f_d, spec.gamma)
    votes = np.column_stack([t.predict(data.X) == MALICIOUS for t in (ens.m0, *ens.proactive)])
    return _score(ctx, data, votes, rounds)


def _mean_std(values: Iterable[float | None]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


@dataclass(frozen=True)
class EvaluationResult:
    spec: ExperimentSpec
    reps: tuple[RepResult, ...]

    def mean(self, which: str, metric: str) -> float | None:
        vals = []
        for r in self.reps:
            rep = getattr(r, which)
            vals.append(None if rep is None else getattr(rep, metric))
        return _mean_std(vals)[0]

    def summary(self) -> dict:
        out = {}
        for which, metrics in (
            ("ensemble", ("acc", "tp", "fn", "fp")),
            ("static", ("acc", "tp", "fn", "fp")),
            ("attack", ("fn_rate", "mean_manipulated_features", "failed_attempt_rate")),
        ):
            block = {}
            for m in metrics:
                mean, std = _mean_std(
                    None if getattr(r, which) is None else getattr(getattr(r, which), m) for r in self.reps
                )
                block[m] = mean
                block[m + "_std"] = std
            out[which] = block
        return out


def evaluate(spec: ExperimentSpec) -> EvaluationResult:
    """Train M_0, attack the evaluation split, train the proactive ensemble,
    and score its detections against ground truth; repeated ``spec.reps`` times."""
    return EvaluationResult(spec, tuple(evaluate_rep(spec, r) for r in range(spec.reps)))


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Cell:
    st_a: str
    st_d: str
    f_a: str
    f_d: str
    alpha: int
    gamma: int

    @property
    def cell_id(self) -> str:
        return f"{self.st_a}:{self.st_d}:{self.f_a}:{self.f_d}:a{self.alpha}:g{self.gamma}"


def grid_cells(
    st_a: Sequence[str] = STRATEGIES,
    st_d: Sequence[str] = STRATEGIES,
    f_a: Sequence[str] = MANIPULATIONS,
    f_d: Sequence[str] = MANIPULATIONS,
    alphas: Sequence[int] = (1,),
    gammas: Sequence[int] = (8,),
) -> list[Cell]:
    return [Cell(*c) for c in itertools.product(st_a, st_d, f_a, f_d, alphas, gammas)]


def sweep_cells(alphas=range(0, 9), gammas=range(0, 10), strategies=STRATEGIES, manipulations=MANIPULATIONS) -> list[Cell]:
    """Matched-strategy, matched-algorithm cells for the gamma-minus-alpha sweep."""
    return [
        Cell(s, s, f, f, a, g)
        for s in strategies
        for f in manipulations
        for a in alphas
        for g in gammas
    ]


@dataclass(frozen=True)
class CellFailure:
    """A repetition of a grid cell that raised instead of producing reports."""

    error: str


def _guard(fn):
    try:
        return fn(), None
    except Exception as exc:  # recorded in the row; the grid keeps going
        return None, f"{type(exc).__name__}: {exc}"


def _grid_rep(args) -> dict:
    spec, cells, rep = args
    ctx, err = _guard(lambda: prepare_rep(spec, rep))
    if err:
        return {c: CellFailure(err) for c in cells}
    max_alpha: dict[tuple, int] = {}
    max_gamma: dict[tuple, int] = {}
    for c in cells:
        if c.alpha > 0:
            k = (c.st_a, c.f_a)
            max_alpha[k] = max(max_alpha.get(k, 0), c.alpha)
        k = (c.st_d, c.f_d)
        max_gamma[k] = max(max_gamma.get(k, 0), c.gamma)
    chains = {k: _guard(lambda k=k, a=a: attack_chain(ctx, k[0], k[1], a)) for k, a in sorted(max_alpha.items())}
    ensembles = {k: _guard(lambda k=k, g=g: defense_ensemble(ctx, k[0], k[1], g)) for k, g in sorted(max_gamma.items())}

    pred_cache: dict[tuple, np.ndarray] = {}

    def votes_for(dkey, data, ens: Ensemble, ekey, gamma):
        cols = []
        for t_i, tree in enumerate((ens.m0, *ens.proactive[:gamma])):
            key = (dkey, "m0") if t_i == 0 else (dkey, ekey, t_i)
            if key not in pred_cache:
                pred_cache[key] = tree.predict(data.X) == MALICIOUS
            cols.append(pred_cache[key])
        return np.column_stack(cols)

    out = {}
    for c in cells:
        ekey = (c.st_d, c.f_d)
        ens, err = ensembles[ekey]
        rounds = []
        if c.alpha > 0 and not err:
            chain, err = chains[(c.st_a, c.f_a)]
            rounds = [] if err else chain[: c.alpha]
        if err:
            out[c] = CellFailure(err)
            continue
        dkey = (c.st_a, c.f_a, c.alpha) if rounds else ("clean",)
        data = rounds[-1].dataset if rounds else ctx.test
        res, err = _guard(lambda: _score(ctx, data, votes_for(dkey, data, ens, ekey, c.gamma), rounds))
        out[c] = CellFailure(err) if err else res
    return out


@dataclass(frozen=True)
class GridResult:
    spec: ExperimentSpec
    cells: tuple[Cell, ...]
    results: dict  # Cell -> tuple[RepResult | CellFailure, ...]

    def ok(self, cell: Cell) -> list[RepResult]:
        return [r for r in self.results[cell] if isinstance(r, RepResult)]

    def errors(self, cell: Cell) -> list[str]:
        return [r.error for r in self.results[cell] if isinstance(r, CellFailure)]

    def rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            reps = self.ok(c)
            row = {
                "cell_id": c.cell_id,
                "st_a": c.st_a,
                "st_d": c.st_d,
                "f_a": c.f_a,
                "f_d": c.f_d,
                "alpha": c.alpha,
                "gamma": c.gamma,
            }
            for m in ("acc", "tp", "fn", "fp"):
                row[m] = _mean_std(getattr(r.ensemble, m) for r in reps)[0]
            row["mf"] = _mean_std(r.attack.mean_manipulated_features if r.attack else None for r in reps)[0]
            row["fa"] = _mean_std(r.attack.failed_attempt_rate if r.attack else None for r in reps)[0]
            row["seed"] = self.spec.seed
            row["reps"] = len(reps)
            rows.append(row)
        return rows

    def to_json(self) -> str:
        cells = []
        for row, c in zip(self.rows(), self.cells):
            reps = self.ok(c)
            row = dict(row)
            row["errors"] = self.errors(c)
            row["std"] = {m: _mean_std(getattr(r.ensemble, m) for r in reps)[1] for m in ("acc", "tp", "fn", "fp")}
            row["per_rep"] = [
                {
                    "ensemble": r.ensemble.to_dict(),
                    "static": r.static.to_dict(),
                    "attack": r.attack.to_dict() if r.attack else None,
                }
                for r in reps
            ]
            cells.append(row)
        return json.dumps({"seed": self.spec.seed, "reps": self.spec.reps, "cells": cells}, indent=1)


GRID_COLUMNS = ["cell_id", "st_a", "st_d", "f_a", "f_d", "alpha", "gamma", "acc", "tp", "fn", "fp", "mf", "fa", "seed", "reps"]
SWEEP_COLUMNS = ["gamma_minus_alpha", "st_d", "st_a", "f", "mean_acc", "std_acc"]


def _cell_text(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell_text(r[c]) for c in columns])
    return buf.getvalue()


def run_grid(spec: ExperimentSpec, cells: Sequence[Cell], jobs: int = 1) -> GridResult:
    """Evaluate every cell for ``spec.reps`` repetitions (cells share data,
    attacks and ensembles within a repetition). Results are ordered as given."""
    cells = tuple(cells)
    tasks = [(spec, cells, r) for r in range(spec.reps)]
    if jobs > 1 and spec.reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_rep = list(ex.map(_grid_rep, tasks))
    else:
        per_rep = [_grid_rep(t) for t in tasks]
    results = {c: tuple(pr[c] for pr in per_rep) for c in cells}
    return GridResult(spec, cells, results)


def grid_csv(result: GridResult) -> str:
    return _csv(GRID_COLUMNS, result.rows())


def sweep_rows(result: GridResult) -> list[dict]:
    """Mean/std ACC grouped by gamma - alpha over matched-algorithm cells."""
    groups: dict[tuple, list[float]] = {}
    for c in result.cells:
        if c.f_a != c.f_d:
            continue
        key = (c.gamma - c.alpha, c.st_d, c.st_a, c.f_d)
        groups.setdefault(key, []).extend(r.ensemble.acc for r in result.ok(c) if r.ensemble.acc is not None)
    rows = []
    for key in sorted(groups, key=lambda k: (k[1], k[2], k[3], k[0])):
        vals = groups[key]
        rows.append(
            {
                "gamma_minus_alpha": key[0],
                "st_d": key[1],
                "st_a": key[2],
                "f": key[3],
                "mean_acc": float(np.mean(vals)) if vals else None,
                "std_acc": float(np.std(vals)) if vals else None,
            }
        )
    return rows


def sweep_csv(result: GridResult) -> str:
    return _csv(SWEEP_COLUMNS, sweep_rows(result))


# ---------------------------------------------------------------------------
# Feature analyses
# ---------------------------------------------------------------------------


def best_split_gain(x: np.ndarray, y: np.ndarray) -> float:
    """Largest information gain over binary threshold splits of one feature."""
    is_mal = (np.asarray(y) == MALICIOUS).astype(np.int64)
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cm = np.cumsum(is_mal[order])
    cut = np.flatnonzero(xs[1:] != xs[:-1])
    if len(cut) == 0:
        return 0.0
    m = int(is_mal.sum())
    nl = cut + 1
    ml = cm[cut]
    cond = (nl * entropy(ml, nl) + (n - nl) * entropy(m - ml, n - nl)) / n
    gain = float(entropy(m, n)) - cond
    return max(0.0, float(gain.max()))


def info_gain_rank(data: Dataset) -> list[tuple[str, float]]:
    """Features by descending best-split information gain (ties by index)."""
    labeled = data.y >= 0
    if not labeled.any():
        raise EmptyDataset("info gain needs labeled vectors")
    X, y = data.X[labeled], data.y[labeled]
    scores = [best_split_gain(X[:, j], y) for j in range(X.shape[1])]
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return [(data.schema[j].name, scores[j]) for j in order]


@dataclass(frozen=True)
class FeatureUsageStats:
    counts: dict[str, int]
    info_gain: dict[str, float]
    manipulation_rank: list[str]
    info_gain_rank: list[str]
    top_k: int
    overlap: list[str]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def manipulation_frequency(
    outcome_streams: Iterable[Sequence[ManipulationOutcome]],
    data: Dataset,
    top_k: int = 5,
) -> FeatureUsageStats:
    """Per-feature manipulation counts over successful outcomes, ranked and
    compared with the InfoGain ranking of ``data``."""
    names = data.schema.names
    counts = dict.fromkeys(names, 0)
    for stream in outcome_streams:
        for o in stream:
            if o.status != SUCCESS:
                continue
            for j, _, _ in o.changes:
                counts[names[j]] += 1
    ig = info_gain_rank(data)
    ig_scores = dict(ig)
    manip_rank = sorted(names, key=lambda n: (-counts[n], names.index(n)))
    ig_rank = [n for n, _ in ig]
    top_manip = [n for n in manip_rank[:top_k] if counts[n] > 0]
    overlap = [n for n in top_manip if n in ig_rank[:top_k]]
    return FeatureUsageStats(counts, ig_scores, manip_rank, ig_rank, top_k, overlap)


def containment_holds(rep: RepResult) -> bool:
    """Ensemble never flags fewer vectors than M_0 alone on the same data."""
    e, s = rep.ensemble, rep.static
    fn_ok = e.fn is None or e.fn <= s.fn
    fp_ok = e.fp is None or e.fp >= s.fp
    return fn_ok and fp_ok
