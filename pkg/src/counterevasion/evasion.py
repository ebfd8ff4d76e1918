"""The attacker: escape intervals, the two tree-guided manipulation
algorithms, history preprocessing, and the adaptive attack driver.

Manipulations only ever touch malicious vectors that the target tree
currently flags; benign vectors and existing false negatives pass through.
Each vector draws from its own generator derived from ``(call seed, row)``
so results do not depend on which other rows were skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    BENIGN,
    ConstraintSet,
    CoreError,
    Dataset,
    IntervalSet,
    SchemaMismatch,
    derive_rng,
    interval_complement,
    interval_intersect,
    sample_from,
)
from .dtree import DecisionTree, TrainParams, train

SUCCESS = "success"
FAILED = "failed"
SKIPPED = "skipped_already_benign"

STRATEGIES = ("parallel", "sequential", "full")
MANIPULATIONS = ("F1", "F2")


class MisalignedHistory(CoreError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "parallel"
    manipulation: str = "F1"
    rounds: int = 1
    constraints: ConstraintSet | None = None
    train_params: TrainParams = TrainParams()
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.manipulation not in MANIPULATIONS:
            raise ValueError(f"unknown manipulation {self.manipulation!r}")
        if self.rounds < 1:
            raise ValueError("an attack needs at least one round")


@dataclass(frozen=True)
class ManipulationOutcome:
    vector_id: str
    status: str
    changes: tuple[tuple[int, float, float], ...] = ()  # (feature, old, new)
    attempts: dict = field(default_factory=dict)

    @property
    def n_manipulated(self) -> int:
        return len(self.changes)

    def to_dict(self, schema=None) -> dict:
        name = (lambda j: schema[j].name) if schema is not None else (lambda j: j)
        return {
            "id": self.vector_id,
            "status": self.status,
            "changes": [{"feature": name(j), "old": old, "new": new} for j, old, new in self.changes],
            "attempts": self.attempts,
        }


def outcomes_to_jsonl(outcomes: Sequence[ManipulationOutcome], schema=None) -> str:
    return "".join(json.dumps(o.to_dict(schema), sort_keys=True) + "\n" for o in outcomes)


def outcomes_from_jsonl(text: str, schema=None) -> list[ManipulationOutcome]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        idx = (lambda f: schema.index(f) if isinstance(f, str) else int(f)) if schema is not None else int
        changes = tuple((idx(c["feature"]), c["old"], c["new"]) for c in d["changes"])
        out.append(ManipulationOutcome(d["id"], d["status"], changes, d.get("attempts", {})))
    return out


def escape_interval(
    feature: int,
    accumulated: IntervalSet,
    failing_branch: IntervalSet,
    constraints: ConstraintSet,
) -> IntervalSet:
    """Values of ``feature`` that leave ``failing_branch`` while keeping the
    path conditions in ``accumulated`` and the manipulation constraints."""
    dom = constraints.schema[feature].domain
    out = interval_complement(dom, failing_branch)
    out = interval_intersect(out, accumulated)
    return interval_intersect(out, constraints.allowed(feature))


def _check(tree: DecisionTree, data: Dataset):
    if tree.schema != data.schema:
        raise SchemaMismatch("tree and dataset schemas differ")


def _record(values: np.ndarray, original: np.ndarray) -> tuple:
    changed = np.flatnonzero(values != original)
    return tuple((int(j), float(original[j]), float(values[j])) for j in changed)


def _f1_one(tree: DecisionTree, x0: np.ndarray, constraints: ConstraintSet, rng, budget: int):
    schema = tree.schema
    nodes = tree.nodes
    x = x0.copy()
    acc: dict[int, IntervalSet] = {}
    last = None  # (parent, feature, acc before parent, branch taken at parent)
    v = 0
    steps = 0
    escapes = 0
    while True:
        nd = nodes[v]
        if nd.is_leaf and nd.label == BENIGN:
            return x, SUCCESS, {"leaf_escapes": escapes, "steps": steps, "leaf": v}
        steps += 1
        if steps > budget:
            return x0, FAILED, {"leaf_escapes": escapes, "steps": steps, "reason": "budget"}
        if not nd.is_leaf:
            f = nd.feature
            before = acc.get(f, schema.domain_set(f))
            go_left = x[f] <= nd.threshold
            branch = tree.branch_set(v, go_left)
            acc[f] = interval_intersect(before, branch)
            last = (v, f, before, branch)
            v = nd.left if go_left else nd.right
            continue
        # malicious leaf
        if last is None:
            return x0, FAILED, {"leaf_escapes": escapes, "steps": steps, "reason": "root leaf"}
        p, f, before, branch = last
        esc = escape_interval(f, before, branch, constraints)
        try:
            z = sample_from(esc, schema[f].kind, rng)
        except CoreError:
            return x0, FAILED, {"leaf_escapes": escapes, "steps": steps, "reason": "empty escape"}
        escapes += 1
        x[f] = z
        other = interval_complement(schema[f].domain, branch)
        acc[f] = interval_intersect(before, other)
        last = (p, f, before, other)
        v = tree.sibling(v)


def manipulate_f1(
    tree: DecisionTree,
    data: Dataset,
    constraints: ConstraintSet,
    rng: np.random.Generator,
    budget_factor: int = 4,
) -> tuple[Dataset, list[ManipulationOutcome]]:
    """Leaf-escape manipulation: walk the tree and, at each malicious leaf,
    push the parent's feature into the sibling branch."""
    _check(tree, data)
    call_seed = int(rng.integers(2**63))
    budget = budget_factor * len(tree)
    pred = tree.predict(data.X)
    X = np.array(data.X)
    outcomes = []
    for i in data.malicious_idx:
        if pred[i] == BENIGN:
            outcomes.append(ManipulationOutcome(data.ids[i], SKIPPED))
            continue
        x, status, meta = _f1_one(tree, X[i], constraints, derive_rng(call_seed, int(i)), budget)
        if status == SUCCESS:
            assert tree.predict(x[None, :])[0] == BENIGN
            X[i] = x
        outcomes.append(ManipulationOutcome(data.ids[i], status, _record(x, data.X[i]) if status == SUCCESS else (), meta))
    return data.with_values(X), outcomes


def _box_arrays(boxes):
    # each box side is a single interval (or empty) per feature
    P, d = len(boxes), len(boxes[0].box) if boxes else 0
    lo = np.full((P, d), np.inf)
    hi = np.full((P, d), -np.inf)
    lo_open = np.zeros((P, d), bool)
    hi_open = np.zeros((P, d), bool)
    for p, b in enumerate(boxes):
        for j, s in enumerate(b.box):
            if s.parts:
                part = s.parts[0]
                lo[p, j], hi[p, j], lo_open[p, j], hi_open[p, j] = part.lo, part.hi, part.lo_open, part.hi_open
    return lo, hi, lo_open, hi_open


def _mismatch_matrix(arrs, x: np.ndarray) -> np.ndarray:
    lo, hi, lo_open, hi_open = arrs
    above = np.where(lo_open, x > lo, x >= lo)
    below = np.where(hi_open, x < hi, x <= hi)
    return ~(above & below)


def manipulate_f2(
    tree: DecisionTree,
    data: Dataset,
    constraints: ConstraintSet,
    rng: np.random.Generator,
) -> tuple[Dataset, list[ManipulationOutcome]]:
    """Benign-path manipulation: repair the mismatched features of the
    closest benign path first, falling back to farther paths."""
    _check(tree, data)
    call_seed = int(rng.integers(2**63))
    schema = tree.schema
    boxes = tree.benign_paths()
    arrs = _box_arrays(boxes)
    leaf_ids = np.array([b.leaf for b in boxes])
    pred = tree.predict(data.X)
    X = np.array(data.X)
    outcomes = []
    for i in data.malicious_idx:
        if pred[i] == BENIGN:
            outcomes.append(ManipulationOutcome(data.ids[i], SKIPPED))
            continue
        x0 = data.X[i]
        vrng = derive_rng(call_seed, int(i))
        if boxes:
            mism = _mismatch_matrix(arrs, x0)
            counts = mism.sum(axis=1)
            order = np.lexsort((leaf_ids, counts))
        else:
            order = []
        tried = []
        status, result = FAILED, x0
        for p in order:
            tried.append(int(leaf_ids[p]))
            x = x0.copy()
            ok = True
            for f in np.flatnonzero(mism[p]):
                box_f = boxes[p].box[f]
                failing = interval_complement(schema[f].domain, box_f)
                esc = escape_interval(int(f), schema.domain_set(int(f)), failing, constraints)
                try:
                    x[f] = sample_from(esc, schema[f].kind, vrng)
                except CoreError:
                    ok = False
                    break
            if ok and tree.predict(x[None, :])[0] == BENIGN:
                status, result = SUCCESS, x
                break
        if status == SUCCESS:
            X[i] = result
        outcomes.append(
            ManipulationOutcome(
                data.ids[i],
                status,
                _record(result, x0) if status == SUCCESS else (),
                {"paths_tried": tried},
            )
        )
    return data.with_values(X), outcomes


MANIPULATORS: dict[str, Callable] = {"F1": manipulate_f1, "F2": manipulate_f2}


def manipulate(name: str, tree, data, constraints, rng):
    return MANIPULATORS[name](tree, data, constraints, rng)


def preprocess_pp(history: Sequence[Dataset], rng: np.random.Generator) -> Dataset:
    """Aggregate aligned rounds: each malicious row is taken from a uniformly
    chosen round; benign rows come from the first dataset."""
    if not history:
        raise MisalignedHistory("empty history")
    d0 = history[0]
    mal = d0.malicious_idx
    for d in history[1:]:
        if d.schema != d0.schema:
            raise SchemaMismatch("history datasets have different schemas")
        if len(d.malicious_idx) != len(mal):
            raise MisalignedHistory("malicious partitions differ in size")
    pick = rng.integers(len(history), size=len(mal))
    X = np.array(d0.X)
    for k, d in enumerate(history[1:], start=1):
        rows = pick == k
        X[mal[rows]] = d.X[d.malicious_idx[rows]]
    return d0.with_values(X)


@dataclass(frozen=True, eq=False)
class AttackRound:
    index: int
    dataset: Dataset
    model: DecisionTree | None
    outcomes: tuple[ManipulationOutcome, ...]
    target: str  # which model was attacked, e.g. "M_0"


@dataclass(frozen=True, eq=False)
class AttackRoundArtifacts:
    config: AttackConfig
    rounds: tuple[AttackRound, ...]

    @property
    def final(self) -> AttackRound:
        return self.rounds[-1]


def adaptation_rounds(
    m0: DecisionTree,
    d0: Dataset,
    strategy: str,
    manipulation: str,
    rounds: int,
    constraints: ConstraintSet,
    train_params: TrainParams,
    seed: int,
    stream: str,
    retrain_last: bool,
):
    """Shared round loop for the attacker and the proactive defender.

    Round ``i`` draws from ``derive_rng(seed, stream, i)``, so a shorter run
    is always a prefix of a longer one with the same seed.
    """
    datasets = [d0]
    models = [m0]
    out = []
    for i in range(1, rounds + 1):
        if strategy == "parallel":
            target, src, tname = m0, d0, "M_0"
        elif strategy == "sequential":
            target, src, tname = models[i - 1], datasets[i - 1], f"M_{i - 1}"
        else:
            src = preprocess_pp(datasets[:i], derive_rng(seed, stream, "pp", i))
            target, tname = models[i - 1], f"M_{i - 1}"
        di, outcomes = manipulate(manipulation, target, src, constraints, derive_rng(seed, stream, i))
        mi = None
        if retrain_last or (strategy != "parallel" and i < rounds):
            mi = train(di, train_params)
        datasets.append(di)
        models.append(mi)
        out.append(AttackRound(i, di, mi, tuple(outcomes), tname))
    return out


def adaptive_attack(m0: DecisionTree, d0: Dataset, cfg: AttackConfig) -> tuple[Dataset, AttackRoundArtifacts]:
    """Run ``cfg.rounds`` adaptation rounds against ``m0`` starting from ``d0``.

    For the full strategy, round ``i`` manipulates the aggregate of every
    round produced so far (``D_0 .. D_{i-1}``).
    """
    if m0.schema != d0.schema:
        raise SchemaMismatch("model and data schemas differ")
    constraints = cfg.constraints or ConstraintSet(d0.schema)
    rounds = adaptation_rounds(
        m0, d0, cfg.strategy, cfg.manipulation, cfg.rounds, constraints,
        cfg.train_params, cfg.seed, "attack", retrain_last=False,
    )
    return rounds[-1].dataset, AttackRoundArtifacts(cfg, tuple(rounds))
