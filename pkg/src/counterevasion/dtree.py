"""Binary decision trees over numeric features (C4.5-style gain ratio).

Splits test ``x[feature] <= threshold``; the left child takes values at or
below the threshold. Trees are stored as a flat arena of nodes with the
root at index 0 and are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    BENIGN,
    MALICIOUS,
    Dataset,
    EmptyDataset,
    FeatureSchema,
    FeatureVector,
    Interval,
    IntervalSet,
    SchemaMismatch,
    interval_intersect,
)

LEAF = -1


@dataclass(frozen=True)
class TrainParams:
    min_leaf_size: int = 5
    max_depth: int | None = None
    collapse: bool = True

    def __post_init__(self):
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def to_dict(self) -> dict:
        return {"min_leaf_size": self.min_leaf_size, "max_depth": self.max_depth, "collapse": self.collapse}


@dataclass(frozen=True)
class TreeNode:
    feature: int = LEAF
    threshold: float = 0.0
    label: int = MALICIOUS
    left: int = -1
    right: int = -1
    parent: int = -1
    counts: tuple[int, int] = (0, 0)  # (benign, malicious) training vectors

    @property
    def is_leaf(self) -> bool:
        return self.feature == LEAF


@dataclass(frozen=True)
class PathBox:
    """Per-feature interval box equivalent to one root-to-leaf path."""

    leaf: int
    box: tuple[IntervalSet, ...]
    label: int

    def contains(self, values: Sequence[float]) -> bool:
        return all(v in s for v, s in zip(values, self.box))


def mismatch_count(box: PathBox, fv: FeatureVector | Sequence[float]) -> tuple[int, list[int]]:
    """Features (schema order) whose value falls outside the box."""
    values = fv.values if isinstance(fv, FeatureVector) else fv
    bad = [j for j, (v, s) in enumerate(zip(values, box.box)) if v not in s]
    return len(bad), bad


@dataclass(frozen=True, eq=False)
class DecisionTree:
    nodes: tuple[TreeNode, ...]
    schema: FeatureSchema
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        n = len(self.nodes)
        feat = np.array([nd.feature for nd in self.nodes], dtype=np.intp)
        object.__setattr__(self, "_feature", feat)
        object.__setattr__(self, "_threshold", np.array([nd.threshold for nd in self.nodes]))
        object.__setattr__(self, "_left", np.array([nd.left for nd in self.nodes], dtype=np.intp))
        object.__setattr__(self, "_right", np.array([nd.right for nd in self.nodes], dtype=np.intp))
        object.__setattr__(self, "_label", np.array([nd.label for nd in self.nodes], dtype=np.int8))
        for i, nd in enumerate(self.nodes):
            if nd.is_leaf:
                if nd.left != -1 or nd.right != -1:
                    raise ValueError(f"leaf {i} has children")
            elif not (0 <= nd.left < n and 0 <= nd.right < n) or not 0 <= nd.feature < len(self.schema):
                raise ValueError(f"inner node {i} is malformed")
        self._check_reachable()

    def _check_reachable(self):
        seen = set()
        stack = [0]
        while stack:
            i = stack.pop()
            if i in seen:
                raise ValueError("tree contains a cycle or shared child")
            seen.add(i)
            nd = self.nodes[i]
            if not nd.is_leaf:
                stack += [nd.left, nd.right]
        if len(seen) != len(self.nodes):
            raise ValueError("tree has unreachable nodes")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> int:
        return 0

    @property
    def depth(self) -> int:
        def d(i):
            nd = self.nodes[i]
            return 0 if nd.is_leaf else 1 + max(d(nd.left), d(nd.right))

        return d(0)

    def _values(self, fv) -> np.ndarray:
        values = np.asarray(fv.values if isinstance(fv, FeatureVector) else fv, dtype=np.float64)
        if values.shape != (len(self.schema),):
            raise SchemaMismatch(f"expected {len(self.schema)} features, got {values.shape}")
        return values

    def predict(self, X) -> np.ndarray:
        """Label codes for each row of ``X`` (or for a :class:`Dataset`)."""
        if isinstance(X, Dataset):
            if X.schema != self.schema:
                raise SchemaMismatch("dataset schema differs from tree schema")
            X = X.X
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaMismatch(f"expected (n, {len(self.schema)}) array, got {X.shape}")
        idx = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        active = self._feature[idx] != LEAF
        while active.any():
            r = rows[active]
            node = idx[r]
            go_left = X[r, self._feature[node]] <= self._threshold[node]
            idx[r] = np.where(go_left, self._left[node], self._right[node])
            active[r] = self._feature[idx[r]] != LEAF
        return self._label[idx].copy()

    def leaf_of(self, fv) -> int:
        return self.decision_path(fv)[-1]

    def classify(self, fv) -> int:
        return int(self.nodes[self.leaf_of(fv)].label)

    def decision_path(self, fv) -> list[int]:
        values = self._values(fv)
        path = [0]
        nd = self.nodes[0]
        while not nd.is_leaf:
            nxt = nd.left if values[nd.feature] <= nd.threshold else nd.right
            path.append(nxt)
            nd = self.nodes[nxt]
        return path

    def sibling(self, i: int) -> int:
        p = self.nodes[self.nodes[i].parent]
        return p.right if p.left == i else p.left

    def branch_set(self, i: int, go_left: bool) -> IntervalSet:
        """Feature-domain subset routed to the left/right child of inner node ``i``."""
        nd = self.nodes[i]
        dom = self.schema[nd.feature].domain
        if go_left:
            part = Interval(dom.lo, nd.threshold, False, False)
        else:
            part = Interval(nd.threshold, dom.hi, True, False)
        return interval_intersect(IntervalSet((dom,)), IntervalSet((part,)))

    def boxes(self) -> list[PathBox]:
        """One box per leaf, in leaf-index order."""
        out = []
        full = tuple(self.schema.domain_set(j) for j in range(len(self.schema)))
        stack = [(0, full)]
        while stack:
            i, box = stack.pop()
            nd = self.nodes[i]
            if nd.is_leaf:
                out.append(PathBox(i, box, int(nd.label)))
                continue
            for go_left, child in ((True, nd.left), (False, nd.right)):
                b = list(box)
                b[nd.feature] = interval_intersect(b[nd.feature], self.branch_set(i, go_left))
                stack.append((child, tuple(b)))
        return sorted(out, key=lambda p: p.leaf)

    def benign_paths(self) -> list[PathBox]:
        return [b for b in self.boxes() if b.label == BENIGN]

    def structure(self) -> list:
        return [
            (nd.feature, nd.threshold, nd.label, nd.left, nd.right) if not nd.is_leaf else (LEAF, nd.label)
            for nd in self.nodes
        ]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for i, nd in enumerate(self.nodes):
            if nd.is_leaf:
                nodes.append({"id": i, "leaf": True, "label": int(nd.label), "counts": list(nd.counts)})
            else:
                nodes.append(
                    {
                        "id": i,
                        "leaf": False,
                        "feature": self.schema[nd.feature].name,
                        "threshold": nd.threshold,
                        "left": nd.left,
                        "right": nd.right,
                        "counts": list(nd.counts),
                    }
                )
        return {"schema": self.schema.to_dict(), "nodes": nodes, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict, schema: FeatureSchema | None = None) -> "DecisionTree":
        schema = schema or FeatureSchema.from_dict(d["schema"])
        return build_tree(schema, d["nodes"], meta=d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))


def build_tree(schema: FeatureSchema, spec: Sequence[dict], meta: dict | None = None) -> DecisionTree:
    """Assemble a tree from explicit node records (``id`` 0 is the root).

    Inner records carry ``feature`` (name or index), ``threshold``, ``left``
    and ``right``; leaves carry ``label``. Parents are filled in.
    """
    by_id = {int(r["id"]): r for r in spec}
    n = len(by_id)
    if sorted(by_id) != list(range(n)):
        raise ValueError("node ids must be 0..n-1")
    parent = [-1] * n
    for r in by_id.values():
        if "feature" in r:
            parent[int(r["left"])] = int(r["id"])
            parent[int(r["right"])] = int(r["id"])
    nodes = []
    for i in range(n):
        r = by_id[i]
        counts = tuple(r.get("counts", (0, 0)))
        if "feature" in r:
            f = r["feature"]
            f = schema.index(f) if isinstance(f, str) else int(f)
            nodes.append(TreeNode(f, float(r["threshold"]), MALICIOUS, int(r["left"]), int(r["right"]), parent[i], counts))
        else:
            nodes.append(TreeNode(LEAF, 0.0, int(r["label"]), -1, -1, parent[i], counts))
    return DecisionTree(tuple(nodes), schema, dict(meta or {}))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def entropy(n_mal, n):
    """Binary label entropy in bits; accepts arrays, 0 where n == 0."""
    n_mal = np.asarray(n_mal, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, n_mal / np.where(n > 0, n, 1), 0.0)
        q = 1.0 - p
        h = -(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1)), 0.0) + np.where(q > 0, q * np.log2(np.where(q > 0, q, 1)), 0.0))
    return h


def split_scores(y: np.ndarray, left_mask: np.ndarray) -> tuple[float, float]:
    """(information gain, gain ratio) of splitting labels ``y`` by ``left_mask``."""
    y = np.asarray(y) == MALICIOUS
    left_mask = np.asarray(left_mask, dtype=bool)
    n = len(y)
    nl = int(left_mask.sum())
    ml = int(y[left_mask].sum())
    gain, ratio = _gains(int(y.sum()), n, np.array([ml]), np.array([nl]))
    return float(gain[0]), float(ratio[0])


def _gains(m_total: int, n: int, ml: np.ndarray, nl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nr = n - nl
    mr = m_total - ml
    h = entropy(m_total, n)
    cond = (nl * entropy(ml, nl) + nr * entropy(mr, nr)) / n
    gain = h - cond
    split_info = entropy(nl, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(split_info > 0, gain / np.where(split_info > 0, split_info, 1), 0.0)
    return gain, ratio


def best_split(X: np.ndarray, is_mal: np.ndarray, min_leaf: int) -> tuple[int, float, float] | None:
    """(feature, threshold, gain ratio) of the best split, or None.

    Candidate thresholds are midpoints between consecutive distinct values;
    both children must hold at least ``min_leaf`` vectors and the gain must
    be positive. Ties go to the lowest feature index, then lowest threshold.
    """
    n, d = X.shape
    m_total = int(is_mal.sum())
    best = None
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cm = np.cumsum(is_mal[order])
        # candidate cut after position k (left = first k+1 vectors)
        cut = np.flatnonzero(xs[1:] != xs[:-1])
        if len(cut) == 0:
            continue
        nl = cut + 1
        ok = (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        cut, nl = cut[ok], nl[ok]
        gain, ratio = _gains(m_total, n, cm[cut], nl)
        valid = gain > 1e-12
        if not valid.any():
            continue
        ratio = np.where(valid, ratio, -np.inf)
        k = int(np.argmax(ratio))  # first max = lowest threshold
        r = float(ratio[k])
        if best is None or r > best[2] + 1e-12:
            thr = (xs[cut[k]] + xs[cut[k] + 1]) / 2.0
            best = (j, float(thr), r)
    return best


def train(data: Dataset, params: TrainParams = TrainParams()) -> DecisionTree:
    """Grow a gain-ratio tree on ``data`` (labels must be benign/malicious)."""
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    labeled = data.y >= 0
    X = np.asarray(data.X[labeled])
    is_mal = (data.y[labeled] == MALICIOUS).astype(np.int64)
    if len(X) == 0:
        raise EmptyDataset("no labeled vectors")

    nodes: list[dict] = []

    def leaf_label(m, n):
        # exact ties go to malicious
        return MALICIOUS if 2 * m >= n else BENIGN

    def grow(rows: np.ndarray, depth: int, parent: int) -> int:
        i = len(nodes)
        m = int(is_mal[rows].sum())
        n = len(rows)
        rec = {"parent": parent, "counts": (n - m, m)}
        nodes.append(rec)
        split = None
        stop = (
            m == 0
            or m == n
            or n < 2 * params.min_leaf_size
            or (params.max_depth is not None and depth >= params.max_depth)
        )
        if not stop:
            split = best_split(X[rows], is_mal[rows], params.min_leaf_size)
        if split is None:
            rec.update(feature=LEAF, label=leaf_label(m, n))
            return i
        j, thr, _ = split
        go_left = X[rows, j] <= thr
        rec.update(feature=j, threshold=thr)
        rec["left"] = grow(rows[go_left], depth + 1, i)
        rec["right"] = grow(rows[~go_left], depth + 1, i)
        return i

    grow(np.arange(len(X)), 0, -1)
    if params.collapse:
        nodes = _collapse(nodes)
    tree_nodes = tuple(
        TreeNode(r["feature"], r.get("threshold", 0.0), r.get("label", MALICIOUS), r.get("left", -1), r.get("right", -1), r["parent"], r["counts"])
        for r in nodes
    )
    meta = {"n_train": int(len(X)), "params": params.to_dict(), "tie_label": "malicious"}
    return DecisionTree(tree_nodes, data.schema, meta)


def _collapse(nodes: list[dict]) -> list[dict]:
    """Replace every subtree whose leaves all share one label by a single leaf."""

    def labels(i):
        r = nodes[i]
        if r["feature"] == LEAF:
            return {r["label"]}
        return labels(r["left"]) | labels(r["right"])

    keep: list[int] = []
    new: dict[int, dict] = {}

    def visit(i, parent):
        r = nodes[i]
        k = len(keep)
        keep.append(i)
        out = {"parent": parent, "counts": r["counts"]}
        new[k] = out
        if r["feature"] == LEAF:
            out.update(feature=LEAF, label=r["label"])
            return k
        labs = labels(i)
        if len(labs) == 1:
            out.update(feature=LEAF, label=labs.pop())
            return k
        out.update(feature=r["feature"], threshold=r["threshold"])
        out["left"] = visit(r["left"], k)
        out["right"] = visit(r["right"], k)
        return k

    visit(0, -1)
    return [new[k] for k in range(len(keep))]
