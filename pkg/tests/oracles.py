"""Independent reference computations used by the test-suite.

Nothing here calls the package's arithmetic: entropies are summed with
math.log2 over explicit counts, and escape intervals are checked by
enumerating every integer value of a small domain.
"""

import math

import numpy as np

from counterevasion.core import Feature, FeatureSchema, Interval, IntervalSet, INTEGER, ConstraintSet
from counterevasion.dtree import build_tree


def H(counts) -> float:
    n = sum(counts)
    return -sum(c / n * math.log2(c / n) for c in counts if c)


def split_ratio(xs, ys, t):
    """(gain, gain ratio) for the split x <= t by direct counting."""
    left = [y for x, y in zip(xs, ys) if x <= t]
    right = [y for x, y in zip(xs, ys) if x > t]
    n = len(ys)
    def counts(ls):
        return [sum(1 for y in ls if y == 1), sum(1 for y in ls if y != 1)]
    gain = H(counts(ys)) - len(left) / n * H(counts(left)) - len(right) / n * H(counts(right))
    si = H([len(left), len(right)])
    return gain, (gain / si if si > 0 else 0.0)


def best_split_bruteforce(X, y, min_leaf):
    """Highest gain ratio over all (feature, midpoint) pairs; ties to the
    first feature, then the lowest threshold."""
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            nl = int((X[:, j] <= t).sum())
            if nl < min_leaf or len(y) - nl < min_leaf:
                continue
            g, r = split_ratio(X[:, j].tolist(), y.tolist(), t)
            if g <= 1e-12:
                continue
            if best is None or r > best[2] + 1e-12:
                best = (j, t, r)
    return best


def best_gain_bruteforce(xs, ys):
    vals = sorted(set(xs))
    best = 0.0
    for a, b in zip(vals, vals[1:]):
        best = max(best, split_ratio(xs, ys, (a + b) / 2)[0])
    return best


# ---------------------------------------------------------------------------
# random small trees over small integer domains
# ---------------------------------------------------------------------------


def small_schema(d=3, hi=9) -> FeatureSchema:
    return FeatureSchema(tuple(Feature(f"f{j}", INTEGER, Interval.closed(0, hi)) for j in range(d)))


def random_tree(rng: np.random.Generator, schema: FeatureSchema, max_nodes=15):
    """Random binary tree with <= max_nodes nodes, half-integer thresholds
    and random leaf labels (at least one benign leaf)."""
    n_inner = int(rng.integers(1, (max_nodes - 1) // 2 + 1))
    records = [{"id": 0}]
    open_leaves = [0]
    for _ in range(n_inner):
        i = open_leaves.pop(int(rng.integers(len(open_leaves))))
        j = int(rng.integers(len(schema)))
        hi = int(schema[j].domain.hi)
        t = float(rng.integers(0, hi)) + 0.5
        l, r = len(records), len(records) + 1
        records[i].update(feature=j, threshold=t, left=l, right=r)
        records += [{"id": l}, {"id": r}]
        open_leaves += [l, r]
    leaves = [rec for rec in records if "feature" not in rec]
    for rec in leaves:
        rec["label"] = int(rng.integers(2))
    leaves[int(rng.integers(len(leaves)))]["label"] = 0
    return build_tree(schema, records)


def random_constraints(rng, schema: FeatureSchema):
    """A random ConstraintSet plus plain (lo, hi) bounds per feature, with
    ``None`` marking a frozen feature."""
    sem, bounds = {}, []
    for f in schema.features:
        kind = rng.integers(4)
        hi = int(f.domain.hi)
        if kind == 0:
            sem[f.name] = IntervalSet.empty()
            bounds.append(None)
        elif kind == 1:
            a, b = sorted(rng.integers(0, hi + 1, size=2).tolist())
            sem[f.name] = IntervalSet.closed(a, b)
            bounds.append((a, b))
        else:
            bounds.append((0, hi))
    return ConstraintSet(schema, semantics_map=sem), bounds


def diverts(tree, x, node, feature, value) -> bool:
    """Does setting x[feature] = value keep the walk through ``node`` and
    send it to the child the original x did not take?"""
    orig = tree.decision_path(x)
    taken = orig[orig.index(node) + 1]
    y = list(x)
    y[feature] = value
    path = tree.decision_path(y)
    if node not in path:
        return False
    k = path.index(node)
    return path[:k + 1] == orig[:k + 1] and path[k + 1] != taken


def escape_oracle_cases(n_trees=120, seed=7):
    """Yield (tree, constraints, x, node, feature, accumulated, failing, expected)
    for every inner node on the decision path of random vectors.

    ``expected`` is the brute-force set of integer values that divert the
    walk at ``node`` and satisfy the constraint bounds.
    """
    rng = np.random.default_rng(seed)
    schema = small_schema()
    for _ in range(n_trees):
        tree = random_tree(rng, schema)
        cs, bounds = random_constraints(rng, schema)
        for _ in range(3):
            x = [float(v) for v in rng.integers(0, 10, size=len(schema))]
            path = tree.decision_path(x)
            for k, node in enumerate(path[:-1]):
                f = tree.nodes[node].feature
                acc = schema.domain_set(f)
                for anc, nxt in zip(path[:k], path[1:k + 1]):
                    a = tree.nodes[anc]
                    if a.feature == f:
                        acc = acc & tree.branch_set(anc, nxt == a.left)
                failing = tree.branch_set(node, path[k + 1] == tree.nodes[node].left)
                b = bounds[f]
                expected = {
                    v for v in range(10)
                    if b is not None and b[0] <= v <= b[1] and diverts(tree, x, node, f, float(v))
                }
                yield tree, cs, x, node, f, acc, failing, expected
