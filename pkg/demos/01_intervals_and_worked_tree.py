"""Interval sets, a hand-built tree, and both manipulation algorithms on it.

Run: python3 demos/01_intervals_and_worked_tree.py
"""
import numpy as np

from counterevasion.core import (
    CONTINUOUS,
    ConstraintSet,
    Dataset,
    Feature,
    FeatureSchema,
    Interval,
    IntervalSet,
    derive_rng,
    interval_complement,
)
from counterevasion.dtree import build_tree, mismatch_count
from counterevasion.evasion import escape_interval, manipulate_f1, manipulate_f2

# %% Interval sets are normalized unions of intervals with open/closed ends.
domain = Interval.closed(-10, 100)
left_of_7 = IntervalSet.closed(-10, 7)
print("complement of [-10, 7] in the domain:", interval_complement(domain, left_of_7))
print("... intersected with [-10, 13]:", interval_complement(domain, left_of_7) & IntervalSet.closed(-10, 13))

# %% A 15-node tree over 18 continuous features. x <= t goes left.
schema = FeatureSchema(tuple(Feature(f"X{i}", CONTINUOUS, Interval.closed(-10, 100)) for i in range(1, 19)))
inner = {
    0: ("X9", 13, 10, 12),
    10: ("X4", 0, 9, 4),
    9: ("X9", 7, 1, 8),
    8: ("X16", 9.1, 7, 6),
    7: ("X18", 2.3, 2, 3),
    12: ("X10", 5, 11, 5),
    11: ("X1", 4, 14, 13),
}
records = []
for i in range(15):
    if i in inner:
        f, t, left, right = inner[i]
        records.append({"id": i, "feature": f, "threshold": t, "left": left, "right": right})
    else:
        records.append({"id": i, "label": 0 if i in (3, 13) else 1})
tree = build_tree(schema, records)


def vector(**values):
    x = [0.0] * 18
    for name, v in values.items():
        x[int(name[1:]) - 1] = v
    return x


print("\nbenign paths:")
for box in tree.benign_paths():
    constrained = {schema[j].name: str(s) for j, s in enumerate(box.box) if s != schema.domain_set(j)}
    print(f"  leaf v{box.leaf}: {constrained}")

# %% Leaf escape (F1). The vector lands in malicious leaf v1 through X9 <= 7;
# the escape interval for X9 keeps X9 <= 13 from the root.
x = vector(X4=-1, X9=5, X16=5, X18=5)
print("\npath:", tree.decision_path(x), "label:", tree.classify(x))
cs = ConstraintSet(schema)
print("escape interval at v9:", escape_interval(8, IntervalSet.closed(-10, 13), tree.branch_set(9, True), cs))
ds = Dataset(schema, np.array([x]), [1], ["page-1"])
out, (oc,) = manipulate_f1(tree, ds, cs, derive_rng(0))
print("F1:", oc.status, "changes", oc.changes, "new path", tree.decision_path(out.X[0]))

# %% Benign-path repair (F2) starts with the path that needs the fewest changes.
x = vector(X4=0.3, X9=5.3, X16=7.9, X18=2.1, X10=3, X1=2.3)
for box in tree.benign_paths():
    n, feats = mismatch_count(box, x)
    print(f"  leaf v{box.leaf}: {n} mismatches {[schema[j].name for j in feats]}")
ds = Dataset(schema, np.array([x]), [1], ["page-2"])
for label, constraints in (("no constraints", cs), ("X1 frozen", cs.frozen("X1"))):
    out, (oc,) = manipulate_f2(tree, ds, constraints, derive_rng(0))
    print(f"F2 ({label}): {oc.status}, paths tried {oc.attempts['paths_tried']}, ends at v{tree.leaf_of(out.X[0])}")
