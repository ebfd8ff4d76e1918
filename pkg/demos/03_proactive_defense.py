"""Proactive ensembles: the defender attacks its own training data to
anticipate the adversary, then votes with the original detector.

Run: python3 demos/03_proactive_defense.py
"""
import numpy as np

from counterevasion.core import MALICIOUS, derive_rng
from counterevasion.datagen import default_schema, desk_params, generate
from counterevasion.defense import DefenseConfig, build_ensemble, detect_labels, vote_threshold
from counterevasion.dtree import train
from counterevasion.evasion import AttackConfig, adaptive_attack
from counterevasion.evaluation import compute_metrics, split_dataset

schema, constraints = default_schema()
data = generate(desk_params(), derive_rng(1, "data"), schema)
tr, te = split_dataset(data, derive_rng(1, "split"))
m0 = train(tr)

print("votes needed to flag without M_0:", {g: vote_threshold(g) for g in (0, 2, 4, 8)})

attacked = {f: adaptive_attack(m0, te, AttackConfig("full", f, 1, constraints, seed=3))[0] for f in ("F1", "F2")}

# %% Defender algorithm vs attacker algorithm, full strategy, gamma = 8.
print("\nFN on attacked data (rows: defender, cols: attacker)")
for f_d in ("F1", "F2"):
    ens = build_ensemble(m0, tr, DefenseConfig("full", f_d, 8, constraints, seed=5))
    cells = []
    for f_a, d in attacked.items():
        ens_fn = compute_metrics(detect_labels(ens, d), d.y).fn
        cells.append(f"{f_a}: {ens_fn:.3f}")
    print(f"  defender {f_d}: " + "  ".join(cells))
for f_a, d in attacked.items():
    print(f"  M_0 alone vs {f_a}: {compute_metrics(m0.predict(d), d.y).fn:.3f}")

# %% The ensemble never flags less than M_0 (M_0 can always veto to malicious),
# and on clean data it costs a little FP.
ens = build_ensemble(m0, tr, DefenseConfig("full", "F1", 8, constraints, seed=5))
for name, d in (("clean", te), ("attacked", attacked["F1"])):
    e, s = compute_metrics(detect_labels(ens, d), d.y), compute_metrics(m0.predict(d), d.y)
    print(f"\n{name}: ensemble FN {e.fn:.3f} FP {e.fp:.3f} | M_0 FN {s.fn:.3f} FP {s.fp:.3f}")
    assert np.all(detect_labels(ens, d)[m0.predict(d) == MALICIOUS] == MALICIOUS)
