"""Train a detector on synthetic website data and attack it.

Run: python3 demos/02_train_and_attack.py
"""
from counterevasion.core import derive_rng
from counterevasion.datagen import default_schema, desk_params, generate
from counterevasion.dtree import train
from counterevasion.evasion import AttackConfig, adaptive_attack
from counterevasion.evaluation import attack_stats, compute_metrics, split_dataset

schema, constraints = default_schema()
data = generate(desk_params(), derive_rng(0, "data"), schema)
tr, te = split_dataset(data, derive_rng(0, "split"))
print(f"{len(data)} pages, {len(data.malicious_idx)} malicious; training on {len(tr)}")

m0 = train(tr)
r = compute_metrics(m0.predict(te), te.y)
print(f"M_0: {len(m0)} nodes, depth {m0.depth}, test ACC {r.acc:.3f} FN {r.fn:.3f} FP {r.fp:.3f}")

# %% One round against the static detector, then three rounds of each
# adaptation strategy. Later rounds target retrained models.
for f in ("F1", "F2"):
    for strategy, rounds in (("parallel", 1), ("parallel", 3), ("sequential", 3), ("full", 3)):
        cfg = AttackConfig(strategy, f, rounds, constraints, seed=7)
        attacked, art = adaptive_attack(m0, te, cfg)
        s = attack_stats(art.final.outcomes, m0.predict(attacked), attacked.y)
        print(
            f"{f} {strategy:10s} alpha={rounds}: M_0 FN {s.fn_rate:.3f}, "
            f"#MF {s.mean_manipulated_features:.2f}, FA {s.failed_attempt_rate:.3f}, target {art.final.target}"
        )

# %% What a single manipulation looks like.
_, art = adaptive_attack(m0, te, AttackConfig("parallel", "F2", 1, constraints, seed=7))
oc = next(o for o in art.final.outcomes if o.status == "success")
print("\nexample", oc.vector_id)
for j, old, new in oc.changes:
    print(f"  {schema[j].name}: {old:g} -> {new:g}")
