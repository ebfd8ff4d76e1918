"""Which features do the attacks change, and are they the informative ones?

Run: python3 demos/05_feature_ranking.py
"""
from counterevasion.evaluation import ExperimentSpec, attack_chain, manipulation_frequency, prepare_rep

spec = ExperimentSpec(seed=0, reps=3)
streams = []
for rep in range(spec.reps):
    ctx = prepare_rep(spec, rep)
    for f in ("F1", "F2"):
        streams.append(attack_chain(ctx, "parallel", f, 1)[0].outcomes)

stats = manipulation_frequency(streams, ctx.train, top_k=5)
print("rank  most manipulated        count   highest info gain      gain")
for i, (m, g) in enumerate(zip(stats.manipulation_rank[:8], stats.info_gain_rank[:8]), start=1):
    print(f"{i:4d}  {m:22s} {stats.counts[m]:5d}   {g:22s} {stats.info_gain[g]:.3f}")
print("overlap of the top 5:", stats.overlap)
