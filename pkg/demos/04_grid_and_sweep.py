"""Experiment grids: every strategy/algorithm pairing at one (alpha, gamma),
and the matched-strategy sweep over gamma - alpha.

Full-size runs take a minute or two; this demo uses two repetitions.
Run: python3 demos/04_grid_and_sweep.py
"""
from counterevasion.evaluation import ExperimentSpec, grid_cells, run_grid, sweep_cells, sweep_rows

spec = ExperimentSpec(seed=0, reps=2)
res = run_grid(spec, grid_cells(alphas=(1,), gammas=(8,)))
print("cell                       ACC     FN     FP")
for row in res.rows():
    print(f"{row['cell_id']:26s} {row['acc']:.3f}  {row['fn']:.3f}  {row['fp']:.3f}")

# %% gamma - alpha sweep for the full strategy: the defender does well once it
# trains at least as many rounds as the attacker adapts.
sweep = run_grid(spec, sweep_cells(strategies=("full",), alphas=range(0, 5), gammas=range(0, 6)))
print("\nF   gamma-alpha  mean ACC")
for row in sweep_rows(sweep):
    print(f"{row['f']}  {row['gamma_minus_alpha']:+d}          {row['mean_acc']:.3f}")
