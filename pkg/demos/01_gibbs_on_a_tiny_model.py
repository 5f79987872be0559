"""
Gibbs sampling on a model small enough to enumerate
===================================================

A random 6-bit energy network has only 64 states, so its normalized
distribution can be written down exactly. We build the exact transition
matrix of one systematic Gibbs sweep, confirm that the model distribution is
a fixed point of it, and then watch a batch of simulated chains approach it.
"""

import numpy as np

from aloe.energy import all_states, exact_distribution
from aloe.gibbs import gibbs_run, sweep_transition_matrix
from aloe.oracles import random_energy_model
from aloe.rng import make_rng

rng = make_rng(0, "demo-gibbs")
model = random_energy_model(6, 2, rng)
p = exact_distribution(model)
print("most likely states:")
for i in np.argsort(p)[::-1][:4]:
    print("  ", "".join(map(str, all_states(6)[i])), f"{p[i]:.4f}")

# One sweep updates every coordinate once, in order. Composing the per-site
# conditionals gives a 64 x 64 stochastic matrix.
P = sweep_transition_matrix(model)
print("\nrow sums of P within", np.abs(P.sum(axis=1) - 1).max())
print("|| p P - p ||_inf =", np.abs(p @ P - p).max())

# Simulated chains from uniform starts, compared with the exact histogram.
x = rng.integers(0, 2, (20000, 6))
done = 0
for sweeps in (1, 2, 5, 20):
    x = gibbs_run(model, x, sweeps - done, rng)
    done = sweeps
    idx = x @ (1 << np.arange(5, -1, -1))
    emp = np.bincount(idx, minlength=64) / len(x)
    print(f"after {sweeps:2d} sweeps: total variation {0.5 * np.abs(emp - p).sum():.4f}")
