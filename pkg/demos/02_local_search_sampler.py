"""
The local-search sampler and its self-normalized gradient
=========================================================

The sampler draws a starting state from q0, then a learned editor rewrites
one coordinate at a time until a learned stop head ends the trajectory. The
marginal q(x) sums over every trajectory that ends at x, so it is not
available in closed form on real problems. On 3 bits with at most 2 edits we
can still enumerate it, and use that to check the importance-weighted
gradient estimator that training relies on.
"""

import numpy as np
from scipy.special import logsumexp

from aloe.energy import all_states
from aloe.oracles import random_sampler
from aloe.rng import make_rng
from aloe.sampler import (marginal_logprob_exact, sample_trajectories, snis_grad_from_trajectories,
                          snis_grad_log_marginal, trajectories_ending_at)

rng = make_rng(0, "demo-sampler")
q = random_sampler(3, 2, 2, rng)

# A few sampled trajectories: start state, each edit, stop.
trajs, logq = sample_trajectories(q, 5, rng)
for tr, lq in zip(trajs, logq):
    path = " -> ".join("".join(map(str, s)) for s in tr.states)
    print(f"{path:<24s} log q(traj) = {lq:.3f}")

# The marginal over endpoints sums to one.
marg = np.array([marginal_logprob_exact(q, x) for x in all_states(3)])
print("\nq(x) for all 8 states:", np.round(np.exp(marg), 4))
print("sum:", np.exp(logsumexp(marg)))

# grad log q(x) equals the posterior-weighted average of trajectory gradients.
x = all_states(3)[5]
every = trajectories_ending_at(q, x)
exact = snis_grad_from_trajectories(q, every, np.zeros(len(every)))
print(f"\n{len(every)} trajectories end at {''.join(map(str, x))}")

# The inverse proposal walks back along distinct positions, so trajectories
# that touch a coordinate twice are outside its support. Its estimate
# converges to the posterior average over the remaining trajectories.
distinct = [tr for tr in every if len(set(tr.positions().tolist())) == tr.t]
reachable = snis_grad_from_trajectories(q, distinct, np.zeros(len(distinct)))
print(f"{len(distinct)} of them edit distinct positions")


def cosine(a, b):
    return a @ b / np.linalg.norm(a) / np.linalg.norm(b)


for n in (4, 32, 256, 4096):
    est = snis_grad_log_marginal(q, x, "inverse", n, rng)
    print(f"inverse proposal, N={n:5d}: cosine with full posterior {cosine(est, exact):.4f}, "
          f"with distinct-position posterior {cosine(est, reachable):.4f}")
