"""
Why learn the sampler by local search
=====================================

The adversarial baseline trains its sampler q0 with the score-function
(REINFORCE) estimator, whose variance grows with the spread of the reward.
The local-search sampler is instead fit by maximum likelihood to states
refined by one Gibbs sweep, using importance-weighted trajectory gradients.

Starting both from the same energy model and the same data, we track the
per-parameter variance of each sampler gradient over the first steps of
training on the pinwheel dataset.
"""

import sys

import numpy as np

from aloe.experiment import RunConfig, train

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 100

for method in ("aloe", "ade"):
    cfg = RunConfig(method=method, data="pinwheel", steps=STEPS, seed=0, log_every=10,
                    track_variance=True, variance_samples=16)
    res = train(cfg)
    var = np.array([r["q_grad_variance"] for r in res.records if "q_grad_variance" in r])
    print(f"{method:5s} median sampler-gradient variance over {STEPS} steps: {np.median(var):.3e}")
