"""Training steps: ALOE, PCD with a replay buffer, and the REINFORCE-based ADE baseline.

Every step is a deterministic function of the incoming state, the data
batch and the generator it is handed. Steps return fresh state objects and
a flat metrics dict; nothing is mutated in place except the generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .energy import EnergyModel, energy, mle_param_gradient
from .gibbs import gibbs_run
from .sampler import SamplerParams, sample_endpoints, snis_grad_batch


@dataclass(frozen=True)
class AloeConfig:
    batch_size: int = 128
    f_learning_rate: float = 1e-3
    q_learning_rate: float = 1e-3
    n_power_iter: int = 1
    n_snis_samples: int = 10
    proposal: str = "inverse"
    geo_p: float = 0.8
    gibbs_sweeps: int = 1
    total_steps: int = 1000
    rng_seed: int = 0
    track_variance: bool = False
    variance_samples: int = 16

    def __post_init__(self):
        for name in ("batch_size", "n_snis_samples", "gibbs_sweeps", "total_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_power_iter < 0:
            raise ValueError("n_power_iter must be >= 0")
        if self.f_learning_rate <= 0 or self.q_learning_rate <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class EnergyState:
    f: EnergyModel
    opt: nn.AdamState

    @classmethod
    def create(cls, f: EnergyModel, learning_rate: float) -> "EnergyState":
        return cls(f, nn.AdamState.zeros(f.params.size, learning_rate))


@dataclass
class SamplerState:
    q: SamplerParams
    opt: nn.AdamState

    @classmethod
    def create(cls, q: SamplerParams, learning_rate: float) -> "SamplerState":
        return cls(q, nn.AdamState.zeros(q.n_params, learning_rate))


def energy_update(fs: EnergyState, positives, negatives) -> tuple[EnergyState, dict]:
    """One Adam ascent step on the contrastive log-likelihood gradient."""
    g = mle_param_gradient(fs.f, positives, negatives)
    params, opt = nn.optimizer_step(fs.opt, fs.f.params, -g)
    e_pos = energy(fs.f, positives)
    e_neg = energy(fs.f, negatives)
    metrics = {
        "f_grad_norm": float(np.linalg.norm(g)),
        "energy_pos": float(np.mean(e_pos)),
        "energy_neg": float(np.mean(e_neg)),
        "energy_gap": float(np.mean(e_pos) - np.mean(e_neg)),
    }
    return EnergyState(fs.f.with_params(params), opt), metrics


# --------------------------------------------------------------------------
# ALOE

def sampler_update(qs: SamplerState, f: EnergyModel, config: AloeConfig, rng: np.random.Generator,
                   first_negatives: np.ndarray | None = None) -> tuple[SamplerState, dict]:
    """Variational power iteration on the sampler.

    Each round draws ``x_tilde ~ q``, refines it with the Gibbs kernel and
    ascends the SNIS estimate of grad log q at the refined states. With
    ``first_negatives`` the first round uses those refined states instead of
    drawing new ones.
    """
    metrics: dict = {}
    grad_norms, ess, rejected, variances = [], [], [], []
    for it in range(config.n_power_iter):
        if it == 0 and first_negatives is not None:
            x = first_negatives
        else:
            x_tilde = sample_endpoints(qs.q, config.batch_size, rng)
            x = gibbs_run(f, x_tilde, config.gibbs_sweeps, rng)
        res = snis_grad_batch(qs.q, x, config.proposal, config.n_snis_samples, rng, config.geo_p)
        if config.track_variance:
            sub = x[: config.variance_samples]
            per = snis_grad_batch(qs.q, sub, config.proposal, config.n_snis_samples, rng, config.geo_p,
                                  per_target=True).per_target
            variances.append(float(np.var(per, axis=0, ddof=1).mean()))
        params, opt = nn.optimizer_step(qs.opt, qs.q.get_params(), -res.grad)
        qs = SamplerState(qs.q.with_params(params), opt)
        grad_norms.append(float(np.linalg.norm(res.grad)))
        ess.append(res.ess)
        rejected.append(res.n_rejected)
    if grad_norms:
        metrics["q_grad_norm"] = float(np.mean(grad_norms))
        metrics["snis_ess"] = float(np.mean(ess))
        metrics["proposal_rejections"] = int(np.sum(rejected))
    if variances:
        metrics["q_grad_variance"] = float(np.mean(variances))
    return qs, metrics


def aloe_step(fs: EnergyState, qs: SamplerState, data_batch, config: AloeConfig,
              rng: np.random.Generator, x_hat: np.ndarray | None = None,
              gibbs_rng: np.random.Generator | None = None):
    """One ALOE iteration: negatives from q refined by Gibbs, f step, then sampler step.

    Returns ``(energy_state, sampler_state, metrics)``. ``x_hat`` overrides
    the sampler draw; ``gibbs_rng`` gives the refinement its own stream.
    """
    data_batch = np.asarray(data_batch)
    if len(data_batch) == 0:
        raise ValueError("empty data batch")
    if x_hat is None:
        x_hat = sample_endpoints(qs.q, len(data_batch), rng)
    x_tilde = gibbs_run(fs.f, x_hat, config.gibbs_sweeps, gibbs_rng or rng)
    fs, metrics = energy_update(fs, data_batch, x_tilde)
    metrics["gibbs_change_rate"] = float(np.mean(x_tilde != x_hat))
    qs, qm = sampler_update(qs, fs.f, config, rng)
    metrics.update(qm)
    return fs, qs, metrics


# --------------------------------------------------------------------------
# PCD with replay buffer

@dataclass
class ReplayBuffer:
    states: np.ndarray
    restart_probability: float = 0.05

    @property
    def capacity(self) -> int:
        return len(self.states)

    @classmethod
    def uniform(cls, capacity: int, d: int, K: int, rng: np.random.Generator,
                restart_probability: float = 0.05) -> "ReplayBuffer":
        return cls(rng.integers(0, K, size=(capacity, d)), restart_probability)


def pcd_step(fs: EnergyState, buffer: ReplayBuffer, data_batch, k_sweeps: int, rng: np.random.Generator,
             gibbs_rng: np.random.Generator | None = None):
    """Persistent contrastive divergence step. Returns ``(energy_state, buffer, metrics)``."""
    data_batch = np.asarray(data_batch)
    n = len(data_batch)
    f = fs.f
    idx = rng.choice(buffer.capacity, size=n, replace=False)
    starts = buffer.states[idx].copy()
    restart = rng.random(n) < buffer.restart_probability
    if restart.any():
        starts[restart] = rng.integers(0, f.K, size=(int(restart.sum()), f.d))
    neg = gibbs_run(f, starts, k_sweeps, gibbs_rng or rng)
    fs, metrics = energy_update(fs, data_batch, neg)
    states = buffer.states.copy()
    states[idx] = neg
    metrics["restart_fraction"] = float(restart.mean())
    metrics["_chain_starts"] = starts
    return fs, ReplayBuffer(states, buffer.restart_probability), metrics


# --------------------------------------------------------------------------
# ADE baseline

@dataclass(frozen=True)
class AdeConfig:
    batch_size: int = 128
    f_learning_rate: float = 1e-3
    lr_ratio: float = 1.0  # sampler lr = lr_ratio * f lr; grid {0.2, 0.5, 1}
    sampler_updates_per_f: int = 1  # grid {1, 3, 5}
    baseline_decay: float = 0.99
    total_steps: int = 1000
    rng_seed: int = 0
    track_variance: bool = False
    variance_samples: int = 128

    def __post_init__(self):
        if self.lr_ratio <= 0 or self.f_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.sampler_updates_per_f < 1:
            raise ValueError("sampler_updates_per_f must be >= 1")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in [0, 1)")


@dataclass
class AdeSamplerState:
    q0: object
    opt: nn.AdamState
    baseline: float | None = None


def reinforce_costs(f: EnergyModel, q0, x) -> np.ndarray:
    """Per-sample cost whose score-function gradient descends -E_q f - H(q)."""
    return -energy(f, x) + q0.log_prob(x) + 1.0


def reinforce_grad(f: EnergyModel, q0, x, baseline: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Score-function gradient of L(q) = -E_q[f] - H(q) from samples ``x ~ q0``.

    Returns the batch-mean gradient and the per-sample costs.
    """
    c = reinforce_costs(f, q0, x)
    g = q0.grad(x, (c - baseline) / len(x))
    return g, c


def ade_step(fs: EnergyState, ss: AdeSamplerState, data_batch, config: AdeConfig,
             rng: np.random.Generator):
    """f takes one contrastive step against q0 samples, then q0 takes REINFORCE steps.

    Returns ``(energy_state, sampler_state, metrics)``.
    """
    data_batch = np.asarray(data_batch)
    n = len(data_batch)
    neg, _ = ss.q0.sample(n, rng)
    fs, metrics = energy_update(fs, data_batch, neg)
    variances = []
    for _ in range(config.sampler_updates_per_f):
        x, _ = ss.q0.sample(n, rng)
        c = reinforce_costs(fs.f, ss.q0, x)
        b = float(np.mean(c)) if ss.baseline is None else ss.baseline
        g = ss.q0.grad(x, (c - b) / n)
        if config.track_variance:
            sub = slice(0, config.variance_samples)
            per = ss.q0.per_sample_grads(x[sub]) * (c[sub] - b)[:, None]
            variances.append(float(np.var(per, axis=0, ddof=1).mean()))
        params, opt = nn.optimizer_step(ss.opt, ss.q0.params, g)
        new_b = config.baseline_decay * b + (1 - config.baseline_decay) * float(np.mean(c))
        ss = AdeSamplerState(ss.q0.with_params(params), opt, new_b)
        metrics["q_grad_norm"] = float(np.linalg.norm(g))
        metrics["reinforce_cost"] = float(np.mean(c))
        metrics["baseline"] = new_b
    if variances:
        metrics["q_grad_variance"] = float(np.mean(variances))
    return fs, ss, metrics


def strip_private(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if not k.startswith("_")}

