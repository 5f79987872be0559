"""Exact checks on tiny state spaces and finite-difference gradient suites.

Each check returns a :class:`CheckResult`; ``run_oracle_suite`` and
``run_gradcheck_suite`` bundle them for the command line and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import nn
from .energy import EnergyModel, all_states, energy, exact_distribution, mle_param_gradient
from .gibbs import sweep_transition_matrix
from .rng import make_rng
from .sampler import (AutoregressiveInit, Editor, FactorizedInit, SamplerParams, StopPolicy,
                      marginal_logprob_exact, snis_grad_from_trajectories, trajectories_ending_at,
                      trajectory_logprob_grad, trajectory_logprobs)
from .trainers import reinforce_costs

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (< {self.tolerance:g})"


def _scaled(params: np.ndarray, rng: np.random.Generator, scale: float) -> np.ndarray:
    return params + scale * rng.standard_normal(params.size)


def random_energy_model(d: int, K: int, rng: np.random.Generator, hidden=(16, 16),
                        scale: float = 0.5) -> EnergyModel:
    m = EnergyModel.create(d, K, hidden, rng=rng)
    return m.with_params(_scaled(m.params, rng, scale))


def random_sampler(d: int, K: int, T: int, rng: np.random.Generator, q0: str = "factorized",
                   hidden: int = 8, scale: float = 0.5) -> SamplerParams:
    q = SamplerParams.create(d, K, q0, T, hidden, hidden, hidden, rng=rng)
    return q.with_params(_scaled(q.get_params(), rng, scale))


# --------------------------------------------------------------------------
# Enumeration oracles

def gibbs_stationarity(n_models: int = 5, d: int = 6, seed: int = 0,
                       scan_order: str = "systematic") -> CheckResult:
    """max over models of ||p P - p||_inf for the exact sweep kernel."""
    worst = 0.0
    for k in range(n_models):
        m = random_energy_model(d, 2, make_rng(seed, "stationarity", k))
        p = exact_distribution(m)
        P = sweep_transition_matrix(m, scan_order)
        worst = max(worst, float(np.abs(p @ P - p).max()))
    return CheckResult(f"gibbs stationarity ({scan_order}, d={d}, {n_models} nets)", worst, 1e-10)


def trajectory_normalization(d: int = 3, K: int = 2, T: int = 2, seed: int = 0,
                             q0: str = "factorized") -> CheckResult:
    """|sum_x q(x) - 1| with q(x) summed over all trajectories."""
    q = random_sampler(d, K, T, make_rng(seed, "normalization"), q0)
    total = np.exp(logsumexp([marginal_logprob_exact(q, x) for x in all_states(d, K)]))
    return CheckResult(f"trajectory normalization (d={d}, K={K}, T={T}, {q0} q0)", abs(total - 1.0), 1e-10)


def _richardson(fn, params: np.ndarray, i: int, h: float = 1e-4) -> float:
    def central(step):
        up, down = params.copy(), params.copy()
        up[i] += step
        down[i] -= step
        return (fn(up) - fn(down)) / (2 * step)
    return (4 * central(h / 2) - central(h)) / 3


def posterior_gradient_identity(d: int = 3, T: int = 2, seed: int = 0,
                                q0: str = "factorized") -> CheckResult:
    """Self-normalized gradient over the full trajectory support versus grad log q(x).

    The proposal is uniform over every trajectory ending at x, so the SNIS
    weights are exactly the posterior q(traj | x). The reference gradient is
    an extrapolated central difference of the enumerated marginal.
    """
    q = random_sampler(d, 2, T, make_rng(seed, "identity"), q0)
    theta = q.get_params()
    worst = 0.0
    for x in all_states(d, 2):
        trajs = trajectories_ending_at(q, x)
        g = snis_grad_from_trajectories(q, trajs, np.zeros(len(trajs)))

        def marginal(p, x=x, trajs=trajs):
            return float(logsumexp(trajectory_logprobs(q.with_params(p), trajs)))

        fd = np.array([_richardson(marginal, theta, i) for i in range(theta.size)])
        worst = max(worst, float(np.abs(g - fd).max()))
    return CheckResult(f"posterior-weighted gradient = grad log q(x) (d={d}, T={T})", worst, 1e-8)


# --------------------------------------------------------------------------
# Finite-difference suites

def _check(name, loss, grad, params, rng, n_coords=40) -> CheckResult:
    idx = rng.choice(params.size, size=min(n_coords, params.size), replace=False)
    return CheckResult(f"gradcheck {name}", nn.gradient_check(loss, grad, params, indices=idx), GRAD_TOL)


def gradcheck_dense(rng) -> CheckResult:
    spec = nn.DenseNetSpec((5, 7, 6, 3), output_transform="log_softmax")
    p = nn.init_params(spec, rng)
    x = rng.standard_normal((4, 5))
    u = rng.standard_normal((4, 3))
    return _check("dense net (log_softmax head)", lambda t: float(np.sum(nn.net_forward(spec, t, x) * u)),
                  nn.net_backward(spec, p, x, u), p, rng)


def gradcheck_energy(rng) -> CheckResult:
    m = random_energy_model(8, 2, rng)
    pos = rng.integers(0, 2, (6, 8))
    neg = rng.integers(0, 2, (5, 8))

    def loss(t):
        mm = m.with_params(t)
        return float(np.mean(energy(mm, pos)) - np.mean(energy(mm, neg)))
    return _check("energy MLE gradient", loss, mle_param_gradient(m, pos, neg), m.params, rng)


def gradcheck_q0(rng, kind: str) -> CheckResult:
    d, K = 5, 3
    q0 = FactorizedInit(d, K, rng.standard_normal(d * K)) if kind == "factorized" else \
        AutoregressiveInit(d, K, 6, 4, 5, rng=rng)
    x = rng.integers(0, K, (7, d))
    w = rng.standard_normal(7)
    return _check(f"{kind} q0 log-prob", lambda t: float(w @ q0.with_params(t).log_prob(x)),
                  q0.grad(x, w), q0.params, rng)


def gradcheck_editor(rng, K: int) -> CheckResult:
    d = 5
    ed = Editor(d, K, 8, 8, rng=rng)
    x = rng.integers(0, K, (6, d))
    pos = rng.integers(0, d, 6)
    val = (x[np.arange(6), pos] + rng.integers(1, K, 6)) % K
    w = rng.standard_normal(6)
    return _check(f"editor (K={K})", lambda t: float(w @ ed.with_params(t)._log_prob_at(x, pos, val)),
                  ed.grad(x, pos, val, w), ed.params, rng)


def gradcheck_stop(rng) -> CheckResult:
    st = StopPolicy(5, 2, 8, rng=rng)
    x = rng.integers(0, 2, (8, 5))
    flag = rng.random(8) < 0.5
    w = rng.standard_normal(8)

    def loss(t):
        s = st.with_params(t)
        return float(w @ np.where(flag, s.log_stop(x), s.log_continue(x)))
    return _check("stop policy", loss, st.grad(x, flag, w), st.params, rng)


def gradcheck_trajectory(rng) -> CheckResult:
    q = random_sampler(4, 2, 3, rng, "autoregressive")
    x = all_states(4, 2)[5]
    trajs = trajectories_ending_at(q, x)
    w = rng.standard_normal(len(trajs))
    return _check("trajectory log-prob", lambda t: float(w @ trajectory_logprobs(q.with_params(t), trajs)),
                  trajectory_logprob_grad(q, trajs, w), q.get_params(), rng, n_coords=60)


def gradcheck_reinforce(rng) -> CheckResult:
    """Score-function gradient in expectation versus the enumerated objective -E_q f - H(q)."""
    d = 4
    f = random_energy_model(d, 2, rng)
    q0 = FactorizedInit(d, 2, rng.standard_normal(2 * d))
    S = all_states(d, 2)

    def objective(t):
        lq = q0.with_params(t).log_prob(S)
        return float(np.exp(lq) @ (lq - energy(f, S)))
    p = np.exp(q0.log_prob(S))
    grad = q0.grad(S, p * reinforce_costs(f, q0, S))
    return _check("REINFORCE objective (exact expectation)", objective, grad, q0.params, rng)


def run_gradcheck_suite(seed: int = 0) -> list[CheckResult]:
    rng = make_rng(seed, "gradcheck")
    return [gradcheck_dense(rng), gradcheck_energy(rng), gradcheck_q0(rng, "factorized"),
            gradcheck_q0(rng, "autoregressive"), gradcheck_editor(rng, 2), gradcheck_editor(rng, 3),
            gradcheck_stop(rng), gradcheck_trajectory(rng), gradcheck_reinforce(rng)]


def run_oracle_suite(seed: int = 0) -> list[CheckResult]:
    return [
        gibbs_stationarity(seed=seed),
        gibbs_stationarity(seed=seed, scan_order="random_permutation", d=4),
        trajectory_normalization(seed=seed),
        trajectory_normalization(seed=seed, q0="autoregressive"),
        trajectory_normalization(seed=seed, K=3, T=2),
        posterior_gradient_identity(seed=seed),
        posterior_gradient_identity(seed=seed, q0="autoregressive"),
    ]
