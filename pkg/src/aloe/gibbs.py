"""Single-site Gibbs sampling for an energy model.

One sweep visits each coordinate once and resamples it from its conditional
under p_f. This is the MCMC kernel used both to refine sampler outputs
during training and to draw evaluation samples.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .energy import EnergyModel, all_energies, all_states, check_states, energy, state_index


@dataclass(frozen=True)
class GibbsConfig:
    sweeps: int = 1
    scan_order: str = "systematic"  # or "random_permutation"
    rng_seed: int = 0

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.scan_order not in ("systematic", "random_permutation"):
            raise ValueError(f"unknown scan order {self.scan_order!r}")


def _completions(x: np.ndarray, i: int, K: int) -> np.ndarray:
    """Rows ``x`` with coordinate i set to each value: shape (n, K, d)."""
    y = np.repeat(x[:, None, :], K, axis=1)
    y[:, :, i] = np.arange(K)[None, :]
    return y


def conditional_distribution(model: EnergyModel, x, i: int) -> np.ndarray:
    """p(x_i = b | x_{-i}) for every value b; batched over rows of ``x``."""
    if not 0 <= i < model.d:
        raise IndexError(f"coordinate {i} out of range for d={model.d}")
    x, single = check_states(x, model.d, model.K)
    y = _completions(x, i, model.K)
    e = energy(model, y.reshape(-1, model.d)).reshape(len(x), model.K)
    e -= e.max(axis=1, keepdims=True)
    p = np.exp(e)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def _scan(d: int, order: str, rng: np.random.Generator) -> np.ndarray:
    return np.arange(d) if order == "systematic" else rng.permutation(d)


def gibbs_sweep(model: EnergyModel, x, rng: np.random.Generator,
                scan_order: str = "systematic") -> np.ndarray:
    """One full pass over coordinates; batched over rows of ``x``."""
    x, single = check_states(x, model.d, model.K)
    x = x.copy()
    n = len(x)
    order = _scan(model.d, scan_order, rng)
    if model.K == 2:
        # only the flipped completion needs a fresh energy evaluation
        e_cur = energy(model, x)
        for i in order:
            y = x.copy()
            y[:, i] ^= 1
            e_flip = energy(model, y)
            accept = rng.random(n) < expit(e_flip - e_cur)
            x[accept, i] = y[accept, i]
            e_cur = np.where(accept, e_flip, e_cur)
    else:
        for i in order:
            p = conditional_distribution(model, x, i)
            u = rng.random(n)[:, None]
            x[:, i] = np.minimum((u > np.cumsum(p, axis=1)).sum(axis=1), model.K - 1)
    return x[0] if single else x


def gibbs_run(model: EnergyModel, x, n_sweeps: int, rng: np.random.Generator,
              scan_order: str = "systematic") -> np.ndarray:
    """Final states after ``n_sweeps`` sweeps (no intermediate history)."""
    for _ in range(n_sweeps):
        x = gibbs_sweep(model, x, rng, scan_order)
    return np.asarray(x)


def gibbs_chain(model: EnergyModel, x0, n_sweeps: int, rng: np.random.Generator,
                scan_order: str = "systematic") -> list[np.ndarray]:
    """``[x0, x1, ..., x_n]`` with one recorded state per sweep."""
    if n_sweeps < 0:
        raise ValueError("n_sweeps must be >= 0")
    out = [np.asarray(x0).copy()]
    for _ in range(n_sweeps):
        out.append(gibbs_sweep(model, out[-1], rng, scan_order))
    return out


# --------------------------------------------------------------------------
# Exact kernel for small spaces

def site_transition_matrix(model: EnergyModel, i: int, energies: np.ndarray | None = None) -> np.ndarray:
    """Exact K^d x K^d matrix of the single-site update at coordinate ``i``."""
    e = all_energies(model) if energies is None else energies
    S = all_states(model.d, model.K)
    n = len(S)
    cols = []
    for b in range(model.K):
        y = S.copy()
        y[:, i] = b
        cols.append(state_index(y, model.K))
    cols = np.stack(cols, axis=1)
    ce = e[cols]
    w = np.exp(ce - ce.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    P = np.zeros((n, n))
    for b in range(model.K):
        P[np.arange(n), cols[:, b]] = w[:, b]
    return P


def sweep_transition_matrix(model: EnergyModel, scan_order: str = "systematic") -> np.ndarray:
    """Exact one-sweep kernel. Row vector ``p @ P`` applies the sweep to ``p``.

    For ``random_permutation`` the kernel is the average over all d! orders.
    """
    e = all_energies(model)
    sites = [site_transition_matrix(model, i, e) for i in range(model.d)]
    if scan_order == "systematic":
        P = sites[0]
        for Pi in sites[1:]:
            P = P @ Pi
        return P
    total = np.zeros_like(sites[0])
    count = 0
    for perm in itertools.permutations(range(model.d)):
        P = sites[perm[0]]
        for i in perm[1:]:
            P = P @ sites[i]
        total += P
        count += 1
    return total / count


def write_samples_csv(path, samples: np.ndarray) -> None:
    """One row per sample, d comma-separated integers."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(samples):
            w.writerow([int(b) for b in row])


def read_samples_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[int(v) for v in row] for row in csv.reader(fh) if row], dtype=np.int64)
