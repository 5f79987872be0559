"""Energy network f over discrete vectors, exact small-space oracles and the
maximum-likelihood parameter gradient."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nn

ENUMERATION_CAP = 2 ** 20


class EnumerationTooLarge(ValueError):
    pass


def one_hot(x: np.ndarray, K: int) -> np.ndarray:
    """Flatten ``(n, d)`` integer states into ``(n, d*K)`` one-hot rows."""
    x = np.asarray(x)
    n, d = x.shape
    out = np.zeros((n, d * K))
    out[np.arange(n)[:, None], np.arange(d)[None, :] * K + x] = 1.0
    return out


def network_input(x: np.ndarray, K: int) -> np.ndarray:
    """Binary states feed the network directly; K > 2 states are one-hot encoded."""
    x = np.asarray(x)
    if K == 2:
        return x.astype(np.float64)
    return one_hot(x, K)


def check_states(x, d: int, K: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise nn.ShapeError(f"states have shape {x.shape}, expected (n, {d})")
    if x.size and (x.min() < 0 or x.max() >= K):
        raise ValueError(f"state entries must lie in [0, {K})")
    return x, single


@dataclass
class EnergyModel:
    spec: nn.DenseNetSpec
    params: np.ndarray
    d: int = 32
    K: int = 2

    def __post_init__(self):
        width = self.d if self.K == 2 else self.d * self.K
        if self.spec.n_in != width or self.spec.n_out != 1:
            raise nn.ShapeError(f"energy net must map {width} inputs to 1 output, got {self.spec.layer_sizes}")

    @classmethod
    def create(cls, d: int = 32, K: int = 2, hidden=(256, 256, 256),
               rng: np.random.Generator | None = None) -> "EnergyModel":
        width = d if K == 2 else d * K
        spec = nn.DenseNetSpec((width, *hidden, 1), "elu")
        params = nn.init_params(spec, rng) if rng is not None else np.zeros(spec.n_params)
        return cls(spec, params, d, K)

    def with_params(self, params: np.ndarray) -> "EnergyModel":
        return EnergyModel(self.spec, params, self.d, self.K)

    def save(self, path) -> None:
        nn.write_blocks(path, [("energy", {"net": self.spec.to_dict(), "d": self.d, "K": self.K}, self.params)])

    @classmethod
    def load(cls, path) -> "EnergyModel":
        meta, values = nn.read_blocks(path)["energy"]
        return cls(nn.DenseNetSpec.from_dict(meta["net"]), values, meta["d"], meta["K"])


def energy(model: EnergyModel, x) -> np.ndarray | float:
    """f(x) for one state or a batch of states."""
    x, single = check_states(x, model.d, model.K)
    out = nn.forward(model.spec, model.params, network_input(x, model.K))[:, 0]
    return float(out[0]) if single else out


def weighted_energy_grad(model: EnergyModel, x, weights) -> np.ndarray:
    """Sum over rows of ``weights[i] * grad_params f(x[i])``."""
    x, _ = check_states(x, model.d, model.K)
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    _, cache = nn.forward(model.spec, model.params, network_input(x, model.K), keep_cache=True)
    return nn.backward(model.spec, model.params, cache, w)


def mle_param_gradient(model: EnergyModel, positives, negatives) -> np.ndarray:
    """Mean grad f over positives minus mean grad f over negatives.

    This is the ascent direction of the log-likelihood when the negatives
    are drawn from the model.
    """
    pos, _ = check_states(positives, model.d, model.K)
    neg, _ = check_states(negatives, model.d, model.K)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("mle_param_gradient needs non-empty positive and negative batches")
    # two separate means so identical batches cancel exactly
    g_pos = weighted_energy_grad(model, pos, np.full(len(pos), 1.0 / len(pos)))
    g_neg = weighted_energy_grad(model, neg, np.full(len(neg), 1.0 / len(neg)))
    return g_pos - g_neg


# --------------------------------------------------------------------------
# Enumeration oracles

def n_states(d: int, K: int) -> int:
    return K ** d


def all_states(d: int, K: int = 2, start: int = 0, stop: int | None = None) -> np.ndarray:
    """States with index in ``[start, stop)``; coordinate 0 is the most significant digit."""
    total = n_states(d, K)
    if total > ENUMERATION_CAP:
        raise EnumerationTooLarge(f"{K}^{d} = {total} states exceeds the enumeration cap {ENUMERATION_CAP}")
    stop = total if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    powers = K ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % K).astype(np.int64)


def state_index(x, K: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[-1]
    powers = K ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return x @ powers


def all_energies(model: EnergyModel, chunk: int = 1 << 16) -> np.ndarray:
    total = n_states(model.d, model.K)
    if total > ENUMERATION_CAP:
        raise EnumerationTooLarge(f"{total} states exceeds the enumeration cap {ENUMERATION_CAP}")
    return np.concatenate([energy(model, all_states(model.d, model.K, s, min(s + chunk, total)))
                           for s in range(0, total, chunk)])


def log_partition_exact(model: EnergyModel, chunk: int = 1 << 16) -> float:
    """log sum_x exp f(x), accumulated chunk by chunk."""
    total = n_states(model.d, model.K)
    if total > ENUMERATION_CAP:
        raise EnumerationTooLarge(f"{total} states exceeds the enumeration cap {ENUMERATION_CAP}")
    acc = -np.inf
    for s in range(0, total, chunk):
        e = energy(model, all_states(model.d, model.K, s, min(s + chunk, total)))
        m = e.max()
        acc = np.logaddexp(acc, m + np.log(np.exp(e - m).sum()))
    return float(acc)


def exact_distribution(model: EnergyModel) -> np.ndarray:
    """p_f over all states, indexed as in :func:`all_states`."""
    e = all_energies(model)
    p = np.exp(e - e.max())
    return p / p.sum()


def write_energy_csv(path, model: EnergyModel, x) -> None:
    x, _ = check_states(x, model.d, model.K)
    e = energy(model, x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(model.d)] + ["energy"])
        for row, v in zip(x, e):
            w.writerow([int(b) for b in row] + [repr(float(v))])
