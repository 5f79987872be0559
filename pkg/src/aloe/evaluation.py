"""MMD with the Hamming-similarity kernel, energy heatmaps, importance-sampled
NLL and gradient-variance statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .data import GrayCodec, encode_point
from .energy import EnergyModel, energy
from .gibbs import gibbs_run

EVAL_SAMPLES = 4000
EVAL_SWEEPS = 20


@dataclass
class MmdReport:
    value: float
    n_x: int
    n_y: int
    estimator: str = "unbiased"

    @property
    def scaled(self) -> float:
        """The value in units of 1e-3."""
        return self.value * 1e3

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "value_x1e-3": self.scaled}, sort_keys=True)


def _kernel_sums(X: np.ndarray, Y: np.ndarray) -> float:
    """Sum over all pairs of d - Hamming(a, b)."""
    # For binary rows, d - Ham(a, b) = <a, b> + <1 - a, 1 - b>.
    Xf = X.astype(np.float64)
    Yf = Y.astype(np.float64)
    d = X.shape[1]
    sx, sy = Xf.sum(axis=0), Yf.sum(axis=0)
    return float(sx @ sy + (len(X) - sx) @ (len(Y) - sy)) if d else 0.0


def _kernel_sums_categorical(X: np.ndarray, Y: np.ndarray, K: int) -> float:
    total = 0.0
    for v in range(K):
        total += float((X == v).sum(axis=0).astype(np.float64) @ (Y == v).sum(axis=0))
    return total


def mmd_hamming(X, Y, estimator: str = "unbiased") -> float:
    """Squared MMD under the kernel k(a, b) = d - Hamming(a, b).

    The unbiased estimator drops the diagonal from the within-set means and
    can be negative.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"sample sets must be (n, d) with equal d, got {X.shape} and {Y.shape}")
    m, n, d = len(X), len(Y), X.shape[1]
    K = int(max(X.max(initial=0), Y.max(initial=0))) + 1
    sums = _kernel_sums if K <= 2 else (lambda a, b: _kernel_sums_categorical(a, b, K))
    kxx, kyy, kxy = sums(X, X), sums(Y, Y), sums(X, Y)
    if estimator == "biased":
        return kxx / m ** 2 + kyy / n ** 2 - 2 * kxy / (m * n)
    if estimator != "unbiased":
        raise ValueError(f"unknown estimator {estimator!r}")
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least two samples in each set")
    # k(x, x) = d on the diagonal
    return (kxx - m * d) / (m * (m - 1)) + (kyy - n * d) / (n * (n - 1)) - 2 * kxy / (m * n)


def mmd_report(X, Y, estimator: str = "unbiased") -> MmdReport:
    return MmdReport(mmd_hamming(X, Y, estimator), len(X), len(Y), estimator)


def sample_energy_model(model: EnergyModel, rng: np.random.Generator, n: int = EVAL_SAMPLES,
                        sweeps: int = EVAL_SWEEPS, chunk: int = 1000) -> np.ndarray:
    """Evaluation protocol: Gibbs chains started from uniform random states."""
    out = []
    for s in range(0, n, chunk):
        m = min(chunk, n - s)
        x0 = rng.integers(0, model.K, size=(m, model.d))
        out.append(gibbs_run(model, x0, sweeps, rng))
    return np.concatenate(out)


# --------------------------------------------------------------------------
# Heatmaps

@dataclass
class Heatmap:
    raw: np.ndarray
    normalized: np.ndarray
    centers: np.ndarray  # (res, res, 2): [row, col] -> (a, b)
    lo: float
    hi: float


def heatmap_scores(model: EnergyModel, codec: GrayCodec, resolution: int,
                   lo: float = -4.0, hi: float = 4.0) -> Heatmap:
    """Energies on a ``resolution x resolution`` grid of cell centers over [lo, hi]^2.

    Row index follows the second coordinate from high to low so the array
    reads like an image; column index follows the first coordinate.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    width = (hi - lo) / resolution
    ticks = lo + (np.arange(resolution) + 0.5) * width
    a, b = np.meshgrid(ticks, ticks[::-1])
    centers = np.stack([a, b], axis=-1)
    raw = energy(model, encode_point(codec, centers.reshape(-1, 2))).reshape(resolution, resolution)
    span = raw.max() - raw.min()
    norm = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
    return Heatmap(raw, norm, centers, lo, hi)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM from values in [0, 1]."""
    img = np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_heatmap_csv(path, hm: Heatmap) -> None:
    with open(path, "w") as fh:
        fh.write("a,b,energy,normalized\n")
        for (a, b), e, z in zip(hm.centers.reshape(-1, 2), hm.raw.ravel(), hm.normalized.ravel()):
            fh.write(f"{float(a)!r},{float(b)!r},{float(e)!r},{float(z)!r}\n")


# --------------------------------------------------------------------------
# Likelihood and variance diagnostics

def log_partition_is(model: EnergyModel, q0, n_is: int, rng: np.random.Generator,
                     chunk: int = 4096) -> float:
    """log of the importance-sampling estimate of Z with proposal ``q0``."""
    vals = []
    for s in range(0, n_is, chunk):
        x, logq = q0.sample(min(chunk, n_is - s), rng)
        vals.append(energy(model, x) - logq)
    v = np.concatenate(vals)
    return float(logsumexp(v) - np.log(len(v)))


def nll_importance_estimate(model: EnergyModel, q0, data, n_is: int,
                            rng: np.random.Generator) -> float:
    """Average negative log-likelihood of ``data`` with an importance-sampled log Z."""
    return log_partition_is(model, q0, n_is, rng) - float(np.mean(energy(model, data)))


def gradient_variance(estimates) -> float:
    """Mean over parameters of the unbiased variance across estimates (rows)."""
    g = np.asarray(estimates, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] < 2:
        raise ValueError("gradient_variance needs at least two estimates")
    return float(np.var(g, axis=0, ddof=1).mean())
