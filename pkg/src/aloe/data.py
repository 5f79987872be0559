"""2D toy densities and the Gray-code lift to 32-bit binary vectors.

The recipes are the usual toy-density constructions (two spirals, eight
Gaussians, checkerboard, circles, moons, pinwheel, swiss roll), written
against an explicit ``numpy.random.Generator`` so draws are reproducible.
Each point is mapped to bits by quantizing every coordinate to 16 bits and
Gray-encoding the level; the first 16 bits hold the first coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DATASETS = ("2spirals", "8gaussians", "checkerboard", "circles", "moons", "pinwheel", "swissroll")


class UnknownDataset(KeyError):
    def __str__(self):
        return f"unknown dataset {self.args[0]!r}; choose from {', '.join(DATASETS)}"


def _swissroll(n, rng):
    t = 1.5 * np.pi * (1 + 2 * rng.random(n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    pts += rng.standard_normal((n, 2))
    return pts / 5.0


def _circles(n, rng):
    # two concentric rings, radii 1 and 0.5, scaled by 3
    n_out = n // 2
    n_in = n - n_out
    a_out = np.linspace(0, 2 * np.pi, n_out, endpoint=False)
    a_in = np.linspace(0, 2 * np.pi, n_in, endpoint=False)
    pts = np.concatenate([
        np.stack([np.cos(a_out), np.sin(a_out)], axis=1),
        0.5 * np.stack([np.cos(a_in), np.sin(a_in)], axis=1),
    ])
    pts += 0.08 * rng.standard_normal(pts.shape)
    return 3.0 * pts[rng.permutation(n)]


def _moons(n, rng):
    n_out = n // 2
    n_in = n - n_out
    a_out = np.linspace(0, np.pi, n_out)
    a_in = np.linspace(0, np.pi, n_in)
    pts = np.concatenate([
        np.stack([np.cos(a_out), np.sin(a_out)], axis=1),
        np.stack([1 - np.cos(a_in), 1 - np.sin(a_in) - 0.5], axis=1),
    ])
    pts += 0.1 * rng.standard_normal(pts.shape)
    pts = pts[rng.permutation(n)]
    return pts * 2 + np.array([-1.0, -0.2])


def _8gaussians(n, rng):
    s = 1.0 / np.sqrt(2)
    centers = 4.0 * np.array([(1, 0), (-1, 0), (0, 1), (0, -1), (s, s), (s, -s), (-s, s), (-s, -s)])
    pts = 0.5 * rng.standard_normal((n, 2)) + centers[rng.integers(0, 8, n)]
    return pts / 1.414


def _pinwheel(n, rng):
    radial_std, tangential_std, n_arms, rate = 0.3, 0.1, 5, 0.25
    rads = np.linspace(0, 2 * np.pi, n_arms, endpoint=False)
    feats = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    labels = rng.integers(0, n_arms, n)
    angles = rads[labels] + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    x = feats[:, 0] * c + feats[:, 1] * s
    y = -feats[:, 0] * s + feats[:, 1] * c
    return 2.0 * np.stack([x, y], axis=1)


def _2spirals(n, rng):
    half = n // 2
    t = np.sqrt(rng.random((half, 1))) * 540 * (2 * np.pi) / 360
    d1x = -np.cos(t) * t + rng.random((half, 1)) * 0.5
    d1y = np.sin(t) * t + rng.random((half, 1)) * 0.5
    arm = np.hstack([d1x, d1y])
    pts = np.vstack([arm, -arm]) / 3.0
    if len(pts) < n:
        pts = np.vstack([pts, pts[:1]])
    pts += 0.1 * rng.standard_normal(pts.shape)
    return pts[rng.permutation(n)]


def _checkerboard(n, rng):
    x1 = rng.random(n) * 4 - 2
    x2 = rng.random(n) - rng.integers(0, 2, n) * 2
    x2 = x2 + (np.floor(x1) % 2)
    return 2.0 * np.stack([x1, x2], axis=1)


_RECIPES = {
    "2spirals": _2spirals,
    "8gaussians": _8gaussians,
    "checkerboard": _checkerboard,
    "circles": _circles,
    "moons": _moons,
    "pinwheel": _pinwheel,
    "swissroll": _swissroll,
}


def sample_2d(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points from the named toy density, shape ``(n, 2)``."""
    if name not in _RECIPES:
        raise UnknownDataset(name)
    if n < 1:
        raise ValueError("n must be >= 1")
    return _RECIPES[name](n, rng)


# --------------------------------------------------------------------------
# Gray codec

def gray_encode(level):
    level = np.asarray(level, dtype=np.int64)
    return level ^ (level >> 1)


def gray_decode(code):
    b = np.asarray(code, dtype=np.int64).copy()
    shift = b >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


@dataclass(frozen=True)
class GrayCodec:
    lo: float = -5.0
    hi: float = 5.0
    bits_per_dim: int = 16

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("codec needs lo < hi")

    @property
    def levels(self) -> int:
        return 1 << self.bits_per_dim

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.levels

    @property
    def d(self) -> int:
        return 2 * self.bits_per_dim

    def header(self) -> str:
        return f"# gray-codec lo={self.lo!r} hi={self.hi!r} bits_per_dim={self.bits_per_dim}"


def float_to_code(codec: GrayCodec, v):
    """Quantize to ``[0, levels)`` (clamping out-of-range values) and Gray-encode."""
    v = np.asarray(v, dtype=np.float64)
    level = np.floor((v - codec.lo) / codec.step).astype(np.int64)
    level = np.clip(level, 0, codec.levels - 1)
    return gray_encode(level)


def code_to_float(codec: GrayCodec, code):
    """Center of the quantization bin of a Gray code."""
    return codec.lo + (gray_decode(code) + 0.5) * codec.step


def _code_to_bits(code: np.ndarray, nbits: int) -> np.ndarray:
    shifts = np.arange(nbits - 1, -1, -1, dtype=np.int64)
    return ((code[..., None] >> shifts) & 1).astype(np.int64)


def _bits_to_code(bits: np.ndarray) -> np.ndarray:
    nbits = bits.shape[-1]
    return bits.astype(np.int64) @ (1 << np.arange(nbits - 1, -1, -1, dtype=np.int64))


def encode_point(codec: GrayCodec, pts) -> np.ndarray:
    """Points ``(n, 2)`` (or a single pair) to bit vectors of length ``2 * bits_per_dim``.

    Bits are most-significant first within each coordinate.
    """
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    codes = float_to_code(codec, pts)
    bits = _code_to_bits(codes, codec.bits_per_dim).reshape(len(pts), codec.d)
    return bits[0] if single else bits


def decode_point(codec: GrayCodec, bits) -> np.ndarray:
    bits = np.asarray(bits)
    single = bits.ndim == 1
    bits = np.atleast_2d(bits)
    k = codec.bits_per_dim
    codes = np.stack([_bits_to_code(bits[:, :k]), _bits_to_code(bits[:, k:])], axis=1)
    pts = code_to_float(codec, codes)
    return pts[0] if single else pts


def sample_bits(name: str, n: int, rng: np.random.Generator, codec: GrayCodec | None = None) -> np.ndarray:
    """Draw 2D points and return their encoded bit vectors."""
    return encode_point(codec or GrayCodec(), sample_2d(name, n, rng))


def write_points_csv(path, pts: np.ndarray, codec: GrayCodec | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if codec is not None:
            fh.write(codec.header() + "\n")
        w = csv.writer(fh)
        for row in np.asarray(pts):
            w.writerow([repr(float(v)) for v in row])


def write_bits_csv(path, bits: np.ndarray, codec: GrayCodec) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(codec.header() + "\n")
        w = csv.writer(fh)
        for row in np.asarray(bits):
            w.writerow([int(v) for v in row])
