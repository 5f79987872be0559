"""Dense feedforward networks over flat float64 parameter vectors.

Every model in the package (energy net, editor, stop policy, autoregressive
initial sampler) is a stack of affine layers with an optional ELU between
them. Parameters live in one flat ``float64`` array per network so that
optimizers, gradient checks and checkpoints all operate on plain vectors.

Layout of the flat vector, layer by layer: the weight matrix ``W`` of shape
``(n_in, n_out)`` in row-major order, then the bias ``b`` of length
``n_out``. A layer computes ``x @ W + b`` on row-batched inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("elu", "none")
OUTPUT_TRANSFORMS = ("identity", "log_softmax", "log_sigmoid")


class ShapeError(ValueError):
    """Raised when an input or parameter vector does not match a network spec."""


@dataclass(frozen=True)
class DenseNetSpec:
    """Shape of a feedforward network.

    ``activation`` is either one name applied after every hidden layer or a
    tuple with one entry per hidden layer.
    """

    layer_sizes: tuple[int, ...]
    activation: str | tuple[str, ...] = "elu"
    output_transform: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * (len(sizes) - 2)
        acts = tuple(acts)
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"expected {len(sizes) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")
        if self.output_transform == "log_sigmoid" and sizes[-1] != 1:
            raise ValueError("log_sigmoid output needs width 1")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": list(self.activation),
            "output_transform": self.output_transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNetSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activation"]), d["output_transform"])


def layer_views(spec: DenseNetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``(W, b)`` views into ``params`` for every layer."""
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ShapeError(f"parameter vector has shape {params.shape}, spec needs ({spec.n_params},)")
    views = []
    off = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = params[off:off + a * b].reshape(a, b)
        off += a * b
        bias = params[off:off + b]
        off += b
        views.append((W, bias))
    return views


def init_params(spec: DenseNetSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    params = np.zeros(spec.n_params)
    for W, _ in layer_views(spec, params):
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def elu(z: np.ndarray) -> np.ndarray:
    # expm1(z) >= z everywhere, so the max picks z exactly when z > 0
    return np.maximum(z, np.expm1(np.minimum(z, 0.0)))


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    # log(1 / (1 + e^-z)) without overflow on either side
    return -np.logaddexp(0.0, -z)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


@dataclass
class ForwardCache:
    """Intermediate values kept for the backward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    preacts: list[np.ndarray] = field(default_factory=list)  # z of each layer
    output: np.ndarray | None = None
    squeeze: bool = False


def _as_batch(spec: DenseNetSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.n_in:
        raise ShapeError(f"input has shape {x.shape}, network expects width {spec.n_in}")
    return x, squeeze


def _apply_output(spec: DenseNetSpec, z: np.ndarray) -> np.ndarray:
    if spec.output_transform == "log_softmax":
        return log_softmax(z)
    if spec.output_transform == "log_sigmoid":
        return log_sigmoid(z)
    return z


def forward(spec: DenseNetSpec, params: np.ndarray, x, transform: bool = True,
            keep_cache: bool = False):
    """Evaluate the network on a single input or a batch of rows.

    With ``transform=False`` the output transform is skipped and the raw
    final-layer preactivation is returned. With ``keep_cache=True`` the
    return value is ``(output, cache)``.
    """
    h, squeeze = _as_batch(spec, x)
    views = layer_views(spec, params)
    cache = ForwardCache(squeeze=squeeze) if keep_cache else None
    last = len(views) - 1
    for li, (W, b) in enumerate(views):
        if cache is not None:
            cache.inputs.append(h)
        z = h @ W
        z += b
        if cache is not None:
            cache.preacts.append(z)
        if li < last:
            h = elu(z) if spec.activation[li] == "elu" else z
        else:
            h = _apply_output(spec, z) if transform else z
    if cache is not None:
        cache.output = h
    out = h[0] if squeeze else h
    return (out, cache) if keep_cache else out


def backward(spec: DenseNetSpec, params: np.ndarray, cache: ForwardCache, upstream,
             transform: bool = True, input_grad: bool = False):
    """Reverse pass for a cached forward evaluation.

    Returns the gradient of ``sum(upstream * output)`` with respect to the
    flat parameters, summed over batch rows. With ``input_grad=True`` also
    returns the gradient with respect to the network input.
    """
    u = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze and u.ndim == 1:
        u = u[None, :]
    z_last = cache.preacts[-1]
    if u.shape != z_last.shape:
        raise ShapeError(f"upstream has shape {u.shape}, output is {z_last.shape}")
    if transform and spec.output_transform == "log_softmax":
        p = np.exp(cache.output)
        dz = u - p * u.sum(axis=1, keepdims=True)
    elif transform and spec.output_transform == "log_sigmoid":
        # d/dz log sigmoid(z) = sigmoid(-z)
        dz = u * np.exp(log_sigmoid(-z_last))
    else:
        dz = u
    grad = np.empty(spec.n_params)
    gviews = layer_views(spec, grad)
    views = layer_views(spec, params)
    for li in range(len(views) - 1, -1, -1):
        W, _ = views[li]
        gW, gb = gviews[li]
        np.matmul(cache.inputs[li].T, dz, out=gW)
        gb[...] = dz.sum(axis=0)
        if li == 0 and not input_grad:
            break
        dh = dz @ W.T
        if li == 0:
            gx = dh[0] if cache.squeeze else dh
            return grad, gx
        if spec.activation[li - 1] == "elu":
            # elu'(z) = 1 for z > 0 and elu(z) + 1 otherwise
            dh *= np.minimum(cache.inputs[li] + 1.0, 1.0)
        dz = dh
    return grad


def net_forward(spec: DenseNetSpec, params: np.ndarray, x) -> np.ndarray:
    return forward(spec, params, x)


def net_backward(spec: DenseNetSpec, params: np.ndarray, x, upstream) -> np.ndarray:
    """Gradient of ``upstream . net(x)`` with respect to ``params``."""
    _, cache = forward(spec, params, x, keep_cache=True)
    return backward(spec, params, cache, upstream)


# --------------------------------------------------------------------------
# Optimizer

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float = 1e-3, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **hyper)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite gradient entry {value!r} at index {index}")
        self.index = index


def optimizer_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One Adam descent step on ``grad``. Returns ``(new_params, new_state)``."""
    if not (params.shape == grad.shape == state.first_moment.shape):
        raise ShapeError(
            f"params {params.shape}, grad {grad.shape}, moments {state.first_moment.shape} disagree")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NonFiniteGradient(int(bad[0]), float(grad[bad[0]]))
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * grad * grad
    t = state.step_count + 1
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, b1, b2, state.epsilon)
    return new_params, new_state


# --------------------------------------------------------------------------
# Gradient checking

def gradient_check(loss: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                   params: np.ndarray, step: float = 1e-5, floor: float = 1e-4,
                   indices: Sequence[int] | None = None) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``loss`` maps a parameter vector to a scalar; ``grad`` is either the
    analytic gradient at ``params`` or a callable producing it. The error
    for each checked coordinate is ``|g - fd| / max(floor, |fd|)``; the floor
    keeps central-difference rounding noise on vanishing gradients from
    reading as a large relative error.
    """
    params = np.array(params, dtype=np.float64)
    g = grad(params) if callable(grad) else np.asarray(grad)
    idx = range(params.size) if indices is None else indices
    worst = 0.0
    for i in idx:
        old = params[i]
        params[i] = old + step
        up = loss(params)
        params[i] = old - step
        down = loss(params)
        params[i] = old
        fd = (up - down) / (2.0 * step)
        worst = max(worst, abs(g[i] - fd) / max(floor, abs(fd)))
    return worst


# --------------------------------------------------------------------------
# Checkpoints
#
# A checkpoint is a sequence of blocks. Each block is one UTF-8 JSON header
# line ``{"name": ..., "spec": ..., "count": n}`` followed by ``8 * n`` bytes
# of little-endian float64 values in flat-parameter order.

def write_blocks(path, blocks: Sequence[tuple[str, dict | None, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        for name, spec, values in blocks:
            values = np.ascontiguousarray(values, dtype="<f8")
            header = {"name": name, "spec": spec, "count": int(values.size)}
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(values.tobytes())


def read_blocks(path) -> dict[str, tuple[dict | None, np.ndarray]]:
    out = {}
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                break
            header = json.loads(line)
            n = header["count"]
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"truncated checkpoint block {header['name']!r}")
            out[header["name"]] = (header["spec"], np.frombuffer(raw, dtype="<f8").astype(np.float64))
    return out


def save_params(path, spec: DenseNetSpec, params: np.ndarray, name: str = "net") -> None:
    write_blocks(path, [(name, spec.to_dict(), params)])


def load_params(path, name: str = "net") -> tuple[DenseNetSpec, np.ndarray]:
    spec, values = read_blocks(path)[name]
    spec = DenseNetSpec.from_dict(spec)
    if values.size != spec.n_params:
        raise ShapeError(f"checkpoint holds {values.size} values, spec needs {spec.n_params}")
    return spec, values
