"""Learned local-search sampler.

A sample is produced by drawing ``x0`` from an initial distribution, then
repeatedly asking a stop policy whether to halt and, if not, letting an
editor change one coordinate. The visited states form a trajectory whose
probability factorizes over these decisions; the marginal over the final
state sums over every trajectory of length at most ``T``. When a trajectory
reaches ``T`` edits it is stopped without consulting the stop policy.

Gradients of log q(x) with respect to the sampler parameters are estimated
by self-normalized importance sampling over trajectories that end exactly
at ``x``, drawn either by walking backward from ``x`` (inverse proposal) or
along a shortest edit path from an ``x0`` draw (edit-distance proposal).
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import nn
from .energy import check_states, network_input, one_hot

MAX_ENUMERATED_TRAJECTORIES = 1_000_000


def _categorical(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from rows of log-probabilities."""
    u = rng.random(len(logp))[:, None]
    c = np.cumsum(np.exp(logp), axis=1)
    return np.minimum((u > c).sum(axis=1), logp.shape[1] - 1)


# --------------------------------------------------------------------------
# Initial distributions

class FactorizedInit:
    """Independent categorical per coordinate, parameterized by a d x K logit table."""

    kind = "factorized"

    def __init__(self, d: int, K: int = 2, params: np.ndarray | None = None):
        self.d, self.K = d, K
        self.params = np.zeros(d * K) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (d * K,):
            raise nn.ShapeError(f"factorized q0 needs {d * K} logits, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return self.d * self.K

    def with_params(self, params) -> "FactorizedInit":
        return FactorizedInit(self.d, self.K, params)

    def log_table(self) -> np.ndarray:
        return nn.log_softmax(self.params.reshape(self.d, self.K))

    def log_prob(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        lt = self.log_table()
        return lt[np.arange(self.d)[None, :], x].sum(axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        lt = self.log_table()
        if self.K == 2:
            x = (rng.random((n, self.d)) < np.exp(lt[:, 1])[None, :]).astype(np.int64)
        else:
            u = rng.random((n, self.d, 1))
            x = np.minimum((u > np.cumsum(np.exp(lt), axis=1)[None]).sum(axis=2), self.K - 1)
        return x, lt[np.arange(self.d)[None, :], x].sum(axis=1)

    def grad(self, x, weights) -> np.ndarray:
        """Sum of ``weights[i] * grad log q0(x[i])``."""
        x, _ = check_states(x, self.d, self.K)
        w = np.asarray(weights, dtype=np.float64)
        counts = np.zeros((self.d, self.K))
        for k in range(self.K):
            counts[:, k] = w @ (x == k)
        p = np.exp(self.log_table())
        return (counts - w.sum() * p).ravel()

    def per_sample_grads(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        p = np.exp(self.log_table())
        return (one_hot(x, self.K).reshape(len(x), self.d, self.K) - p[None]).reshape(len(x), -1)

    def spec_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "K": self.K}


class AutoregressiveInit:
    """Per-position prefix encoders feeding one shared predictor head.

    Position 0 uses a learned embedding; position ``i > 0`` embeds the
    one-hot prefix ``x[:i]`` with its own MLP ``[i*K, hidden, hidden, embed]``.
    The shared head ``[embed, head_hidden, K]`` turns an embedding into
    log-probabilities of the next value.
    """

    kind = "autoregressive"

    def __init__(self, d: int, K: int = 2, hidden: int = 512, embed: int = 256,
                 head_hidden: int = 512, params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None):
        self.d, self.K = d, K
        self.hidden, self.embed, self.head_hidden = hidden, embed, head_hidden
        self.prefix_specs = [nn.DenseNetSpec((i * K, hidden, hidden, embed), "elu") for i in range(1, d)]
        self.head_spec = nn.DenseNetSpec((embed, head_hidden, K), "elu", "log_softmax")
        sizes = [embed] + [s.n_params for s in self.prefix_specs] + [self.head_spec.n_params]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        if params is None:
            params = np.zeros(int(self._offsets[-1]))
            if rng is not None:
                for i, s in enumerate(self.prefix_specs):
                    params[self._offsets[i + 1]:self._offsets[i + 2]] = nn.init_params(s, rng)
                params[self._offsets[-2]:] = nn.init_params(self.head_spec, rng)
        self.params = np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise nn.ShapeError(f"autoregressive q0 needs {self.n_params} params, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return int(self._offsets[-1])

    def with_params(self, params) -> "AutoregressiveInit":
        return AutoregressiveInit(self.d, self.K, self.hidden, self.embed, self.head_hidden, params)

    def _start(self):
        return self.params[:self.embed]

    def _prefix_params(self, i):  # i >= 1
        return self.params[self._offsets[i]:self._offsets[i + 1]]

    def _head_params(self):
        return self.params[self._offsets[-2]:]

    def _embeddings(self, x: np.ndarray, keep_cache: bool = False):
        n = len(x)
        oh = one_hot(x, self.K)
        embs = np.empty((n, self.d, self.embed))
        embs[:, 0] = self._start()
        caches = [None]
        for i in range(1, self.d):
            out = nn.forward(self.prefix_specs[i - 1], self._prefix_params(i), oh[:, :i * self.K],
                             keep_cache=keep_cache)
            if keep_cache:
                out, c = out
                caches.append(c)
            embs[:, i] = out
        return embs, caches

    def conditional_logprobs(self, x) -> np.ndarray:
        """``(n, d, K)`` log p(x_i = k | x_{<i}) under teacher forcing."""
        x, _ = check_states(x, self.d, self.K)
        embs, _ = self._embeddings(x)
        lp = nn.forward(self.head_spec, self._head_params(), embs.reshape(-1, self.embed))
        return lp.reshape(len(x), self.d, self.K)

    def log_prob(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        lp = self.conditional_logprobs(x)
        return np.take_along_axis(lp, x[:, :, None], axis=2)[:, :, 0].sum(axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x = np.zeros((n, self.d), dtype=np.int64)
        oh = np.zeros((n, self.d * self.K))
        logq = np.zeros(n)
        head = self._head_params()
        for i in range(self.d):
            if i == 0:
                emb = np.broadcast_to(self._start(), (n, self.embed))
            else:
                emb = nn.forward(self.prefix_specs[i - 1], self._prefix_params(i), oh[:, :i * self.K])
            lp = nn.forward(self.head_spec, head, emb)
            xi = _categorical(lp, rng)
            x[:, i] = xi
            oh[np.arange(n), i * self.K + xi] = 1.0
            logq += lp[np.arange(n), xi]
        return x, logq

    def grad(self, x, weights) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        w = np.asarray(weights, dtype=np.float64)
        n = len(x)
        embs, caches = self._embeddings(x, keep_cache=True)
        head = self._head_params()
        _, hcache = nn.forward(self.head_spec, head, embs.reshape(-1, self.embed), keep_cache=True)
        up = np.zeros((n * self.d, self.K))
        up[np.arange(n * self.d), x.ravel()] = np.repeat(w, self.d)
        g_head, g_emb = nn.backward(self.head_spec, head, hcache, up, input_grad=True)
        g_emb = g_emb.reshape(n, self.d, self.embed)
        out = np.zeros(self.n_params)
        out[:self.embed] = g_emb[:, 0].sum(axis=0)
        for i in range(1, self.d):
            out[self._offsets[i]:self._offsets[i + 1]] = nn.backward(
                self.prefix_specs[i - 1], self._prefix_params(i), caches[i], g_emb[:, i])
        out[self._offsets[-2]:] = g_head
        return out

    def per_sample_grads(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        return np.stack([self.grad(row[None], [1.0]) for row in x])

    def spec_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "K": self.K, "hidden": self.hidden,
                "embed": self.embed, "head_hidden": self.head_hidden}


def init_from_dict(meta: dict, params: np.ndarray):
    if meta["kind"] == "factorized":
        return FactorizedInit(meta["d"], meta["K"], params)
    return AutoregressiveInit(meta["d"], meta["K"], meta["hidden"], meta["embed"], meta["head_hidden"], params)


def init_sample(q0, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    x, lp = q0.sample(1, rng)
    return x[0], float(lp[0])


def init_logprob(q0, x) -> float:
    return float(q0.log_prob(np.asarray(x)[None])[0])


# --------------------------------------------------------------------------
# Editor and stop policy

class Editor:
    """Chooses one coordinate to change and, for K > 2, its new value.

    For K = 2 the chosen bit is flipped. For K > 2 the value head sees the
    one-hot state and the one-hot position, and the current value is masked
    out so every edit changes the state.
    """

    def __init__(self, d: int, K: int = 2, hidden: int = 512, value_hidden: int = 512,
                 params: np.ndarray | None = None, rng: np.random.Generator | None = None):
        self.d, self.K, self.hidden, self.value_hidden = d, K, hidden, value_hidden
        width = d if K == 2 else d * K
        self.position_spec = nn.DenseNetSpec((width, hidden, hidden, d), "elu", "log_softmax")
        self.value_spec = (nn.DenseNetSpec((d * K + d, value_hidden, K), "elu") if K > 2 else None)
        n_pos = self.position_spec.n_params
        n_val = self.value_spec.n_params if self.value_spec else 0
        self._split = n_pos
        if params is None:
            params = np.zeros(n_pos + n_val)
            if rng is not None:
                params[:n_pos] = nn.init_params(self.position_spec, rng)
                if self.value_spec:
                    params[n_pos:] = nn.init_params(self.value_spec, rng)
        self.params = np.asarray(params, dtype=np.float64)
        if self.params.shape != (n_pos + n_val,):
            raise nn.ShapeError(f"editor needs {n_pos + n_val} params, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params) -> "Editor":
        return Editor(self.d, self.K, self.hidden, self.value_hidden, params)

    def position_logprobs(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        return nn.forward(self.position_spec, self.params[:self._split], network_input(x, self.K))

    def _value_input(self, x, pos):
        n = len(x)
        pos_oh = np.zeros((n, self.d))
        pos_oh[np.arange(n), pos] = 1.0
        return np.concatenate([one_hot(x, self.K), pos_oh], axis=1)

    def value_logprobs(self, x, pos) -> np.ndarray:
        """``(n, K)`` log-probabilities of the new value; the current value gets -inf."""
        x, _ = check_states(x, self.d, self.K)
        z = nn.forward(self.value_spec, self.params[self._split:], self._value_input(x, pos))
        cur = x[np.arange(len(x)), pos]
        z = z.copy()
        z[np.arange(len(x)), cur] = -np.inf
        return nn.log_softmax(z)

    def sample(self, x, rng: np.random.Generator):
        """Returns ``(x_new, log_prob, positions)`` for a batch of states."""
        x, _ = check_states(x, self.d, self.K)
        lp = self.position_logprobs(x)
        pos = _categorical(lp, rng)
        rows = np.arange(len(x))
        logp = lp[rows, pos]
        y = x.copy()
        if self.K == 2:
            y[rows, pos] ^= 1
        else:
            vlp = self.value_logprobs(x, pos)
            val = _categorical(vlp, rng)
            y[rows, pos] = val
            logp = logp + vlp[rows, val]
        return y, logp, pos

    def log_prob(self, x_prev, x_next) -> np.ndarray:
        x_prev, _ = check_states(x_prev, self.d, self.K)
        x_next, _ = check_states(x_next, self.d, self.K)
        diff = x_prev != x_next
        if not np.all(diff.sum(axis=1) == 1):
            raise ValueError("editor transitions must change exactly one coordinate")
        pos = diff.argmax(axis=1)
        return self._log_prob_at(x_prev, pos, x_next[np.arange(len(x_next)), pos])

    def _log_prob_at(self, x, pos, val):
        rows = np.arange(len(x))
        logp = self.position_logprobs(x)[rows, pos]
        if self.K > 2:
            logp = logp + self.value_logprobs(x, pos)[rows, val]
        return logp

    def grad(self, x, pos, val, weights) -> np.ndarray:
        """Sum of ``weights[i] * grad log q_A(edit i)``."""
        x, _ = check_states(x, self.d, self.K)
        w = np.asarray(weights, dtype=np.float64)
        rows = np.arange(len(x))
        out = np.zeros(self.n_params)
        _, cache = nn.forward(self.position_spec, self.params[:self._split], network_input(x, self.K),
                              keep_cache=True)
        up = np.zeros((len(x), self.d))
        up[rows, pos] = w
        out[:self._split] = nn.backward(self.position_spec, self.params[:self._split], cache, up)
        if self.K > 2:
            vp = self.params[self._split:]
            z, vcache = nn.forward(self.value_spec, vp, self._value_input(x, pos), keep_cache=True)
            cur = x[rows, pos]
            z = z.copy()
            z[rows, cur] = -np.inf
            p = np.exp(nn.log_softmax(z))
            upv = -w[:, None] * p
            upv[rows, val] += w
            out[self._split:] = nn.backward(self.value_spec, vp, vcache, upv)
        return out

    def spec_dict(self) -> dict:
        return {"d": self.d, "K": self.K, "hidden": self.hidden, "value_hidden": self.value_hidden}


class StopPolicy:
    """q_stop(x) = sigmoid(net(x)); the net's output transform is log-sigmoid."""

    def __init__(self, d: int, K: int = 2, hidden: int = 512, params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None):
        self.d, self.K, self.hidden = d, K, hidden
        width = d if K == 2 else d * K
        self.spec = nn.DenseNetSpec((width, hidden, hidden, 1), "elu", "log_sigmoid")
        if params is None:
            params = nn.init_params(self.spec, rng) if rng is not None else np.zeros(self.spec.n_params)
        self.params = np.asarray(params, dtype=np.float64)
        if self.params.shape != (self.spec.n_params,):
            raise nn.ShapeError(f"stop policy needs {self.spec.n_params} params, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params) -> "StopPolicy":
        return StopPolicy(self.d, self.K, self.hidden, params)

    def logits(self, x) -> np.ndarray:
        x, _ = check_states(x, self.d, self.K)
        return nn.forward(self.spec, self.params, network_input(x, self.K), transform=False)[:, 0]

    def log_stop(self, x) -> np.ndarray:
        return nn.log_sigmoid(self.logits(x))

    def log_continue(self, x) -> np.ndarray:
        return nn.log_sigmoid(-self.logits(x))

    def grad(self, x, stopped, weights) -> np.ndarray:
        """Sum of ``weights[i] * grad log q_stop`` (stopped) or ``log(1 - q_stop)``."""
        x, _ = check_states(x, self.d, self.K)
        w = np.asarray(weights, dtype=np.float64)
        _, cache = nn.forward(self.spec, self.params, network_input(x, self.K), transform=False,
                              keep_cache=True)
        z = cache.preacts[-1][:, 0]
        dz = np.where(stopped, expit(-z), -expit(z)) * w
        return nn.backward(self.spec, self.params, cache, dz[:, None], transform=False)

    def spec_dict(self) -> dict:
        return {"d": self.d, "K": self.K, "hidden": self.hidden}


# --------------------------------------------------------------------------
# The full sampler

@dataclass
class SamplerParams:
    """Initial distribution, editor, stop policy and the edit budget T.

    ``max_steps == 0`` gives the no-edit variant: samples come straight from
    ``q0`` and the editor and stop policy may be ``None``.
    """

    q0: object
    editor: Editor | None
    stop: StopPolicy | None
    max_steps: int = 16

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.max_steps > 0 and (self.editor is None or self.stop is None):
            raise ValueError("an editor and a stop policy are required when max_steps > 0")

    @property
    def d(self) -> int:
        return self.q0.d

    @property
    def K(self) -> int:
        return self.q0.K

    @classmethod
    def create(cls, d: int = 32, K: int = 2, q0: str = "autoregressive", max_steps: int = 16,
               hidden: int = 512, q0_hidden: int = 512, q0_embed: int = 256,
               rng: np.random.Generator | None = None) -> "SamplerParams":
        if q0 == "factorized":
            init = FactorizedInit(d, K)
        elif q0 == "autoregressive":
            init = AutoregressiveInit(d, K, q0_hidden, q0_embed, q0_hidden, rng=rng)
        else:
            raise ValueError(f"unknown q0 variant {q0!r}")
        if max_steps == 0:
            return cls(init, None, None, 0)
        return cls(init, Editor(d, K, hidden, hidden, rng=rng), StopPolicy(d, K, hidden, rng=rng), max_steps)

    def _parts(self):
        return [p for p in (self.q0, self.editor, self.stop) if p is not None]

    @property
    def n_params(self) -> int:
        return sum(p.n_params for p in self._parts())

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.params for p in self._parts()])

    def slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, part in (("q0", self.q0), ("editor", self.editor), ("stop", self.stop)):
            if part is not None:
                out[name] = slice(off, off + part.n_params)
                off += part.n_params
        return out

    def with_params(self, params: np.ndarray) -> "SamplerParams":
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise nn.ShapeError(f"sampler needs {self.n_params} params, got {params.shape}")
        s = self.slices()
        return SamplerParams(
            self.q0.with_params(params[s["q0"]].copy()),
            self.editor.with_params(params[s["editor"]].copy()) if self.editor else None,
            self.stop.with_params(params[s["stop"]].copy()) if self.stop else None,
            self.max_steps,
        )

    def save(self, path) -> None:
        blocks = [("q0", self.q0.spec_dict() | {"max_steps": self.max_steps}, self.q0.params)]
        if self.editor is not None:
            blocks.append(("editor", self.editor.spec_dict(), self.editor.params))
            blocks.append(("stop", self.stop.spec_dict(), self.stop.params))
        nn.write_blocks(path, blocks)

    @classmethod
    def load(cls, path) -> "SamplerParams":
        b = nn.read_blocks(path)
        meta, p = b["q0"]
        q0 = init_from_dict(meta, p)
        editor = stop = None
        if "editor" in b:
            em, ep = b["editor"]
            editor = Editor(em["d"], em["K"], em["hidden"], em["value_hidden"], ep)
            sm, sp = b["stop"]
            stop = StopPolicy(sm["d"], sm["K"], sm["hidden"], sp)
        return cls(q0, editor, stop, meta["max_steps"])


@dataclass
class Trajectory:
    states: np.ndarray  # (t + 1, d)
    forced_stop: bool = False

    @property
    def t(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def positions(self) -> np.ndarray:
        diff = self.states[1:] != self.states[:-1]
        return diff.argmax(axis=1)

    def validate(self, max_steps: int | None = None) -> None:
        if len(self.states) == 0:
            raise ValueError("trajectory is empty")
        changed = (self.states[1:] != self.states[:-1]).sum(axis=1)
        if np.any(changed != 1):
            raise ValueError("consecutive trajectory states must differ in exactly one coordinate")
        if max_steps is not None:
            if self.t > max_steps:
                raise ValueError(f"trajectory has {self.t} edits, more than T={max_steps}")
            if self.forced_stop != (self.t == max_steps):
                raise ValueError("forced_stop must be set exactly when t == T")

    def to_json(self) -> str:
        return json.dumps({"states": ["".join(str(int(v)) for v in s) for s in self.states],
                           "forced_stop": self.forced_stop})


def sample_trajectories(q: SamplerParams, n: int, rng: np.random.Generator):
    """Run ``n`` local searches. Returns ``(trajectories, log_probs)``."""
    x, logp = q.q0.sample(n, rng)
    hist = [x.copy()]
    t = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for _ in range(q.max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        z = q.stop.logits(x[idx])
        stop = rng.random(idx.size) < expit(z)
        logp[idx] += np.where(stop, nn.log_sigmoid(z), nn.log_sigmoid(-z))
        alive[idx[stop]] = False
        go = idx[~stop]
        if go.size:
            y, lpa, _ = q.editor.sample(x[go], rng)
            x[go] = y
            logp[go] += lpa
            t[go] += 1
        hist.append(x.copy())
    hist = np.stack(hist)
    trajs = [Trajectory(hist[: t[i] + 1, i].copy(), bool(t[i] == q.max_steps)) for i in range(n)]
    return trajs, logp


def sample_trajectory(q: SamplerParams, rng: np.random.Generator) -> tuple[Trajectory, float]:
    trajs, lp = sample_trajectories(q, 1, rng)
    return trajs[0], float(lp[0])


def sample_endpoints(q: SamplerParams, n: int, rng: np.random.Generator) -> np.ndarray:
    trajs, _ = sample_trajectories(q, n, rng)
    return np.stack([tr.final for tr in trajs])


@dataclass
class _Flat:
    """Trajectory batch flattened into per-decision rows."""

    x0: np.ndarray
    edit_x: np.ndarray
    edit_pos: np.ndarray
    edit_val: np.ndarray
    edit_owner: np.ndarray
    stop_x: np.ndarray
    stop_flag: np.ndarray  # True where the policy chose to stop
    stop_owner: np.ndarray


def _flatten(q: SamplerParams, trajs: list[Trajectory]) -> _Flat:
    d = q.d
    x0 = np.stack([tr.states[0] for tr in trajs])
    prev, nxt, eown, sx, sflag, sown = [], [], [], [], [], []
    for j, tr in enumerate(trajs):
        if tr.t > q.max_steps:
            raise ValueError(f"trajectory {j} has {tr.t} edits, more than T={q.max_steps}")
        if tr.forced_stop != (tr.t == q.max_steps):
            raise ValueError(f"trajectory {j}: forced_stop must be set exactly when t == T")
        if tr.t:
            prev.append(tr.states[:-1])
            nxt.append(tr.states[1:])
            eown.append(np.full(tr.t, j))
        n_stop = tr.t if tr.forced_stop else tr.t + 1
        if n_stop:
            sx.append(tr.states[:n_stop])
            flag = np.zeros(n_stop, dtype=bool)
            if not tr.forced_stop:
                flag[-1] = True
            sflag.append(flag)
            sown.append(np.full(n_stop, j))
    empty = np.zeros((0, d), dtype=np.int64)
    prev = np.concatenate(prev) if prev else empty
    nxt = np.concatenate(nxt) if nxt else empty
    diff = prev != nxt
    if len(prev) and np.any(diff.sum(axis=1) != 1):
        raise ValueError("consecutive trajectory states must differ in exactly one coordinate")
    pos = diff.argmax(axis=1) if len(prev) else np.zeros(0, dtype=np.int64)
    val = nxt[np.arange(len(nxt)), pos] if len(prev) else np.zeros(0, dtype=np.int64)
    return _Flat(
        x0, prev, pos, val,
        np.concatenate(eown) if eown else np.zeros(0, dtype=np.int64),
        np.concatenate(sx) if sx else empty,
        np.concatenate(sflag) if sflag else np.zeros(0, dtype=bool),
        np.concatenate(sown) if sown else np.zeros(0, dtype=np.int64),
    )


def trajectory_logprobs(q: SamplerParams, trajs: list[Trajectory]) -> np.ndarray:
    """log q(x_{0:t}) for each trajectory in the list."""
    if not trajs:
        return np.zeros(0)
    f = _flatten(q, trajs)
    n = len(trajs)
    lp = q.q0.log_prob(f.x0)
    if len(f.edit_x):
        lp = lp + np.bincount(f.edit_owner, q.editor._log_prob_at(f.edit_x, f.edit_pos, f.edit_val), n)
    if len(f.stop_x):
        z = q.stop.logits(f.stop_x)
        terms = np.where(f.stop_flag, nn.log_sigmoid(z), nn.log_sigmoid(-z))
        lp = lp + np.bincount(f.stop_owner, terms, n)
    return lp


def trajectory_logprob(q: SamplerParams, traj: Trajectory) -> float:
    return float(trajectory_logprobs(q, [traj])[0])


def trajectory_logprob_grad(q: SamplerParams, trajs: list[Trajectory], weights) -> np.ndarray:
    """Sum of ``weights[j] * grad_phi log q(trajs[j])`` as a flat sampler-parameter vector."""
    w = np.asarray(weights, dtype=np.float64)
    f = _flatten(q, trajs)
    parts = [q.q0.grad(f.x0, w)]
    if q.editor is not None:
        parts.append(q.editor.grad(f.edit_x, f.edit_pos, f.edit_val, w[f.edit_owner])
                     if len(f.edit_x) else np.zeros(q.editor.n_params))
        parts.append(q.stop.grad(f.stop_x, f.stop_flag, w[f.stop_owner])
                     if len(f.stop_x) else np.zeros(q.stop.n_params))
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# Exact marginal by enumeration

def trajectories_ending_at(q: SamplerParams, x, cap: int = MAX_ENUMERATED_TRAJECTORIES) -> list[Trajectory]:
    """Every trajectory of length <= T whose last state is ``x``."""
    x = np.asarray(x, dtype=np.int64)
    d, K, T = q.d, q.K, q.max_steps
    moves = [(p, v) for p in range(d) for v in range(K)]  # set coordinate p to v going backward
    n_moves = d * (K - 1)
    total = sum(n_moves ** t for t in range(T + 1))
    if total > cap:
        raise ValueError(f"{total} trajectories exceed the enumeration cap {cap}")
    out = []
    frontier = [[x.copy()]]
    for t in range(T + 1):
        nxt = []
        for states in frontier:
            # states are stored backward: states[0] = x
            out.append(Trajectory(np.stack(states[::-1]), t == T))
            if t == T:
                continue
            cur = states[-1]
            for p, v in moves:
                if cur[p] == v:
                    continue
                prev = cur.copy()
                prev[p] = v
                nxt.append(states + [prev])
        frontier = nxt
    return out


def marginal_logprob_exact(q: SamplerParams, x, cap: int = MAX_ENUMERATED_TRAJECTORIES) -> float:
    """log sum over all trajectories ending at ``x`` of q(trajectory)."""
    trajs = trajectories_ending_at(q, x, cap)
    return float(logsumexp(trajectory_logprobs(q, trajs)))


# --------------------------------------------------------------------------
# Proposals over trajectories ending at a target

@functools.lru_cache(maxsize=64)
def _geo_table(geo_p: float, T: int) -> np.ndarray:
    t = np.arange(T + 1)
    lw = t * np.log(geo_p)
    out = lw - logsumexp(lw)
    out.flags.writeable = False
    return out


def truncated_geometric_logpmf(geo_p: float, T: int) -> np.ndarray:
    """log P(t) for t = 0..T with P(t) proportional to geo_p**t.

    ``geo_p`` is the per-edit continuation probability; untruncated, the
    mean length is geo_p / (1 - geo_p).
    """
    if not 0.0 < geo_p < 1.0:
        raise ValueError("geo_p must lie in (0, 1)")
    return _geo_table(float(geo_p), int(T))


def inverse_proposal(x, geo_p: float, T: int, rng: np.random.Generator, K: int = 2):
    """Walk backward from ``x`` flipping distinct random coordinates.

    Returns ``(trajectory, log proposal density)``. The length is drawn from
    a geometric law truncated to ``0..min(T, d)``.
    """
    x = np.asarray(x, dtype=np.int64)
    d = x.size
    t_max = min(T, d)
    lg = truncated_geometric_logpmf(geo_p, t_max)
    t = int(rng.choice(t_max + 1, p=np.exp(lg)))
    order = rng.permutation(d)[:t]
    states = [x.copy()]
    cur = x.copy()
    for p in order:
        cur = cur.copy()
        if K == 2:
            cur[p] ^= 1
        else:
            others = [v for v in range(K) if v != cur[p]]
            cur[p] = others[rng.integers(0, K - 1)]
        states.append(cur)
    logs = lg[t] - sum(math.log(d - i) for i in range(t)) - t * math.log(K - 1)
    return Trajectory(np.stack(states[::-1]), t == T), float(logs)


def inverse_proposal_logdensity(traj: Trajectory, geo_p: float, T: int, d: int, K: int = 2) -> float:
    """Density of a given trajectory under :func:`inverse_proposal`; -inf off its support."""
    pos = traj.positions()
    if len(set(pos.tolist())) != len(pos):
        return -np.inf
    t_max = min(T, d)
    if traj.t > t_max:
        return -np.inf
    lg = truncated_geometric_logpmf(geo_p, t_max)
    return float(lg[traj.t] - sum(math.log(d - i) for i in range(traj.t)) - traj.t * math.log(K - 1))


def edit_distance_proposal(q0, x, T: int, rng: np.random.Generator):
    """Shortest edit path from an ``x0 ~ q0`` draw to ``x``.

    Returns ``(trajectory, log proposal density)``, or ``None`` when the path
    would need more than ``T`` edits.
    """
    x = np.asarray(x, dtype=np.int64)
    x0, lq = init_sample(q0, rng)
    return _edit_path(x0, lq, x, T, rng)


def _edit_path(x0, lq, x, T, rng):
    diff = np.flatnonzero(x0 != x)
    t = diff.size
    if t > T:
        return None
    order = diff[rng.permutation(t)]
    states = [x0.copy()]
    cur = x0.copy()
    for p in order:
        cur = cur.copy()
        cur[p] = x[p]
        states.append(cur)
    return Trajectory(np.stack(states), t == T), float(lq - math.lgamma(t + 1))


class AllProposalsRejected(RuntimeError):
    pass


@dataclass
class SnisResult:
    grad: np.ndarray
    n_used: int
    n_rejected: int = 0
    ess: float = 0.0
    per_target: np.ndarray | None = field(default=None, repr=False)


def snis_weights(log_q: np.ndarray, log_s: np.ndarray, groups: np.ndarray | None = None) -> np.ndarray:
    """Normalized importance weights q/s, computed in log space within each group."""
    lw = np.asarray(log_q, dtype=np.float64) - np.asarray(log_s, dtype=np.float64)
    if groups is None:
        return np.exp(lw - logsumexp(lw))
    groups = np.asarray(groups)
    out = np.empty_like(lw)
    for g in np.unique(groups):
        m = groups == g
        out[m] = np.exp(lw[m] - logsumexp(lw[m]))
    return out


def snis_grad_from_trajectories(q: SamplerParams, trajs: list[Trajectory], log_proposal) -> np.ndarray:
    """Self-normalized estimate of grad log q(x) from trajectories that all end at x.

    The weights are held constant; only grad log q(trajectory) is differentiated.
    """
    w = snis_weights(trajectory_logprobs(q, trajs), log_proposal)
    return trajectory_logprob_grad(q, trajs, w)


def _draw_proposals(q: SamplerParams, X: np.ndarray, proposal: str, N: int, rng: np.random.Generator,
                    geo_p: float, max_retries: int):
    """N proposal trajectories per target row. Returns (trajs, log_s, owner, n_rejected)."""
    trajs, logs, owner = [], [], []
    rejected = 0
    if proposal == "inverse":
        for b, x in enumerate(X):
            for _ in range(N):
                tr, ls = inverse_proposal(x, geo_p, q.max_steps, rng, q.K)
                trajs.append(tr)
                logs.append(ls)
                owner.append(b)
        return trajs, np.array(logs), np.array(owner), 0
    if proposal != "edit_distance":
        raise ValueError(f"unknown proposal {proposal!r}")
    need = np.repeat(np.arange(len(X)), N)
    for _ in range(max_retries + 1):
        if need.size == 0:
            break
        x0, lq = q.q0.sample(need.size, rng)
        again = []
        for k, b in enumerate(need):
            res = _edit_path(x0[k], lq[k], X[b], q.max_steps, rng)
            if res is None:
                rejected += 1
                again.append(b)
            else:
                trajs.append(res[0])
                logs.append(res[1])
                owner.append(b)
        need = np.array(again, dtype=np.int64)
    if need.size:
        warnings.warn(f"edit_distance proposal: dropped {need.size} draws after {max_retries} retries",
                      RuntimeWarning, stacklevel=3)
    return trajs, np.array(logs), np.array(owner, dtype=np.int64), rejected


def snis_grad_batch(q: SamplerParams, X, proposal: str = "inverse", N: int = 10,
                    rng: np.random.Generator | None = None, geo_p: float = 0.8,
                    max_retries: int = 10, per_target: bool = False) -> SnisResult:
    """Mean over target rows of the SNIS estimate of grad log q(x).

    With ``per_target=True`` the individual per-row estimates are returned
    as well (one gradient vector per row; memory grows with the batch).
    """
    X, _ = check_states(X, q.d, q.K)
    if N < 1:
        raise ValueError("N must be >= 1")
    trajs, logs, owner, rejected = _draw_proposals(q, X, proposal, N, rng, geo_p, max_retries)
    covered = np.zeros(len(X), dtype=bool)
    covered[owner] = True
    if not covered.all():
        b = int(np.flatnonzero(~covered)[0])
        raise AllProposalsRejected(
            f"all {N} {proposal} proposals were rejected for target {''.join(map(str, X[b]))}")
    for tr, b in zip(trajs, owner):
        if not np.array_equal(tr.final, X[b]):
            raise AssertionError("proposal trajectory does not end at its target")
    logq = trajectory_logprobs(q, trajs)
    w = snis_weights(logq, logs, owner)
    grad = trajectory_logprob_grad(q, trajs, w / len(X))
    ess = float(np.mean([1.0 / np.sum(w[owner == b] ** 2) for b in range(len(X))]))
    per = None
    if per_target:
        per = np.stack([trajectory_logprob_grad(q, [trajs[j] for j in np.flatnonzero(owner == b)],
                                                w[owner == b]) for b in range(len(X))])
    return SnisResult(grad, len(trajs), rejected, ess, per)


def snis_grad_log_marginal(q: SamplerParams, x, proposal: str = "inverse", N: int = 10,
                           rng: np.random.Generator | None = None, geo_p: float = 0.8,
                           max_retries: int = 10) -> np.ndarray:
    """SNIS estimate of grad_phi log q(x) for a single target."""
    x = np.asarray(x, dtype=np.int64)
    return snis_grad_batch(q, x[None], proposal, N, rng, geo_p, max_retries).grad


def write_trajectories_jsonl(path, trajs: list[Trajectory]) -> None:
    with open(path, "w") as fh:
        for tr in trajs:
            fh.write(tr.to_json() + "\n")

