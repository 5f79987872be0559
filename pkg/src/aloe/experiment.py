"""Training runs on the Gray-coded toy benchmarks.

A :class:`RunConfig` fully determines a run: every random stream is derived
from ``seed`` by a stable label, so the same config reproduces the same
parameters, metrics and samples bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import DATASETS, GrayCodec, UnknownDataset, sample_bits
from .energy import EnergyModel
from .evaluation import (EVAL_SAMPLES, EVAL_SWEEPS, heatmap_scores, mmd_hamming,
                         nll_importance_estimate, sample_energy_model)
from .rng import make_rng
from .sampler import SamplerParams
from .trainers import (AdeConfig, AdeSamplerState, AloeConfig, EnergyState, ReplayBuffer, SamplerState,
                       ade_step, aloe_step, pcd_step, strip_private)
from . import nn

METHODS = ("aloe", "pcd", "ade")
LR_DECAYS = ("none", "cosine")


def lr_factor(schedule: str, step: int, total: int) -> float:
    """Multiplier on the base learning rates for 1-based ``step``."""
    if schedule == "none":
        return 1.0
    return float(0.5 * (1.0 + np.cos(np.pi * (step - 1) / total)))


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "aloe"
    data: str = "8gaussians"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 128
    f_lr: float = 1e-3
    q_lr: float = 1e-3
    lr_decay: str = "none"
    energy_hidden: tuple = (256, 256, 256)
    # sampler
    q0: str = "factorized"
    q0_hidden: int = 512
    q0_embed: int = 256
    sampler_hidden: int = 512
    max_edits: int = 16
    proposal: str = "inverse"
    geo_p: float = 0.8
    n_snis: int = 4
    q_batch_size: int = 32
    n_power_iter: int = 1
    gibbs_sweeps: int = 1
    # pcd
    pcd_sweeps: int = 10
    restart_prob: float = 0.05
    buffer_capacity: int = 1280
    # ade
    ade_lr_ratio: float = 1.0
    ade_sampler_updates: int = 1
    baseline_decay: float = 0.99
    # logging / evaluation
    log_every: int = 10
    eval_every: int = 0
    eval_samples: int = EVAL_SAMPLES
    eval_sweeps: int = EVAL_SWEEPS
    nll_every: int = 0
    n_is: int = 10000
    track_variance: bool = False
    variance_samples: int = 32
    checkpoint_every: int = 0
    outdir: str = ""

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.data not in DATASETS:
            raise ConfigError(str(UnknownDataset(self.data)))
        if self.q0 not in ("factorized", "autoregressive"):
            raise ConfigError(f"unknown q0 variant {self.q0!r}")
        if self.lr_decay not in LR_DECAYS:
            raise ConfigError(f"unknown lr_decay {self.lr_decay!r}; choose from {', '.join(LR_DECAYS)}")
        if self.proposal not in ("inverse", "edit_distance"):
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        for name in ("steps", "batch_size", "n_snis", "q_batch_size", "gibbs_sweeps", "pcd_sweeps",
                     "eval_samples", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_edits < 0 or self.n_power_iter < 0:
            raise ConfigError("max_edits and n_power_iter must be >= 0")
        if not 0 < self.geo_p < 1:
            raise ConfigError("geo_p must lie in (0, 1)")
        if not 0 <= self.restart_prob <= 1:
            raise ConfigError("restart_prob must lie in [0, 1]")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must be at least batch_size")
        self.energy_hidden = tuple(int(h) for h in self.energy_hidden)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["energy_hidden"] = list(self.energy_hidden)
        return d

    @classmethod
    def field_types(cls) -> dict[str, type]:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}

    @classmethod
    def from_mapping(cls, items: dict) -> "RunConfig":
        """Build from string or typed values; unknown keys are rejected."""
        types = cls.field_types()
        kwargs = {}
        for key, value in items.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(value, types[key], key)
        return cls(**kwargs).validate()


def _coerce(value, typ, key):
    if not isinstance(value, str):
        return tuple(value) if typ is tuple else value
    try:
        if typ is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is tuple:
            return tuple(int(v) for v in value.replace(",", " ").split())
        return typ(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


@dataclass
class TrainResult:
    config: RunConfig
    f: EnergyModel
    q: SamplerParams | None
    records: list[dict] = field(default_factory=list)


def build_models(cfg: RunConfig) -> tuple[EnergyModel, SamplerParams | None]:
    init = make_rng(cfg.seed, "init")
    f = EnergyModel.create(32, 2, cfg.energy_hidden, rng=init)
    if cfg.method == "pcd":
        return f, None
    T = cfg.max_edits if cfg.method == "aloe" else 0
    q = SamplerParams.create(32, 2, cfg.q0, T, cfg.sampler_hidden, cfg.q0_hidden, cfg.q0_embed, rng=init)
    return f, q


def evaluate_mmd(f: EnergyModel, cfg: RunConfig, label: str = "final") -> float:
    """Evaluation protocol against held-out true samples; returns the x1e-3 value."""
    gen = sample_energy_model(f, make_rng(cfg.seed, "eval", label), cfg.eval_samples, cfg.eval_sweeps)
    truth = sample_bits(cfg.data, cfg.eval_samples, make_rng(cfg.seed, "heldout", label))
    return 1e3 * mmd_hamming(gen, truth)


def train(cfg: RunConfig, on_record: Callable[[dict], None] | None = None,
          on_timing: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``cfg.steps`` training steps and return the final models and logged records."""
    cfg.validate()
    f, q = build_models(cfg)
    codec = GrayCodec()
    data_rng = make_rng(cfg.seed, "data")
    train_rng = make_rng(cfg.seed, "train")
    fs = EnergyState.create(f, cfg.f_lr)
    records: list[dict] = []
    aloe_cfg = AloeConfig(cfg.q_batch_size, cfg.f_lr, cfg.q_lr, cfg.n_power_iter, cfg.n_snis, cfg.proposal,
                          cfg.geo_p, cfg.gibbs_sweeps, cfg.steps, cfg.seed, cfg.track_variance,
                          cfg.variance_samples)
    ade_cfg = AdeConfig(cfg.batch_size, cfg.f_lr, cfg.ade_lr_ratio, cfg.ade_sampler_updates,
                        cfg.baseline_decay, cfg.steps, cfg.seed, cfg.track_variance, cfg.variance_samples)
    if cfg.method == "aloe":
        qs = SamplerState.create(q, cfg.q_lr)
    elif cfg.method == "ade":
        ss = AdeSamplerState(q.q0, nn.AdamState.zeros(q.q0.n_params, cfg.q_lr * cfg.ade_lr_ratio))
    else:
        buffer = ReplayBuffer.uniform(cfg.buffer_capacity, 32, 2, make_rng(cfg.seed, "buffer"),
                                      cfg.restart_prob)

    def emit(rec):
        records.append(rec)
        if on_record:
            on_record(rec)

    def save_checkpoint(step):
        if cfg.outdir:
            fs.f.save(os.path.join(cfg.outdir, f"checkpoint.step{step}.energy"))

    for step in range(1, cfg.steps + 1):
        t0 = time.perf_counter()
        batch = sample_bits(cfg.data, cfg.batch_size, data_rng, codec)
        scale = lr_factor(cfg.lr_decay, step, cfg.steps)
        fs.opt.learning_rate = cfg.f_lr * scale
        if cfg.method == "aloe":
            qs.opt.learning_rate = cfg.q_lr * scale
        elif cfg.method == "ade":
            ss.opt.learning_rate = cfg.q_lr * cfg.ade_lr_ratio * scale
        if cfg.method == "aloe":
            fs, qs, m = aloe_step(fs, qs, batch, aloe_cfg, train_rng)
        elif cfg.method == "ade":
            fs, ss, m = ade_step(fs, ss, batch, ade_cfg, train_rng)
        else:
            fs, buffer, m = pcd_step(fs, buffer, batch, cfg.pcd_sweeps, train_rng)
        elapsed = time.perf_counter() - t0
        if on_timing:
            on_timing({"step": step, "seconds": elapsed})
        rec = None
        if step % cfg.log_every == 0 or step == cfg.steps:
            rec = {"step": step, "kind": "train", **strip_private(m)}
        if cfg.nll_every and (step % cfg.nll_every == 0 or step == 1):
            q0 = qs.q.q0 if cfg.method == "aloe" else ss.q0 if cfg.method == "ade" else None
            if q0 is not None:
                held = sample_bits(cfg.data, 1000, make_rng(cfg.seed, "nll-data", step))
                nll = nll_importance_estimate(fs.f, q0, held, cfg.n_is, make_rng(cfg.seed, "nll", step))
                rec = rec or {"step": step, "kind": "train"}
                rec["nll_is"] = nll
        if rec is not None:
            emit(rec)
        if cfg.eval_every and step % cfg.eval_every == 0 and step != cfg.steps:
            emit({"step": step, "kind": "eval", "mmd_x1e-3": evaluate_mmd(fs.f, cfg, f"step{step}")})
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(step)
    q_final = qs.q if cfg.method == "aloe" else (
        SamplerParams(ss.q0, None, None, 0) if cfg.method == "ade" else None)
    return TrainResult(cfg, fs.f, q_final, records)


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def heatmap_for(f: EnergyModel, resolution: int = 100):
    return heatmap_scores(f, GrayCodec(), resolution)
