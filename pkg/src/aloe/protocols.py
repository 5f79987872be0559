"""Benchmark protocols on the Gray-coded toy densities.

Each protocol is a plain function of its settings and a seed, returning a
JSON-serializable dict, so results can be cached and compared across runs.
"""

from __future__ import annotations

import time

import numpy as np

from .experiment import RunConfig, evaluate_mmd, train

TABLE_DATASETS = ("8gaussians", "circles", "moons", "2spirals")
ABLATION_DATASETS = ("8gaussians", "moons")
SEEDS = (0, 1, 2)

# Shared training recipe for the table and ablation runs.
TABLE_SETTINGS = dict(method="aloe", q0="factorized", steps=3500, batch_size=128, f_lr=1e-4, q_lr=1e-3,
                      lr_decay="cosine", gibbs_sweeps=5, log_every=100)


def table_config(data: str, seed: int, edits: bool = True, **overrides) -> RunConfig:
    """ALOE with a factorized q0; ``edits=False`` drops the editor (q is q0 alone)."""
    settings = {**TABLE_SETTINGS, "data": data, "seed": seed, **overrides}
    if not edits:
        settings["max_edits"] = 0
    return RunConfig.from_mapping(settings)


def table_entry(cfg: RunConfig) -> dict:
    """Train one model and score it with the fixed evaluation protocol."""
    t0 = time.perf_counter()
    res = train(cfg)
    seconds = time.perf_counter() - t0
    return {"data": cfg.data, "seed": cfg.seed, "max_edits": cfg.max_edits,
            "mmd_x1e-3": evaluate_mmd(res.f, cfg), "train_seconds": seconds}


def moving_average(values, width: int = 5) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < width:
        raise ValueError(f"need at least {width} values, got {len(v)}")
    return np.convolve(v, np.ones(width) / width, mode="valid")


VARIANCE_SETTINGS = dict(data="pinwheel", q0="factorized", steps=2000, batch_size=128, q_batch_size=128,
                         f_lr=1e-4, q_lr=1e-3, track_variance=True, variance_samples=32, log_every=20,
                         nll_every=100, n_is=10000)


def variance_study(seed: int = 0, **overrides) -> dict:
    """Sampler-gradient variance of ALOE and ADE from the same initial energy model.

    Both runs share the seed, hence the initial f, q0 and the data stream,
    and draw sampler batches of the same size. Returns the per-record
    variance traces and ALOE's importance-sampled NLL trace.
    """
    out: dict = {"seed": seed}
    for method in ("aloe", "ade"):
        cfg = RunConfig.from_mapping({**VARIANCE_SETTINGS, **overrides, "method": method, "seed": seed})
        res = train(cfg)
        out[f"{method}_variance"] = [r["q_grad_variance"] for r in res.records if "q_grad_variance" in r]
        out[f"{method}_nll"] = [r["nll_is"] for r in res.records if "nll_is" in r]
    return out
