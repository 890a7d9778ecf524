"""Cached end-to-end experiments shared by the acceptance and refinement tests."""
from __future__ import annotations

import functools
from pathlib import Path

import numpy as np

from epolab.config import RunConfig
from epolab.datasets import biased_split
from epolab.energy import preset
from epolab.flowmodel import VelocityModel, pretrain
from epolab.refine import RefineConfig, refine_run
from epolab.sampler import SamplerConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@functools.lru_cache(maxsize=None)
def canonical_config() -> RunConfig:
    return RunConfig.load(CONFIGS / "double_well_biased.json")


def _pretrain(cfg: RunConfig, p, left_fraction: float | None = None):
    ds = cfg.pretrain.dataset
    frac = ds.left_fraction if left_fraction is None else left_fraction
    data = biased_split(p, ds.n, frac, seed=cfg.seed, step=ds.mh_step,
                        burn_in=ds.mh_burn_in, thin=ds.mh_thin)
    model = VelocityModel.init(p.dim, hidden=tuple(cfg.model.hidden), n_time_features=cfg.model.n_time_features,
                               seed=cfg.model.init_seed)
    return pretrain(model, data, cfg.pretrain.epochs, cfg.pretrain.batch_size, cfg.pretrain.lr,
                    seed=cfg.seed).model


@functools.lru_cache(maxsize=None)
def canonical_pretrained() -> VelocityModel:
    cfg = canonical_config()
    return _pretrain(cfg, cfg.potential.build())


@functools.lru_cache(maxsize=None)
def left_only_pretrained() -> VelocityModel:
    cfg = canonical_config()
    return _pretrain(cfg, cfg.potential.build(), left_fraction=1.0)


@functools.lru_cache(maxsize=None)
def canonical_refine(sampler: str = "sde", method: str = "epo-list", seed: int | None = None,
                     iterations: int | None = None):
    cfg = canonical_config()
    rc = cfg.refine_config()
    scfg = rc.sampler if sampler == "sde" else SamplerConfig(steps=rc.sampler.steps, method=sampler)
    rc = RefineConfig(**{**rc.__dict__, "sampler": scfg, "method": method,
                         "seed": rc.seed if seed is None else seed,
                         "iterations": rc.iterations if iterations is None else iterations,
                         "checkpoint_every": 0})
    return refine_run(canonical_pretrained(), cfg.potential.build(), rc)


@functools.lru_cache(maxsize=None)
def tilted_pretrained() -> VelocityModel:
    cfg = canonical_config()
    return _pretrain(cfg, preset("double-well-tilted"))


@functools.lru_cache(maxsize=None)
def tilted_refine(method: str, seed: int, iterations: int = 1000):
    cfg = canonical_config()
    rc = cfg.refine_config()
    rc = RefineConfig(**{**rc.__dict__, "method": method, "seed": seed, "iterations": iterations,
                         "eval_every": iterations, "checkpoint_every": 0})
    return refine_run(tilted_pretrained(), preset("double-well-tilted"), rc)


def spearman(x, y) -> float:
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))
