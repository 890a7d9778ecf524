"""Finite-difference check of every differentiable loss.

For each loss, random small configurations are drawn; the reverse-mode
gradient of a few randomly chosen parameter entries is compared with a
central difference of the forward value.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .energy import rank_by_energy
from .flowmodel import ModelPair, Schedule, VelocityModel, fm_loss
from .preference import (CouplingPair, PreferenceConfig, dpo_bt_from_scores, epo_list_loss, epo_pair_loss,
                         epo_score, flowdpo_pair_loss, listwise_pl_from_scores)

LOSSES = ("fm_loss", "dpo_bt", "listwise_pl", "flowdpo_pair", "epo_score", "epo_list", "epo_pair")
H = 1e-4
TOL = 1e-4
REL_FLOOR = 1e-6


@dataclass
class GradcheckRow:
    loss: str
    configs: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOL


def _small_model(rng, dim, adapters):
    m = VelocityModel.init(dim, hidden=(int(rng.integers(3, 7)),), n_time_features=4,
                           periodic=bool(rng.random() < 0.3), seed=int(rng.integers(1 << 30)))
    if adapters:
        m = m.with_adapters(rank=2, seed=int(rng.integers(1 << 30)))
        m.adapters = {k: (v if k.startswith("A") else 0.3 * rng.standard_normal(v.shape))
                      for k, v in m.adapters.items()}
    return m


def _pair(rng, m, dim, shared_t=False):
    y1 = rng.standard_normal((m, dim))
    y0 = rng.standard_normal((m, dim))
    t = np.full(m, rng.uniform(0.05, 0.95)) if shared_t else rng.uniform(0.05, 0.95, m)
    return CouplingPair(y1, y0, t)


def _model_pair(rng, dim):
    pre = _small_model(rng, dim, adapters=False)
    mp = ModelPair.from_pretrained(pre, rank=2, seed=int(rng.integers(1 << 30)))
    mp.opt.adapters = {k: (v if k.startswith("A") else 0.3 * rng.standard_normal(v.shape))
                       for k, v in mp.opt.adapters.items()}
    return mp


def _build(name: str, rng):
    """Return (params dict, fn(params) -> scalar node)."""
    dim = int(rng.integers(1, 3))
    sched = Schedule("linear" if rng.random() < 0.5 else "trig")
    beta = float(rng.uniform(0.2, 3.0))
    if name == "fm_loss":
        model = _small_model(rng, dim, adapters=False)
        n = int(rng.integers(2, 6))
        x1, x0, t = rng.standard_normal((n, dim)), rng.standard_normal((n, dim)), rng.uniform(0.01, 0.99, n)

        def fn(params):
            model.base = params
            return fm_loss(model, x1, sched, x0=x0, t=t)
        return dict(model.base), fn
    if name in ("dpo_bt", "listwise_pl"):
        k = 2 if name == "dpo_bt" else int(rng.integers(2, 9))
        params = {"s": rng.standard_normal(k) * 2.0}

        def fn(params):
            g = dc.Graph()
            s = g.leaf(params["s"], name="s")
            if name == "dpo_bt":
                return dpo_bt_from_scores(dc.take(s, 0), dc.take(s, 1))
            return listwise_pl_from_scores(s)
        return params, fn
    models = _model_pair(rng, dim)
    k = int(rng.integers(2, 7))
    pairs = _pair(rng, k, dim, shared_t=True)
    ranked = rank_by_energy(pairs.y1, np.arange(k, dtype=np.float64))
    cfg = PreferenceConfig(beta=beta, k=k)

    def fn(params):
        models.opt.adapters = params
        if name == "flowdpo_pair":
            return flowdpo_pair_loss(pairs[0:1], pairs[1:2], models, beta, sched)
        if name == "epo_score":
            return dc.sum(epo_score(pairs, models, beta, sched))
        if name == "epo_list":
            return epo_list_loss(ranked, models, cfg, None, sched, pairs=pairs)
        return epo_pair_loss(ranked, models, cfg, None, sched, pairs=pairs)
    return dict(models.opt.adapters), fn


def check_one(name: str, rng, n_coords: int = 4, corrupt: bool = False) -> float:
    params, fn = _build(name, rng)
    root = fn(params)
    grads = root.graph.backward(root)
    worst = 0.0
    names = sorted(params)
    for _ in range(n_coords):
        pname = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(s)) for s in params[pname].shape)
        analytic = float(grads[pname][idx]) * (1.01 if corrupt else 1.0) + (1e-3 if corrupt else 0.0)
        vals = []
        for sign in (1.0, -1.0):
            p2 = {k: v.copy() for k, v in params.items()}
            p2[pname][idx] += sign * H
            vals.append(float(fn(p2).value))
        numeric = (vals[0] - vals[1]) / (2 * H)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
        worst = max(worst, rel)
    fn(params)  # restore the original parameters
    return worst


def run_suite(configs: int = 100, seed: int = 0, losses=LOSSES, corrupt: str | None = None) -> list[GradcheckRow]:
    rows = []
    for i, name in enumerate(losses):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        worst = max(check_one(name, rng, corrupt=(name == corrupt)) for _ in range(configs))
        rows.append(GradcheckRow(name, configs, worst, time.perf_counter() - t0))
    return rows


def format_table(rows) -> str:
    lines = [f"{'loss':<14}{'configs':>8}{'max_rel_err':>14}  status"]
    for r in rows:
        lines.append(f"{r.loss:<14}{r.configs:>8}{r.max_rel_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
