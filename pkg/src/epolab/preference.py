"""Preference losses for flow-matching models.

Score-level losses (Bradley-Terry, Plackett-Luce) work on plain floats or on
graph nodes.  Flow-level losses compare per-time velocity errors of the
trainable model against the frozen reference:

    MSE_t(y0, y1; theta) = mean_dims |v_theta(y_t, t) - dy_t/dt|^2
    s(y)                 = beta * (MSE_t(y; ref) - MSE_t(y; opt))

and feed these scores to the pairwise or listwise choice model.  Gradients
reach only the adapter weights of the trainable model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .energy import RankedEnsemble
from .flowmodel import TIME_EPS, ModelPair, Schedule, path_point, sample_times


@dataclass(frozen=True)
class PreferenceConfig:
    beta: float = 1.0
    k: int = 8
    shared_t: bool = True
    eps: float = TIME_EPS

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.k < 2:
            raise ValueError(f"list size must be >= 2, got {self.k}")


@dataclass
class CouplingPair:
    """Endpoints ``y1`` (data side) and ``y0`` (prior side) with a time ``t``.

    Arrays may hold one pair (``y1`` of shape ``(d,)``, scalar ``t``) or a
    batch of pairs (``(m, d)`` and ``(m,)``).
    """

    y1: np.ndarray
    y0: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.y1 = np.asarray(self.y1, dtype=np.float64)
        self.y0 = np.asarray(self.y0, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.y1.shape != self.y0.shape:
            raise ValueError(f"coupling endpoints differ in shape: {self.y1.shape} vs {self.y0.shape}")

    def batch(self):
        y1 = np.atleast_2d(self.y1)
        y0 = np.atleast_2d(self.y0)
        t = np.broadcast_to(self.t, (y1.shape[0],))
        return y0, y1, t

    def __getitem__(self, idx) -> "CouplingPair":
        y0, y1, t = self.batch()
        return CouplingPair(y1[idx], y0[idx], t[idx])

    def __len__(self) -> int:
        return self.batch()[1].shape[0]


def draw_couplings(y1, cfg: PreferenceConfig, rng) -> CouplingPair:
    """Fresh prior endpoints and times for the rows of ``y1``.

    Draw order is fixed (times first, then prior draws) so every loss built
    on the same generator state sees the same couplings.
    """
    y1 = np.atleast_2d(np.asarray(y1, dtype=np.float64))
    m = y1.shape[0]
    t = np.full(m, sample_times(rng, 1, cfg.eps)[0]) if cfg.shared_t else sample_times(rng, m, cfg.eps)
    y0 = rng.standard_normal(y1.shape)
    return CouplingPair(y1, y0, t)


# --- per-time errors ----------------------------------------------------------------

def mse_values(model, pair: CouplingPair, sched: Schedule) -> np.ndarray:
    """Per-pair ``MSE_t`` in plain numpy (no graph)."""
    y0, y1, t = pair.batch()
    yt, target = path_point(y0, y1, t, sched)
    return np.mean((model.velocity(yt, t) - target) ** 2, axis=1)


def mse_t(model, pair: CouplingPair, sched: Schedule) -> float:
    """``MSE_t`` of a single coupling pair."""
    vals = mse_values(model, pair, sched)
    if vals.size != 1:
        raise ValueError("mse_t takes a single pair; use mse_values for batches")
    return float(vals[0])


def _mse_graph(g: dc.Graph, model, params, pair: CouplingPair, sched: Schedule) -> dc.Node:
    y0, y1, t = pair.batch()
    yt, target = path_point(y0, y1, t, sched)
    pred = model.forward_graph(g, yt, t, params=params)
    return dc.mean(dc.squared_error(pred, g.const(target)), axis=1)


def _opt_params(g: dc.Graph, models: ModelPair):
    return models.opt.graph_params(g, trainable="adapters")


def epo_scores_graph(g: dc.Graph, params, models: ModelPair, pair: CouplingPair, beta: float,
                     sched: Schedule) -> dc.Node:
    ref = mse_values(models.ref, pair, sched)
    opt = _mse_graph(g, models.opt, params, pair, sched)
    return dc.scale(dc.sub(g.const(ref), opt), beta)


def epo_score(pair: CouplingPair, models: ModelPair, beta: float, sched: Schedule | None = None) -> dc.Node:
    """``beta * (MSE_t(ref) - MSE_t(opt))`` per pair, as a node of shape ``(m,)``."""
    sched = sched or Schedule("linear")
    g = dc.Graph()
    return epo_scores_graph(g, _opt_params(g, models), models, pair, beta, sched)


# --- score-level choice models ----------------------------------------------------------

def _to_nodes(scores):
    if isinstance(scores, dc.Node):
        if scores.value.ndim == 0:
            return [scores], True
        return [dc.take(scores, k) for k in range(scores.shape[0])], True
    scores = list(scores)
    if scores and isinstance(scores[0], dc.Node):
        return scores, True
    g = dc.Graph()
    return [g.const(float(s)) for s in scores], False


def dpo_bt_from_scores(s_w, s_l):
    """``-log sigmoid(s_w - s_l)``. Nodes in, node out; floats in, float out."""
    if isinstance(s_w, dc.Node) or isinstance(s_l, dc.Node):
        return dc.neg(dc.log_sigmoid(dc.sub(s_w, s_l)))
    g = dc.Graph()
    return float(dc.neg(dc.log_sigmoid(g.const(float(s_w) - float(s_l)))).value)


def listwise_pl_from_scores(scores):
    """Plackett-Luce negative log-likelihood of the given order (best first).

    ``-sum_k [s_k - logsumexp(s_k, ..., s_K)]``
    """
    nodes, graphed = _to_nodes(scores)
    if not nodes:
        raise ValueError("listwise loss of an empty list")
    terms = [dc.sub(nodes[k], dc.logsumexp(nodes[k:])) for k in range(len(nodes))]
    total = terms[0]
    for term in terms[1:]:
        total = dc.add(total, term)
    loss = dc.neg(total)
    return loss if graphed else float(loss.value)


# --- flow-level losses -----------------------------------------------------------------------

def _flowdpo_from_mse(g, ref_w, opt_w, ref_l, opt_l, beta):
    # beta * [(ref_w - opt_w) - (ref_l - opt_l)]
    margin = dc.add(dc.sub(dc.sub(g.const(ref_w), opt_w), g.const(ref_l)), opt_l)
    return dc.neg(dc.log_sigmoid(dc.scale(margin, beta)))


def flowdpo_pair_loss(pair_w: CouplingPair, pair_l: CouplingPair, models: ModelPair, beta: float,
                      sched: Schedule | None = None) -> dc.Node:
    """Pairwise flow DPO loss on one winner/loser coupling."""
    sched = sched or Schedule("linear")
    g = dc.Graph()
    params = _opt_params(g, models)
    return _flowdpo_graph(g, params, pair_w, pair_l, models, beta, sched)


def _flowdpo_graph(g, params, pair_w, pair_l, models, beta, sched):
    ref_w = mse_values(models.ref, pair_w, sched)
    ref_l = mse_values(models.ref, pair_l, sched)
    opt_w = _mse_graph(g, models.opt, params, pair_w, sched)
    opt_l = _mse_graph(g, models.opt, params, pair_l, sched)
    if ref_w.size != 1 or ref_l.size != 1:
        raise ValueError("flowdpo_pair_loss takes single pairs")
    return dc.sum(_flowdpo_from_mse(g, ref_w, opt_w, ref_l, opt_l, beta))


def _check_list(ranked: RankedEnsemble):
    if len(ranked) < 2:
        raise ValueError(f"preference lists need K >= 2 samples, got {len(ranked)}")


def epo_list_loss(ranked: RankedEnsemble, models: ModelPair, cfg: PreferenceConfig, rng,
                  sched: Schedule | None = None, pairs: CouplingPair | None = None) -> dc.Node:
    """Listwise energy-preference bound: Plackett-Luce over EPO scores in energy order."""
    _check_list(ranked)
    sched = sched or Schedule("linear")
    pairs = pairs if pairs is not None else draw_couplings(ranked.ranked_samples(), cfg, rng)
    g = dc.Graph()
    scores = epo_scores_graph(g, _opt_params(g, models), models, pairs, cfg.beta, sched)
    return listwise_pl_from_scores(scores)


def epo_pair_loss(ranked: RankedEnsemble, models: ModelPair, cfg: PreferenceConfig, rng,
                  sched: Schedule | None = None, pairs: CouplingPair | None = None) -> dc.Node:
    """Mean pairwise flow DPO loss over the K-1 energy-adjacent pairs."""
    _check_list(ranked)
    sched = sched or Schedule("linear")
    pairs = pairs if pairs is not None else draw_couplings(ranked.ranked_samples(), cfg, rng)
    g = dc.Graph()
    params = _opt_params(g, models)
    ref = mse_values(models.ref, pairs, sched)
    opt = _mse_graph(g, models.opt, params, pairs, sched)
    losses = []
    for k in range(len(ranked) - 1):
        losses.append(_flowdpo_from_mse(g, ref[k], dc.take(opt, k), ref[k + 1], dc.take(opt, k + 1), cfg.beta))
    total = losses[0]
    for term in losses[1:]:
        total = dc.add(total, term)
    return dc.scale(total, 1.0 / len(losses))


def flowdpo_list_loss(ranked: RankedEnsemble, models: ModelPair, cfg: PreferenceConfig, rng,
                      sched: Schedule | None = None, pairs: CouplingPair | None = None) -> dc.Node:
    """Pairwise flow DPO on (best, worst) of a ranked list, using the list's coupling draws."""
    _check_list(ranked)
    sched = sched or Schedule("linear")
    pairs = pairs if pairs is not None else draw_couplings(ranked.ranked_samples(), cfg, rng)
    g = dc.Graph()
    params = _opt_params(g, models)
    return _flowdpo_graph(g, params, pairs[0:1], pairs[len(ranked) - 1:len(ranked)], models, cfg.beta, sched)


LIST_LOSSES = {
    "epo-list": epo_list_loss,
    "epo-pair": epo_pair_loss,
    "flowdpo": flowdpo_list_loss,
}
