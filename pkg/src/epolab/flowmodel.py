"""Interpolant schedules, the MLP velocity field with low-rank adapters, and flow-matching training."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc

log = logging.getLogger(__name__)

TIME_EPS = 1e-3


# --- schedules -------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Interpolant ``x_t = alpha(t) x1 + sigma(t) x0``.

    ``linear`` is the optimal-transport path (alpha=t, sigma=1-t);
    ``trig`` uses alpha=sin(pi t/2), sigma=cos(pi t/2).
    """

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "trig"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        return t if self.kind == "linear" else np.sin(0.5 * np.pi * t)

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 1.0 - t if self.kind == "linear" else np.cos(0.5 * np.pi * t)

    def dalpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.ones_like(t) if self.kind == "linear" else 0.5 * np.pi * np.cos(0.5 * np.pi * t)

    def dsigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        return -np.ones_like(t) if self.kind == "linear" else -0.5 * np.pi * np.sin(0.5 * np.pi * t)

    def denominator(self, t):
        """``alpha'(t) sigma(t) - alpha(t) sigma'(t)``, the score-transform denominator."""
        return self.dalpha(t) * self.sigma(t) - self.alpha(t) * self.dsigma(t)


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t


def path_point(x0, x1, t, sched: Schedule):
    """Point on the interpolant and its time derivative ``(x_t, dx_t/dt)``.

    ``t`` may be a scalar or one value per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
    t = _check_time(t)
    if t.ndim == 1 and x0.ndim == 2:
        t = t[:, None]
    xt = sched.alpha(t) * x1 + sched.sigma(t) * x0
    vt = sched.dalpha(t) * x1 + sched.dsigma(t) * x0
    return xt, vt


# --- velocity model --------------------------------------------------------------

def time_frequencies(n_features: int) -> np.ndarray:
    # geometric ladder pi..16pi; kept low so 50-step integrators resolve the t-dependence
    n = n_features // 2
    return np.pi * np.geomspace(1.0, 16.0, n) if n > 1 else np.array([np.pi])


@dataclass
class LowRankAdapter:
    """Additive update ``scale * up @ down`` on one affine layer."""

    down: np.ndarray  # (rank, d_in)
    up: np.ndarray    # (d_out, rank)
    scale: float = 1.0

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    @classmethod
    def create(cls, d_in: int, d_out: int, rank: int, scale: float, rng) -> "LowRankAdapter":
        down = rng.standard_normal((rank, d_in)) / math.sqrt(d_in)
        return cls(down=down, up=np.zeros((d_out, rank)), scale=scale)

    def delta(self) -> np.ndarray:
        return self.scale * (self.up @ self.down)


@dataclass
class VelocityModel:
    """MLP ``v(x, t)`` over ``[embed(x); time features; conditioning]`` with tanh hidden layers.

    Parameters live in ``base`` (``W{i}``, ``b{i}``) and, when adapters are
    attached, in ``adapters`` (``A{i}`` down-projections, ``B{i}`` up-projections).
    """

    dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    n_time_features: int = 16
    periodic: bool = False
    cond: np.ndarray = field(default_factory=lambda: np.zeros(0))
    base: dict[str, np.ndarray] = field(default_factory=dict)
    adapters: dict[str, np.ndarray] = field(default_factory=dict)
    lora_scale: float = 1.0

    @classmethod
    def init(cls, dim: int, hidden=(128, 128, 128), n_time_features: int = 16,
             periodic: bool = False, cond=None, seed: int = 0) -> "VelocityModel":
        cond = np.zeros(0) if cond is None else np.asarray(cond, dtype=np.float64)
        model = cls(dim=dim, hidden=tuple(hidden), n_time_features=n_time_features,
                    periodic=periodic, cond=cond)
        rng = np.random.default_rng(seed)
        widths = model.layer_widths()
        for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
            model.base[f"W{i}"] = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
            model.base[f"b{i}"] = np.zeros(d_out)
        return model

    # -- structure
    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def input_width(self) -> int:
        return (2 if self.periodic else 1) * self.dim + self.n_time_features + self.cond.size

    def layer_widths(self) -> list[int]:
        return [self.input_width(), *self.hidden, self.dim]

    @property
    def has_adapters(self) -> bool:
        return bool(self.adapters)

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.base, **self.adapters}

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.parameters().values()))

    # -- adapters
    def with_adapters(self, rank: int = 4, scale: float = 1.0, seed: int = 0) -> "VelocityModel":
        """Copy of this model with zero-initialized low-rank adapters on every affine layer."""
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        out = self.copy()
        out.adapters = {}
        out.lora_scale = float(scale)
        rng = np.random.default_rng(seed)
        widths = self.layer_widths()
        for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
            ad = LowRankAdapter.create(d_in, d_out, rank, scale, rng)
            out.adapters[f"A{i}"] = ad.down
            out.adapters[f"B{i}"] = ad.up
        return out

    def without_adapters(self) -> "VelocityModel":
        out = self.copy()
        out.adapters = {}
        return out

    def merged_weight(self, i: int) -> np.ndarray:
        w = self.base[f"W{i}"]
        if not self.adapters:
            return w
        return w + LowRankAdapter(self.adapters[f"A{i}"], self.adapters[f"B{i}"], self.lora_scale).delta()

    def copy(self) -> "VelocityModel":
        out = copy.copy(self)
        out.cond = self.cond.copy()
        out.base = {k: np.array(v) for k, v in self.base.items()}
        out.adapters = {k: np.array(v) for k, v in self.adapters.items()}
        return out

    def freeze(self) -> "VelocityModel":
        """Mark every array read-only; later in-place writes raise."""
        for arr in (*self.base.values(), *self.adapters.values(), self.cond):
            arr.flags.writeable = False
        return self

    # -- features
    def features(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"state must have shape (n, {self.dim}), got {x.shape}")
        t = _check_time(t)
        t = np.broadcast_to(t, (x.shape[0],)) if t.ndim == 0 else t
        if t.shape != (x.shape[0],):
            raise ValueError(f"time shape {t.shape} does not match batch of {x.shape[0]}")
        freqs = time_frequencies(self.n_time_features)
        arg = t[:, None] * freqs[None, :]
        parts = [np.sin(x), np.cos(x)] if self.periodic else [x]
        parts += [np.sin(arg), np.cos(arg)]
        if self.cond.size:
            parts.append(np.broadcast_to(self.cond, (x.shape[0], self.cond.size)))
        return np.concatenate(parts, axis=1)

    # -- evaluation
    def velocity(self, x, t, adapters_on: bool = True) -> np.ndarray:
        """Plain numpy forward pass (no graph)."""
        h = self.features(x, t)
        use = adapters_on and self.has_adapters
        for i in range(self.n_layers):
            y = h @ self.base[f"W{i}"].T + self.base[f"b{i}"]
            if use:
                y = y + self.lora_scale * ((h @ self.adapters[f"A{i}"].T) @ self.adapters[f"B{i}"].T)
            h = np.tanh(y) if i < self.n_layers - 1 else y
        return h

    __call__ = velocity

    def graph_params(self, g: dc.Graph, trainable: str = "all") -> dict[str, dc.Node]:
        """Register parameters on ``g``; ``trainable`` is one of all | base | adapters | none."""
        if trainable not in ("all", "base", "adapters", "none"):
            raise ValueError(f"unknown trainable set {trainable!r}")
        nodes = {}
        for name, arr in self.base.items():
            nodes[name] = g.leaf(arr, name=name, requires_grad=trainable in ("all", "base"))
        for name, arr in self.adapters.items():
            nodes[name] = g.leaf(arr, name=name, requires_grad=trainable in ("all", "adapters"))
        return nodes

    def forward_graph(self, g: dc.Graph, x, t, params: dict[str, dc.Node] | None = None,
                      trainable: str = "all", adapters_on: bool = True) -> dc.Node:
        """Differentiable forward pass recorded on ``g``. ``x`` and ``t`` are data, not nodes."""
        if params is None:
            params = self.graph_params(g, trainable)
        h = g.const(self.features(x, t))
        use = adapters_on and self.has_adapters
        for i in range(self.n_layers):
            y = dc.affine(h, params[f"W{i}"], params[f"b{i}"])
            if use:
                low = dc.affine(dc.affine(h, params[f"A{i}"]), params[f"B{i}"])
                y = y + dc.scale(low, self.lora_scale)
            h = dc.tanh(y) if i < self.n_layers - 1 else y
        return h

    # -- serialization
    def to_dict(self) -> dict:
        return {
            "architecture": {
                "dim": self.dim, "hidden": list(self.hidden),
                "n_time_features": self.n_time_features, "periodic": self.periodic,
                "cond": self.cond.tolist(), "lora_scale": self.lora_scale,
                "lora_rank": int(self.adapters["A0"].shape[0]) if self.adapters else 0,
            },
            "base_weights": {k: v.tolist() for k, v in self.base.items()},
            "adapter_weights": {k: v.tolist() for k, v in self.adapters.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VelocityModel":
        arch = d["architecture"]
        return cls(
            dim=int(arch["dim"]), hidden=tuple(arch["hidden"]),
            n_time_features=int(arch["n_time_features"]), periodic=bool(arch["periodic"]),
            cond=np.array(arch["cond"], dtype=np.float64).reshape(-1),
            base={k: np.array(v, dtype=np.float64) for k, v in d["base_weights"].items()},
            adapters={k: np.array(v, dtype=np.float64) for k, v in d["adapter_weights"].items()},
            lora_scale=float(arch["lora_scale"]),
        )


@dataclass
class ModelPair:
    """Trainable model (adapters on top of pretrained base) and its frozen reference."""

    opt: VelocityModel
    ref: VelocityModel

    @classmethod
    def from_pretrained(cls, pretrained: VelocityModel, rank: int = 4, scale: float = 1.0,
                        seed: int = 0) -> "ModelPair":
        ref = pretrained.without_adapters().freeze()
        opt = pretrained.without_adapters().with_adapters(rank, scale, seed)
        for arr in opt.base.values():
            arr.flags.writeable = False
        return cls(opt=opt, ref=ref)

    def update_adapters(self, new: dict[str, np.ndarray]) -> None:
        self.opt.adapters = {k: np.array(new[k]) for k in self.opt.adapters}


# --- flow-matching loss and training -----------------------------------------------

def sample_times(rng, n: int, eps: float = TIME_EPS) -> np.ndarray:
    return eps + (1.0 - 2.0 * eps) * rng.random(n)


def fm_loss(model, x1, sched: Schedule, rng=None, *, x0=None, t=None,
            eps: float = TIME_EPS, trainable: str = "base") -> dc.Node:
    """Mean over the batch of ``|v(x_t, t) - dx_t/dt|^2`` (summed over state dimensions).

    ``x0 ~ N(0, I)`` and ``t ~ U(eps, 1 - eps)`` are drawn from ``rng`` unless given.
    The returned node's graph has the ``trainable`` parameters as leaves.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.ndim != 2 or x1.shape[0] == 0:
        raise ValueError(f"fm_loss needs a non-empty (n, d) batch, got shape {x1.shape}")
    n = x1.shape[0]
    if x0 is None:
        x0 = rng.standard_normal(x1.shape)
    if t is None:
        t = sample_times(rng, n, eps)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    xt, vt = path_point(x0, x1, t, sched)
    g = dc.Graph()
    pred = model.forward_graph(g, xt, t, trainable=trainable)
    per_row = dc.sum(dc.squared_error(pred, g.const(vt)), axis=1)
    return dc.mean(per_row)


@dataclass
class PretrainResult:
    model: VelocityModel
    trace: list[float]
    steps: int
    optimizer: dc.AdamState


def pretrain(model: VelocityModel, data, epochs: int, batch_size: int = 256, lr: float = 1e-3,
             seed: int = 0, sched: Schedule | None = None, eps: float = TIME_EPS) -> PretrainResult:
    """Flow-matching training of the base weights on ``data`` (rows are x1 samples)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("pretrain needs a non-empty (n, d) dataset")
    if data.shape[1] != model.dim:
        raise ValueError(f"dataset dimension {data.shape[1]} != model dimension {model.dim}")
    sched = sched or Schedule("linear")
    rng = np.random.default_rng(seed)
    model = model.copy()
    state = dc.AdamState(lr=lr)
    trace: list[float] = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(data.shape[0])
        for start in range(0, data.shape[0], batch_size):
            batch = data[order[start:start + batch_size]]
            loss = fm_loss(model, batch, sched, rng, eps=eps)
            value = float(loss.value)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite flow-matching loss at epoch {epoch}, step {step}")
            grads = loss.graph.backward(loss)
            model.base, state = adam_step_named(model.base, grads, state)
            trace.append(value)
            step += 1
        log.debug("epoch %d: mean loss %.5f", epoch, np.mean(trace[-max(1, data.shape[0] // batch_size):]))
    return PretrainResult(model=model, trace=trace, steps=step, optimizer=state)


def adam_step_named(params, grads, state):
    """Adam restricted to gradients whose names exist in ``params``."""
    sub = {k: g for k, g in grads.items() if k in params}
    return dc.adam_step(params, sub, state)
