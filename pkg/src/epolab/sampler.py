"""ODE and SDE integration of a learned flow.

The SDE integrated forward in time is

    dx = v(x, t) dt + 1/2 w s(x, t) dt + sqrt(w) dW,

where ``s`` is the score recovered from the velocity.  For exact velocities
it has the same time marginals as the probability-flow ODE ``dx = v dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowmodel import TIME_EPS, Schedule

METHODS = ("ode-euler", "ode-heun", "sde")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    method: str = "sde"
    score_norm: float = 0.01
    eps: float = TIME_EPS
    seed: int = 0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")
        if self.method not in METHODS:
            raise ValueError(f"unknown sampler method {self.method!r}; choose from {METHODS}")
        if not self.score_norm >= 0.0:
            raise ValueError(f"score norm must be >= 0, got {self.score_norm}")
        if not 0.0 < self.eps < 0.1:
            raise ValueError(f"time clamp must lie in (0, 0.1), got {self.eps}")

    def time_grid(self) -> np.ndarray:
        return np.linspace(self.eps, 1.0 - self.eps, self.steps + 1)


def score_from_velocity(v, x, t, sched: Schedule):
    """Score ``grad log p_t(x)`` implied by velocity ``v`` at ``(x, t)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t}")
    sigma = sched.sigma(t)
    den = sched.denominator(t)
    if np.any(np.abs(den) < 1e-12) or np.any(sigma < 1e-12):
        raise ValueError(f"score transform is singular at t={t}")
    if t.ndim == 1:
        sigma, den, alpha, dalpha = sigma[:, None], den[:, None], sched.alpha(t)[:, None], sched.dalpha(t)[:, None]
    else:
        alpha, dalpha = sched.alpha(t), sched.dalpha(t)
    return (alpha * v - dalpha * x) / (sigma * den)


class GaussianTargetVelocity:
    """Exact marginal velocity and score for an isotropic Gaussian target ``N(mean, std^2 I)``.

    With ``std=0`` this is the point-mass field. Used as an analytic oracle.
    """

    def __init__(self, mean, std: float = 1.0, sched: Schedule | None = None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.std = float(std)
        self.sched = sched or Schedule("linear")
        self.dim = self.mean.size

    def _moments(self, t):
        s = self.sched
        a, sg, da, dsg = s.alpha(t), s.sigma(t), s.dalpha(t), s.dsigma(t)
        var = a * a * self.std ** 2 + sg * sg
        cov = da * a * self.std ** 2 + dsg * sg
        return a, da, var, cov

    def __call__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        a, da, var, cov = self._moments(np.asarray(t, dtype=np.float64))
        return da * self.mean + (cov / var) * (x - a * self.mean)

    velocity = __call__

    def score(self, x, t):
        a, _, var, _ = self._moments(np.asarray(t, dtype=np.float64))
        return -(np.asarray(x) - a * self.mean) / var

    def log_density(self, x, t):
        a, _, var, _ = self._moments(np.asarray(t, dtype=np.float64))
        x = np.asarray(x, dtype=np.float64)
        return np.sum(-0.5 * (x - a * self.mean) ** 2 / var - 0.5 * np.log(2 * np.pi * var), axis=-1)


def _velocity(model, x, t):
    return model(x, t)


def _check_finite(x, i, extra=""):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite sampler state at step {i}{extra}")


def ode_sample(model, x0, cfg: SamplerConfig, sched: Schedule | None = None) -> np.ndarray:
    """Integrate ``dx = v dt`` from ``t=eps`` to ``1-eps`` in ``cfg.steps`` uniform steps."""
    if cfg.method == "sde":
        raise ValueError("ode_sample needs an ODE method (ode-euler or ode-heun)")
    x = np.array(x0, dtype=np.float64)
    ts = cfg.time_grid()
    for i in range(cfg.steps):
        t, t_next = ts[i], ts[i + 1]
        h = t_next - t
        v = _velocity(model, x, t)
        if cfg.method == "ode-euler":
            x = x + h * v
        else:
            x_pred = x + h * v
            v_next = _velocity(model, x_pred, t_next)
            x = x + 0.5 * h * (v + v_next)
        _check_finite(x, i)
    return x


def sde_sample(model, x0, cfg: SamplerConfig, sched: Schedule | None = None, rng=None,
               noise=None) -> np.ndarray:
    """Euler-Maruyama on the marginal-preserving SDE; the last step adds no noise.

    Noise comes from ``noise`` (shape ``(n, steps - 1, d)``) when given, else from ``rng``.
    """
    if cfg.method != "sde":
        raise ValueError("sde_sample needs method 'sde'")
    sched = sched or Schedule("linear")
    x = np.array(x0, dtype=np.float64)
    w = cfg.score_norm
    ts = cfg.time_grid()
    for i in range(cfg.steps):
        t, t_next = ts[i], ts[i + 1]
        h = t_next - t
        v = _velocity(model, x, t)
        if w > 0.0:
            drift = v + 0.5 * w * score_from_velocity(v, x, t, sched)
        else:
            drift = v
        x = x + h * drift
        if w > 0.0 and i < cfg.steps - 1:
            xi = noise[:, i, :] if noise is not None else rng.standard_normal(x.shape)
            x = x + math.sqrt(w * h) * xi
        _check_finite(x, i, f" (score norm {w})")
    return x


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for ensemble member ``index``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _resolve_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    return int(rng)


def draw_ensemble_noise(seed: int, n: int, dim: int, cfg: SamplerConfig):
    """Prior draws and per-step noise, one independent stream per ensemble member."""
    x0 = np.empty((n, dim))
    noise = np.empty((n, cfg.steps - 1, dim)) if cfg.method == "sde" and cfg.score_norm > 0 else None
    for i in range(n):
        g = sample_stream(seed, i)
        x0[i] = g.standard_normal(dim)
        if noise is not None:
            noise[i] = g.standard_normal((cfg.steps - 1, dim))
    return x0, noise


def generate_ensemble(model, n: int, cfg: SamplerConfig, sched: Schedule | None = None,
                      rng=None) -> np.ndarray:
    """``n`` samples pushed from ``N(0, I)`` through the configured sampler.

    ``rng`` may be a Generator (one seed is drawn from it) or an integer seed;
    it defaults to ``cfg.seed``. Member ``i`` always uses the stream ``(seed, i)``,
    so an ensemble's first ``m`` members do not depend on ``n``.
    """
    if n < 0:
        raise ValueError("ensemble size must be >= 0")
    seed = _resolve_seed(cfg.seed if rng is None else rng)
    dim = model.dim
    if n == 0:
        return np.zeros((0, dim))
    x0, noise = draw_ensemble_noise(seed, n, dim, cfg)
    if cfg.method == "sde":
        out = sde_sample(model, x0, cfg, sched, noise=noise)
    else:
        out = ode_sample(model, x0, cfg, sched)
    if getattr(model, "periodic", False):
        out = out - 2.0 * np.pi * np.floor((out + np.pi) / (2.0 * np.pi))
    return out
