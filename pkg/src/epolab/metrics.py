"""Distributional metrics: JSD, Wasserstein-2, free-energy surfaces, mode masses, TICA."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .kernels import jacobi_eigh

log = logging.getLogger(__name__)

SMOOTHING = 1e-12
LOG_BASE = "e"


@dataclass(frozen=True)
class HistogramSpec:
    bounds: tuple
    bins: tuple
    periodic: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        per = tuple(bool(p) for p in self.periodic) or (False,) * len(self.bounds)
        object.__setattr__(self, "periodic", per)
        if not (len(self.bounds) == len(self.bins) == len(self.periodic)):
            raise ValueError("bounds, bins and periodic flags need one entry per dimension")
        for (lo, hi), n in zip(self.bounds, self.bins):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"invalid histogram bounds ({lo}, {hi})")
            if n < 2:
                raise ValueError("need at least 2 bins per dimension")

    @classmethod
    def uniform(cls, dim: int, lo: float, hi: float, bins: int, periodic: bool = False) -> "HistogramSpec":
        return cls(((lo, hi),) * dim, (bins,) * dim, (periodic,) * dim)

    @classmethod
    def for_potential(cls, p, bins: int = 100) -> "HistogramSpec":
        return cls(p.bounds, (bins,) * p.dim, (p.periodic,) * p.dim)

    @property
    def dim(self) -> int:
        return len(self.bins)

    def edges(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(self.bounds, self.bins)]

    def to_dict(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "bins": list(self.bins),
                "periodic": list(self.periodic)}

    def counts(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        x = x.reshape(-1, 1) if x.ndim == 1 else x
        if x.shape[1] != self.dim:
            raise ValueError(f"samples of dimension {x.shape[1]} vs histogram of dimension {self.dim}")
        x = x.copy()
        outside = 0
        for k, ((lo, hi), per) in enumerate(zip(self.bounds, self.periodic)):
            if per:
                x[:, k] = lo + np.mod(x[:, k] - lo, hi - lo)
            else:
                mask = (x[:, k] < lo) | (x[:, k] > hi)
                outside += int(mask.sum())
                x[:, k] = np.clip(x[:, k], lo, hi)
        if outside:
            log.warning("%d sample coordinates outside histogram bounds were counted in edge bins", outside)
        counts, _ = np.histogramdd(x, bins=self.edges())
        return counts


def _normalize(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64) + SMOOTHING
    return c / c.sum()


def jsd_probs(p, q) -> float:
    """Jensen-Shannon divergence (natural log) between two histograms, smoothed per bin."""
    p = _normalize(p).ravel()
    q = _normalize(q).ravel()
    if p.shape != q.shape:
        raise ValueError(f"histogram shapes differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    return float(0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m)))


def jsd_hist(a, b, spec: HistogramSpec) -> float:
    """JSD between the histograms of two sample sets, in ``[0, ln 2]``."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("jsd_hist needs non-empty sample sets")
    return jsd_probs(spec.counts(a), spec.counts(b))


def jsd_to_reference(samples, reference_probs, spec: HistogramSpec) -> float:
    """JSD between a sample histogram and fixed bin probabilities (e.g. the Boltzmann oracle)."""
    if len(samples) == 0:
        raise ValueError("jsd_to_reference needs samples")
    return jsd_probs(spec.counts(samples), reference_probs)


# --- Wasserstein-2 -------------------------------------------------------------------

def w2_1d(a, b) -> float:
    """1-D Wasserstein-2 distance via the quantile coupling.

    Unequal sizes are compared at the smaller size's quantile levels, with the
    larger sample's quantile function linearly interpolated.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("w2_1d needs non-empty samples")
    if a.size != b.size:
        small, large = (a, b) if a.size < b.size else (b, a)
        levels = (np.arange(small.size) + 0.5) / small.size
        grid = (np.arange(large.size) + 0.5) / large.size
        a, b = small, np.interp(levels, grid, large)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _sym_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{what} must be a symmetric matrix")
    w, v = jacobi_eigh(0.5 * (m + m.T))
    if w.min() < -1e-10:
        raise ValueError(f"{what} is not positive semidefinite (eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def w2_gauss(mu1, cov1, mu2, cov2) -> float:
    """Closed-form W2 distance between two Gaussians."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    root2 = _sym_sqrt(cov2, "covariance 2")
    _sym_sqrt(cov1, "covariance 1")
    cross = _sym_sqrt(root2 @ cov1 @ root2, "covariance product")
    val = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return math.sqrt(max(val, 0.0))


def rmwd(x, y) -> float:
    """Root-mean W2 between per-site Gaussian fits of two ensembles of shape (n, sites, dim)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3 or x.shape[1:] != y.shape[1:]:
        raise ValueError(f"ensembles must be (n, sites, dim) with matching sites: {x.shape} vs {y.shape}")
    total = 0.0
    for i in range(x.shape[1]):
        cx = np.atleast_2d(np.cov(x[:, i, :], rowvar=False))
        cy = np.atleast_2d(np.cov(y[:, i, :], rowvar=False))
        total += w2_gauss(x[:, i, :].mean(0), cx, y[:, i, :].mean(0), cy) ** 2
    return math.sqrt(total / x.shape[1])


# --- free energy and mode masses -----------------------------------------------------

@dataclass
class FreeEnergySurface:
    edges: list[np.ndarray]
    values: np.ndarray
    cap: float
    kT: float

    def centers(self) -> list[np.ndarray]:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def metadata(self) -> dict:
        return {"kT": self.kT, "empty_bin_cap": self.cap, "shift": "min=0"}


def fes_grid(samples, spec: HistogramSpec, kT: float = 1.0) -> FreeEnergySurface:
    """``-kT log`` of the normalized histogram density, shifted to a zero minimum.

    Empty bins get ``max finite value + 2 kT``.
    """
    if spec.dim not in (1, 2):
        raise ValueError("fes_grid supports 1 or 2 dimensions")
    counts = spec.counts(samples)
    if counts.sum() == 0:
        raise ValueError("all histogram bins are empty")
    edges = spec.edges()
    vol = np.ones_like(counts)
    for k, e in enumerate(edges):
        shape = [1] * counts.ndim
        shape[k] = e.size - 1
        vol = vol * np.diff(e).reshape(shape)
    dens = counts / (counts.sum() * vol)
    with np.errstate(divide="ignore"):
        f = -kT * np.log(dens)
    finite = np.isfinite(f)
    f = f - f[finite].min()
    cap = float(f[finite].max() + 2.0 * kT)
    f[~finite] = cap
    return FreeEnergySurface(edges=edges, values=f, cap=cap, kT=kT)


def mode_masses(samples, boundaries, axis: int = 0) -> np.ndarray:
    """Fraction of samples in each cell of the partition cut at ``boundaries`` along ``axis``."""
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    if x.shape[0] == 0:
        raise ValueError("mode_masses needs samples")
    cuts = np.sort(np.asarray(boundaries, dtype=np.float64))
    cell = np.searchsorted(cuts, x[:, axis], side="right")
    counts = np.bincount(cell, minlength=cuts.size + 1)
    w = [c / x.shape[0] for c in counts.tolist()]
    w[-1] = _closing_weight(w[:-1])
    return np.array(w)


def _closing_weight(head: list[float]) -> float:
    """Last weight chosen so that ``sum(w) == 1.0`` exactly for the returned weights.

    Different summation orders round differently, so no single value can
    always satisfy every order. The left-to-right sum (``sum``, and ``np.sum``
    for short arrays) is made exact. The correctly rounded ``math.fsum`` is
    also made exact when some float near ``1 - fsum(head)`` allows it, and is
    otherwise within one ulp of 1.
    """
    base = 1.0 - math.fsum(head)
    candidates = [base]
    up = down = base
    for _ in range(4):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        candidates += [up, down]
    seq_exact = [c for c in candidates if sum(head + [c]) == 1.0 and float(np.sum(head + [c])) == 1.0]
    for last in seq_exact:
        if math.fsum(head + [last]) == 1.0:
            return last
    if seq_exact:
        return seq_exact[0]
    return 1.0 - sum(head)


# --- TICA ----------------------------------------------------------------------------------

@dataclass
class TicaModel:
    lag: int
    mean: np.ndarray
    whitening: np.ndarray      # C0^{-1/2}
    unwhitening: np.ndarray    # C0^{1/2}
    components: np.ndarray     # eigenvectors in whitened space, columns
    eigenvalues: np.ndarray    # descending

    @property
    def projection(self) -> np.ndarray:
        """Columns map centered data to TICs (unit variance under C0)."""
        return self.whitening @ self.components

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.projection

    def inverse_transform(self, y) -> np.ndarray:
        """Centered data from TIC coordinates; exact when all components are kept."""
        return np.asarray(y) @ self.components.T @ self.unwhitening

    def directions(self) -> np.ndarray:
        p = self.projection
        return p / np.linalg.norm(p, axis=0, keepdims=True)


def tica(trajectory, lag: int, n_components: int | None = None):
    """Time-lagged independent components of a time-ordered trajectory.

    Returns ``(model, projected_trajectory)``.
    """
    x = np.asarray(trajectory, dtype=np.float64)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    n, d = x.shape
    if lag < 1:
        raise ValueError("lag must be a positive integer")
    if n <= lag + 2:
        raise ValueError(f"trajectory of length {n} too short for lag {lag}")
    k = d if n_components is None else int(n_components)
    if not 1 <= k <= d:
        raise ValueError(f"n_components must lie in [1, {d}]")
    mean = x.mean(axis=0)
    xc = x - mean
    a, b = xc[:-lag], xc[lag:]
    m = n - lag
    c0 = (a.T @ a + b.T @ b) / (2.0 * m)
    ct = (a.T @ b + b.T @ a) / (2.0 * m)
    lam, u = jacobi_eigh(c0)
    if lam.min() < 1e-10 * lam.max():
        raise ValueError(
            f"instantaneous covariance is rank deficient (eigenvalue {lam.min():.3e}); "
            "drop constant coordinates or add a small ridge to the data")
    white = (u / np.sqrt(lam)) @ u.T
    unwhite = (u * np.sqrt(lam)) @ u.T
    mu, v = jacobi_eigh(white @ ct @ white)
    order = np.argsort(-mu, kind="stable")
    mu, v = mu[order], v[:, order]
    model = TicaModel(lag=lag, mean=mean, whitening=white, unwhitening=unwhite,
                      components=v[:, :k], eigenvalues=mu[:k])
    return model, model.transform(x)
