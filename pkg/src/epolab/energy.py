"""Analytic energy landscapes, Boltzmann ground truth and energy ranking."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

KINDS = ("double-well-1d", "gaussian-mixture", "mueller-brown-2d", "periodic-torsion")

# classic Mueller-Brown constants: A, a, b, c, x0, y0 per term
MUELLER_BROWN_TERMS = (
    (-200.0, -1.0, 0.0, -10.0, 1.0, 0.0),
    (-100.0, -1.0, 0.0, -10.0, 0.0, 0.5),
    (-170.0, -6.5, 11.0, -6.5, -0.5, 1.5),
    (15.0, 0.7, 0.6, 0.7, -1.0, 1.0),
)


def wrap_angle(x):
    """Map angles to ``[-pi, pi)``."""
    return x - 2.0 * np.pi * np.floor((x + np.pi) / (2.0 * np.pi))


@dataclass(frozen=True)
class Potential:
    """Analytic energy ``E(x)`` at temperature ``kT`` (reduced units).

    Use the constructors (:meth:`double_well`, :meth:`gaussian_mixture`,
    :meth:`mueller_brown`, :meth:`periodic_torsion`) or :func:`preset`.
    """

    kind: str
    params: dict = field(default_factory=dict)
    kT: float = 1.0
    bounds: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.kT > 0:
            raise ValueError("kT must be positive")

    # -- constructors
    @classmethod
    def double_well(cls, a: float = 2.0, b: float = 0.0, kT: float = 1.0, bounds=((-3.0, 3.0),),
                    name: str = "") -> "Potential":
        return cls("double-well-1d", {"a": float(a), "b": float(b)}, kT, tuple(map(tuple, bounds)), name)

    @classmethod
    def gaussian_mixture(cls, weights, means, covs, kT: float = 1.0, bounds=None,
                         name: str = "") -> "Potential":
        w = np.asarray(weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if w.ndim != 1 or mu.shape[0] != w.size:
            raise ValueError("one mean per mixture weight required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        d = mu.shape[1]
        cov = np.asarray(covs, dtype=np.float64).reshape(w.size, d, d)
        if bounds is None:
            spread = 8.0 * np.sqrt(np.max(np.diagonal(cov, axis1=1, axis2=2), axis=0))
            bounds = tuple((float(lo), float(hi)) for lo, hi in zip(mu.min(0) - spread, mu.max(0) + spread))
        params = {"weights": w.tolist(), "means": mu.tolist(), "covs": cov.tolist()}
        return cls("gaussian-mixture", params, kT, tuple(map(tuple, bounds)), name)

    @classmethod
    def mueller_brown(cls, terms=MUELLER_BROWN_TERMS, kT: float = 10.0,
                      bounds=((-1.8, 1.2), (-0.6, 2.2)), name: str = "") -> "Potential":
        return cls("mueller-brown-2d", {"terms": [list(map(float, t)) for t in terms]}, kT,
                   tuple(map(tuple, bounds)), name)

    @classmethod
    def periodic_torsion(cls, k, delta=None, kT: float = 1.0, name: str = "") -> "Potential":
        k = np.atleast_2d(np.asarray(k, dtype=np.float64))
        delta = np.zeros_like(k) if delta is None else np.atleast_2d(np.asarray(delta, dtype=np.float64))
        if delta.shape != k.shape:
            raise ValueError("torsion phases must match the coefficient table")
        bounds = tuple((-math.pi, math.pi) for _ in range(k.shape[0]))
        return cls("periodic-torsion", {"k": k.tolist(), "delta": delta.tolist()}, kT, bounds, name)

    # -- structure
    @property
    def dim(self) -> int:
        if self.kind == "double-well-1d":
            return 1
        if self.kind == "mueller-brown-2d":
            return 2
        if self.kind == "gaussian-mixture":
            return len(self.params["means"][0])
        return len(self.params["k"])

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic-torsion"

    def default_start(self) -> np.ndarray:
        if self.kind == "gaussian-mixture":
            return np.array(self.params["means"][int(np.argmax(self.params["weights"]))])
        if self.kind == "mueller-brown-2d":
            return np.array([-0.558, 1.442])
        return np.zeros(self.dim)

    def default_partition(self) -> list[float]:
        """Cut points along the first coordinate separating the basins."""
        if self.kind == "double-well-1d":
            return [0.0]
        if self.kind == "mueller-brown-2d":
            return [-0.25]
        if self.kind == "periodic-torsion":
            return [0.0]
        mu = np.sort(np.array(self.params["means"])[:, 0])
        return list(0.5 * (mu[1:] + mu[:-1]))

    # -- evaluation
    def energy(self, x):
        """Energy of one state (shape ``(d,)``) or a batch (shape ``(n, d)``)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.ndim != 2 or xb.shape[1] != self.dim:
            raise ValueError(f"{self.kind} expects states of dimension {self.dim}, got shape {x.shape}")
        e = getattr(self, "_energy_" + self.kind.split("-")[0].replace("gaussian", "gmm"))(xb)
        return float(e[0]) if single else e

    def _energy_double(self, x):
        a, b = self.params["a"], self.params["b"]
        u = x[:, 0] * x[:, 0] - 1.0
        return a * u * u + b * x[:, 0]

    def _energy_gmm(self, x):
        logc, mu, prec = self._gmm_terms()
        diff = x[:, None, :] - mu[None, :, :]
        q = np.einsum("nki,kij,nkj->nk", diff, prec, diff)
        z = logc[None, :] - 0.5 * q
        m = z.max(axis=1, keepdims=True)
        return -self.kT * (m[:, 0] + np.log(np.exp(z - m).sum(axis=1)))

    def _energy_mueller(self, x):
        e = np.zeros(x.shape[0])
        for A, a, b, c, x0, y0 in self.params["terms"]:
            dx, dy = x[:, 0] - x0, x[:, 1] - y0
            e = e + A * np.exp(a * dx * dx + b * dx * dy + c * dy * dy)
        return e

    def _energy_periodic(self, x):
        k = np.array(self.params["k"])
        delta = np.array(self.params["delta"])
        n = np.arange(1, k.shape[1] + 1)
        return np.sum(k[None] * (1.0 + np.cos(n[None, None, :] * x[:, :, None] - delta[None])), axis=(1, 2))

    def _gmm_terms(self):
        w = np.array(self.params["weights"])
        mu = np.array(self.params["means"])
        cov = np.array(self.params["covs"])
        prec = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(2.0 * np.pi * cov)
        return np.log(w) - 0.5 * logdet, mu, prec

    # -- kernel interface
    def kernel_kind(self) -> int:
        return {
            "double-well-1d": kernels.DOUBLE_WELL,
            "gaussian-mixture": kernels.GAUSSIAN_MIXTURE,
            "mueller-brown-2d": kernels.MUELLER_BROWN,
            "periodic-torsion": kernels.PERIODIC_TORSION,
        }[self.kind]

    def packed(self) -> np.ndarray:
        """Flat parameter vector in the layout the compiled kernels expect."""
        if self.kind == "double-well-1d":
            return np.array([self.params["a"], self.params["b"]])
        if self.kind == "gaussian-mixture":
            logc, mu, prec = self._gmm_terms()
            d = mu.shape[1]
            parts = [np.array([self.kT, d, len(logc)], dtype=np.float64)]
            for k in range(len(logc)):
                parts += [np.array([logc[k]]), mu[k], prec[k].reshape(-1)]
            return np.concatenate(parts)
        if self.kind == "mueller-brown-2d":
            terms = np.array(self.params["terms"], dtype=np.float64)
            return np.concatenate([[terms.shape[0]], terms.reshape(-1)])
        k = np.array(self.params["k"])
        return np.concatenate([[k.shape[0], k.shape[1]], k.reshape(-1), np.array(self.params["delta"]).reshape(-1)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "kT": self.kT,
                "bounds": [list(b) for b in self.bounds], "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        return cls(d["kind"], d["params"], float(d.get("kT", 1.0)),
                   tuple(tuple(b) for b in d.get("bounds", ())), d.get("name", ""))


PRESETS = {
    "double-well": lambda: Potential.double_well(a=2.0, b=0.0, name="double-well"),
    "double-well-tilted": lambda: Potential.double_well(a=2.0, b=0.5, name="double-well-tilted"),
    "gaussian-1d": lambda: Potential.gaussian_mixture([1.0], [[0.0]], [[[1.0]]], name="gaussian-1d"),
    "gmm-2d": lambda: Potential.gaussian_mixture(
        [0.5, 0.3, 0.2], [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]],
        [np.eye(2) * 0.3, np.eye(2) * 0.3, np.eye(2) * 0.3], name="gmm-2d"),
    "mueller-brown": lambda: Potential.mueller_brown(name="mueller-brown"),
    "torsion-2d": lambda: Potential.periodic_torsion(
        [[1.0, 0.5, 1.2], [0.8, 1.0, 0.0]], name="torsion-2d"),
}


def preset(name: str, **overrides) -> Potential:
    """Named potential; keyword overrides replace parameters (e.g. ``a=4.0``) or ``kT``."""
    try:
        base = PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown potential preset {name!r}; choose from {sorted(PRESETS)}") from None
    if not overrides:
        return base
    params = dict(base.params)
    kT = overrides.pop("kT", base.kT)
    bounds = overrides.pop("bounds", base.bounds)
    for k, v in overrides.items():
        if k not in params:
            raise ValueError(f"preset {name!r} has no parameter {k!r}")
        params[k] = v
    return Potential(base.kind, params, kT, tuple(map(tuple, bounds)), base.name)


# --- Boltzmann ground truth ----------------------------------------------------------

@dataclass
class BoltzmannGrid:
    """Normalized Boltzmann density ``exp(-E/kT)/Z`` tabulated on a grid."""

    potential: Potential
    axes: list[np.ndarray]
    density: np.ndarray

    def total(self) -> float:
        return float(_trapz_nd(self.density, self.axes))

    def mode_masses(self, cuts=None, axis: int = 0) -> np.ndarray:
        """Mass of each cell of the partition given by cut points along ``axis``."""
        cuts = self.potential.default_partition() if cuts is None else list(cuts)
        edges = [self.axes[axis][0], *cuts, self.axes[axis][-1]]
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            out.append(_slab_mass(self, axis, lo, hi))
        return np.array(out)

    def bin_probabilities(self, edges: list[np.ndarray], n_sub: int = 32) -> np.ndarray:
        """Probability of each histogram bin (integrated on a refined grid, renormalized)."""
        return bin_probabilities(self.potential, edges, n_sub)


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _trapz_nd(f, axes):
    out = f
    for ax in reversed(axes):
        out = _trapezoid(out, ax, axis=-1)
    return out


def _slab_mass(grid: BoltzmannGrid, axis, lo, hi, n: int = 4001):
    p = grid.potential
    axes = list(grid.axes)
    axes[axis] = np.linspace(lo, hi, n)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.dim)
    logd = -p.energy(pts) / p.kT
    dens = np.exp(logd - grid._log_shift).reshape([a.size for a in axes]) / grid._z
    return float(_trapz_nd(dens, axes))


def boltzmann_oracle(p: Potential, n_points=None, bounds=None) -> BoltzmannGrid:
    """Tabulate ``exp(-E/kT)`` on a grid and normalize it with the trapezoid rule.

    Raises ``ValueError`` if the density carries more than 1e-6 of its mass in
    the outermost grid cells, i.e. the bounds are too tight.
    """
    if p.dim > 2:
        raise ValueError("boltzmann_oracle supports d <= 2")
    bounds = bounds or p.bounds
    if len(bounds) != p.dim:
        raise ValueError(f"need one (lo, hi) pair per dimension, got {bounds}")
    if n_points is None:
        n_points = 100_001 if p.dim == 1 else 801
    axes = [np.linspace(lo, hi, n_points) for lo, hi in bounds]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.dim)
    logd = (-p.energy(pts) / p.kT).reshape([a.size for a in axes])
    shift = float(logd.max())
    dens = np.exp(logd - shift)
    z = float(_trapz_nd(dens, axes))
    dens = dens / z
    if not p.periodic:
        for k, ax in enumerate(axes):
            edge_lo = np.take(dens, [0, 1], axis=k)
            edge_hi = np.take(dens, [-2, -1], axis=k)
            sub = [a for j, a in enumerate(axes) if j != k]
            h = ax[1] - ax[0]
            tail = 0.5 * h * (_trapz_nd(edge_lo.sum(axis=k), sub) + _trapz_nd(edge_hi.sum(axis=k), sub))
            if tail > 1e-6:
                raise ValueError(
                    f"Boltzmann density not negligible at the grid edge along axis {k} "
                    f"(edge mass {tail:.2e}); widen the bounds {bounds[k]}")
    grid = BoltzmannGrid(p, axes, dens)
    grid._log_shift = shift
    grid._z = z
    return grid


def bin_probabilities(p: Potential, edges, n_sub: int = 32) -> np.ndarray:
    """Boltzmann probability of every histogram bin given by per-axis ``edges`` (d <= 2)."""
    if p.dim > 2:
        raise ValueError("bin_probabilities supports d <= 2")
    fine = []
    for e in edges:
        e = np.asarray(e, dtype=np.float64)
        fine.append(np.concatenate([np.linspace(lo, hi, n_sub + 1)[:-1] for lo, hi in zip(e[:-1], e[1:])] + [e[-1:]]))
    pts = np.stack(np.meshgrid(*fine, indexing="ij"), axis=-1).reshape(-1, p.dim)
    logd = (-p.energy(pts) / p.kT).reshape([f.size for f in fine])
    dens = np.exp(logd - logd.max())
    # trapezoid weights per fine interval, then sum intervals into bins
    out = dens
    for k, f in enumerate(fine):
        h = np.diff(f)
        lo = np.take(out, np.arange(f.size - 1), axis=k)
        hi = np.take(out, np.arange(1, f.size), axis=k)
        shape = [1] * out.ndim
        shape[k] = h.size
        cells = 0.5 * (lo + hi) * h.reshape(shape)
        nbins = len(edges[k]) - 1
        cells = cells.reshape(*cells.shape[:k], nbins, n_sub, *cells.shape[k + 1:]).sum(axis=k + 1)
        out = cells
    return out / out.sum()


# --- Metropolis reference sampler --------------------------------------------------------

@dataclass
class MHResult:
    samples: np.ndarray
    acceptance: float
    backend: str


def mh_sample(p: Potential, n: int, step: float = 0.5, burn_in: int = 10_000, thin: int = 10,
              seed: int = 0, x_init=None, chunk: int = 1 << 16, backend=None) -> MHResult:
    """Random-walk Metropolis chain targeting ``exp(-E/kT)``.

    Gaussian proposals of scale ``step``; ``n`` states are kept, one every
    ``thin`` steps after ``burn_in`` steps. Periodic potentials wrap to [-pi, pi).
    """
    if n < 1:
        raise ValueError("mh_sample needs n >= 1")
    if thin < 1 or burn_in < 0 or not step > 0:
        raise ValueError("need thin >= 1, burn_in >= 0, step > 0")
    kern = backend or kernels.backend
    d = p.dim
    params = p.packed()
    kind = p.kernel_kind()
    x = np.array(p.default_start() if x_init is None else x_init, dtype=np.float64).reshape(d)
    if p.periodic:
        x = wrap_angle(x)
    e_x = float(kern.energy_point(kind, params, x))
    rng = np.random.default_rng(seed)
    chunk = max(thin, (chunk // thin) * thin)

    def run(n_steps, keep_every, out):
        nonlocal e_x
        props = rng.standard_normal((n_steps, d)) * step
        log_u = np.log(rng.random(n_steps))
        acc, w, e_x = kern.mh_chain(kind, params, x, e_x, props, log_u, p.kT, p.periodic, keep_every, out)
        return acc, w

    scratch = np.empty((1, d))
    done = 0
    while done < burn_in:
        m = min(chunk, burn_in - done)
        run(m, m, scratch)
        done += m
    samples = np.empty((n, d))
    total_steps = n * thin
    accepted = 0
    done = 0
    written = 0
    while done < total_steps:
        m = min(chunk, total_steps - done)
        acc, w = run(m, thin, samples[written:])
        accepted += acc
        written += w
        done += m
    rate = accepted / total_steps
    if not 0.05 <= rate <= 0.95:
        log.warning("Metropolis acceptance rate %.3f outside [0.05, 0.95] (step=%g)", rate, step)
    return MHResult(samples=samples, acceptance=rate,
                    backend="compiled" if kern is kernels.compiled_backend else "python")


# --- ranking ------------------------------------------------------------------------------

@dataclass
class RankedEnsemble:
    """Samples with energies and the stable energy-ascending permutation ``order``.

    ``order[0]`` is the index of the lowest-energy (most preferred) sample.
    """

    samples: np.ndarray
    energies: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return len(self.order)

    def ranked_samples(self) -> np.ndarray:
        return self.samples[self.order]

    def ranked_energies(self) -> np.ndarray:
        return self.energies[self.order]


def rank_by_energy(samples, energies) -> RankedEnsemble:
    samples = np.asarray(samples, dtype=np.float64)
    energies = np.asarray(energies, dtype=np.float64).reshape(-1)
    if samples.shape[0] != energies.size:
        raise ValueError(f"{samples.shape[0]} samples but {energies.size} energies")
    bad = np.flatnonzero(~np.isfinite(energies))
    if bad.size:
        raise ValueError(f"non-finite energy at index {int(bad[0])}")
    order = np.argsort(energies, kind="stable")
    return RankedEnsemble(samples=samples, energies=energies, order=order)
