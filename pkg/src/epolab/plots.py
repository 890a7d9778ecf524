"""Best-effort SVG renderings of the CSV outputs (needs matplotlib; skipped without it)."""
from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; SVG plots skipped (CSV outputs are unaffected)")
        return None
    plt.rcParams["svg.hashsalt"] = "epolab"
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def histogram_svg(path, edges, probs, reference=None, title="") -> bool:
    plt = _pyplot()
    if plt is None:
        return False
    centers = 0.5 * (edges[1:] + edges[:-1])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.step(centers, probs, where="mid", label="samples")
    if reference is not None:
        ax.plot(centers, reference, "k--", lw=1, label="reference")
        ax.legend()
    ax.set_xlabel("x")
    ax.set_ylabel("bin probability")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return True


def fes_svg(path, fes, title="") -> bool:
    plt = _pyplot()
    if plt is None:
        return False
    fig, ax = plt.subplots(figsize=(5, 4) if fes.values.ndim == 2 else (5, 3.2))
    if fes.values.ndim == 1:
        ax.plot(fes.centers()[0], fes.values)
        ax.set_ylabel("free energy")
    else:
        ex, ey = fes.edges
        mesh = ax.pcolormesh(ex, ey, fes.values.T, shading="flat")
        fig.colorbar(mesh, ax=ax, label="free energy")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return True


def trace_svg(path, values, ylabel="loss", title="") -> bool:
    plt = _pyplot()
    if plt is None:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(len(values)), values, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return True
