"""Training data sources and the samples CSV format."""
from __future__ import annotations

import csv
import logging

import numpy as np

from .energy import Potential, mh_sample

log = logging.getLogger(__name__)


def oracle_samples(p: Potential, n: int, seed: int = 0, step: float = 1.0, burn_in: int = 10_000,
                   thin: int = 10) -> np.ndarray:
    return mh_sample(p, n, step=step, burn_in=burn_in, thin=thin, seed=seed).samples


def biased_split(p: Potential, n: int, left_fraction: float = 0.9, seed: int = 0, step: float = 1.0,
                 burn_in: int = 10_000, thin: int = 10, axis: int = 0) -> np.ndarray:
    """Rejection split of the Metropolis stream with a fixed share below the first basin cut.

    States are taken in stream order until ``round(n * left_fraction)`` lie
    left of the cut and the remainder lie right of it.
    """
    if not 0.0 <= left_fraction <= 1.0:
        raise ValueError("left_fraction must lie in [0, 1]")
    cut = p.default_partition()[0]
    n_left = int(round(n * left_fraction))
    need = {True: n_left, False: n - n_left}
    kept = []
    chunk = max(4 * n, 1000)
    round_ = 0
    while need[True] > 0 or need[False] > 0:
        x = oracle_samples(p, chunk, seed=seed + 7919 * round_, step=step, burn_in=burn_in, thin=thin)
        for row in x:
            side = bool(row[axis] < cut)
            if need[side] > 0:
                kept.append(row)
                need[side] -= 1
        round_ += 1
        if round_ > 50:
            raise RuntimeError("could not fill the biased split; the minority basin is too rarely visited")
    return np.array(kept).reshape(n, p.dim)


def write_samples_csv(path, samples) -> None:
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{j}" for j in range(x.shape[1])])
        for i, row in enumerate(x):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_samples_csv(path, dim: int | None = None) -> np.ndarray:
    """Read a samples CSV (``index,x0,...``); a header-only file gives shape ``(0, d)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"cannot read samples file {path}: {exc}") from exc
    if not rows or rows[0][:1] != ["index"]:
        raise ValueError(f"{path}: missing 'index,x0,...' header")
    d = len(rows[0]) - 1
    if dim is not None and d != dim:
        raise ValueError(f"{path}: samples have dimension {d}, expected {dim}")
    try:
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc
    return data.reshape(-1, d)
