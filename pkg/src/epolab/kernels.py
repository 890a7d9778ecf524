"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
twin is used. Both are importable directly (``python_backend`` always,
``compiled_backend`` when available) so tests and the benchmark can compare them.
"""
from __future__ import annotations

import logging

from . import _kernels_py as python_backend

log = logging.getLogger(__name__)

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None
    log.debug("compiled kernels unavailable, using pure-Python fallback")

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

DOUBLE_WELL = python_backend.DOUBLE_WELL
GAUSSIAN_MIXTURE = python_backend.GAUSSIAN_MIXTURE
MUELLER_BROWN = python_backend.MUELLER_BROWN
PERIODIC_TORSION = python_backend.PERIODIC_TORSION

mh_chain = backend.mh_chain
jacobi_eigh = backend.jacobi_eigh
energy_point = backend.energy_point
