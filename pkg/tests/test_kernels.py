from __future__ import annotations

import numpy as np
import pytest

from epolab import kernels
from epolab.energy import preset

compiled = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")
PRESETS = ("double-well", "double-well-tilted", "gmm-2d", "mueller-brown", "torsion-2d")


def _chain(backend, p, n=5000, thin=7, seed=0):
    rng = np.random.default_rng(seed)
    props = rng.standard_normal((n, p.dim)) * 0.4
    log_u = np.log(rng.random(n))
    x = p.default_start().astype(float).copy()
    e = float(backend.energy_point(p.kernel_kind(), p.packed(), x))
    out = np.empty((n // thin, p.dim))
    acc, written, e_end = backend.mh_chain(p.kernel_kind(), p.packed(), x, e, props, log_u, p.kT, p.periodic,
                                           thin, out)
    return acc, written, e_end, out, x


@pytest.mark.parametrize("name", PRESETS)
def test_python_energy_matches_vectorized(name):
    p = preset(name)
    pts = np.random.default_rng(1).uniform(-1.5, 1.5, (20, p.dim))
    vec = p.energy(pts)
    for x, e in zip(pts, vec):
        assert abs(kernels.python_backend.energy_point(p.kernel_kind(), p.packed(), x) - e) < 1e-10 * max(1, abs(e))


@needs_compiled
@pytest.mark.parametrize("name", PRESETS)
def test_backends_bit_identical_chain(name):
    p = preset(name)
    a = _chain(compiled, p)
    b = _chain(kernels.python_backend, p)
    assert a[:3] == b[:3]
    assert np.array_equal(a[3], b[3]) and np.array_equal(a[4], b[4])


@needs_compiled
def test_backends_bit_identical_jacobi():
    rng = np.random.default_rng(2)
    for n in (1, 2, 3, 6):
        a = rng.standard_normal((n, n))
        a = a + a.T
        for x, y in zip(compiled.jacobi_eigh(a), kernels.python_backend.jacobi_eigh(a)):
            assert np.array_equal(x, y)


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_jacobi_against_numpy(backend):
    be = kernels.python_backend if backend == "python" else compiled
    if be is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 5))
    a = a @ a.T
    w, v = be.jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-11)
    np.testing.assert_allclose(v.T @ v, np.eye(5), atol=1e-12)
    assert np.all(np.diff(w) >= 0)


def test_backend_selection():
    assert kernels.BACKEND_NAME in ("compiled", "python")
    assert kernels.backend is (compiled if compiled is not None else kernels.python_backend)
