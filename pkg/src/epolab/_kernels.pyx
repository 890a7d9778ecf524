# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Metropolis chains over analytic potentials, Jacobi eigensolver.

Every routine mirrors ``_kernels_py`` operation for operation so both backends
return bit-identical results for the same inputs.
"""
from libc.math cimport exp, log, cos, sqrt, floor, fabs, M_PI
import numpy as np

DEF DOUBLE_WELL = 0
DEF GAUSSIAN_MIXTURE = 1
DEF MUELLER_BROWN = 2
DEF PERIODIC_TORSION = 3


cdef double _double_well(const double[:] p, const double[:] x) noexcept nogil:
    cdef double a = p[0], b = p[1], u = x[0] * x[0] - 1.0
    return a * u * u + b * x[0]


cdef double _gaussian_mixture(const double[:] p, const double[:] x) noexcept nogil:
    # layout: kT, d, K, then per component: logc, mean[d], precision[d*d]
    cdef double kT = p[0]
    cdef int d = <int>p[1], K = <int>p[2]
    cdef int k, i, j, off
    cdef double q, z, m = -1e308, s = 0.0
    cdef int stride = 1 + d + d * d
    for k in range(K):
        off = 3 + k * stride
        q = 0.0
        for i in range(d):
            for j in range(d):
                q = q + (x[i] - p[off + 1 + i]) * p[off + 1 + d + i * d + j] * (x[j] - p[off + 1 + j])
        z = p[off] - 0.5 * q
        if z > m:
            m = z
    for k in range(K):
        off = 3 + k * stride
        q = 0.0
        for i in range(d):
            for j in range(d):
                q = q + (x[i] - p[off + 1 + i]) * p[off + 1 + d + i * d + j] * (x[j] - p[off + 1 + j])
        z = p[off] - 0.5 * q
        s = s + exp(z - m)
    return -kT * (m + log(s))


cdef double _mueller_brown(const double[:] p, const double[:] x) noexcept nogil:
    # layout: n_terms, then per term: A, a, b, c, x0, y0
    cdef int n = <int>p[0], k, off
    cdef double e = 0.0, dx, dy
    for k in range(n):
        off = 1 + 6 * k
        dx = x[0] - p[off + 4]
        dy = x[1] - p[off + 5]
        e = e + p[off] * exp(p[off + 1] * dx * dx + p[off + 2] * dx * dy + p[off + 3] * dy * dy)
    return e


cdef double _torsion(const double[:] p, const double[:] x) noexcept nogil:
    # layout: d, n_harmonics, k[d*n], delta[d*n]
    cdef int d = <int>p[0], n = <int>p[1], i, h
    cdef double e = 0.0
    for i in range(d):
        for h in range(n):
            e = e + p[2 + i * n + h] * (1.0 + cos((h + 1) * x[i] - p[2 + d * n + i * n + h]))
    return e


cdef double _energy(int kind, const double[:] p, const double[:] x) noexcept nogil:
    if kind == DOUBLE_WELL:
        return _double_well(p, x)
    elif kind == GAUSSIAN_MIXTURE:
        return _gaussian_mixture(p, x)
    elif kind == MUELLER_BROWN:
        return _mueller_brown(p, x)
    else:
        return _torsion(p, x)


cdef inline double _wrap(double v) noexcept nogil:
    return v - 2.0 * M_PI * floor((v + M_PI) / (2.0 * M_PI))


def energy_point(int kind, const double[:] params, const double[:] x):
    return _energy(kind, params, x)


def mh_chain(int kind, const double[:] params, double[:] x, double e_x,
             const double[:, :] proposals, const double[:] log_u,
             double kT, bint periodic, int thin, double[:, :] out):
    """Advance a random-walk Metropolis chain in place.

    ``x`` is overwritten with the final state. Every ``thin``-th state is
    written to ``out``. Returns ``(n_accepted, n_written, energy_of_final_state)``.
    """
    cdef Py_ssize_t n_steps = proposals.shape[0], d = proposals.shape[1]
    cdef Py_ssize_t i, j, w = 0
    cdef long accepted = 0
    cdef double e_p
    cdef double[:] prop = np.empty(d)
    with nogil:
        for i in range(n_steps):
            for j in range(d):
                prop[j] = x[j] + proposals[i, j]
                if periodic:
                    prop[j] = _wrap(prop[j])
            e_p = _energy(kind, params, prop)
            if log_u[i] < -(e_p - e_x) / kT:
                for j in range(d):
                    x[j] = prop[j]
                e_x = e_p
                accepted += 1
            if (i + 1) % thin == 0:
                for j in range(d):
                    out[w, j] = x[j]
                w += 1
    return accepted, w, e_x


def jacobi_eigh(a_in, double tol=1e-15, int max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns eigenvalues (ascending) and eigenvectors as columns.
    """
    cdef double[:, :] a = np.array(a_in, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = a.shape[0], p, q, k, sweep
    cdef double[:, :] v = np.eye(n)
    cdef double off, scale, theta, t, c, s, tau, app, aqq, apq, akp, akq, vkp, vkq
    for sweep in range(max_sweeps):
        off = 0.0
        scale = 0.0
        for p in range(n):
            scale = scale + a[p, p] * a[p, p]
            for q in range(p + 1, n):
                off = off + a[p, q] * a[p, q]
        if off <= tol * tol * scale or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = akp - s * (akq + tau * akp)
                        a[p, k] = a[k, p]
                        a[k, q] = akq + s * (akp - tau * akq)
                        a[q, k] = a[k, q]
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp - s * (vkq + tau * vkp)
                    v[k, q] = vkq + s * (vkp - tau * vkq)
    w = np.array([a[k, k] for k in range(n)])
    order = np.argsort(w, kind="stable")
    return w[order], np.asarray(v)[:, order]
