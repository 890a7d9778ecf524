"""Pure-Python twin of ``_kernels.pyx``.

Kept operation-for-operation identical to the compiled module so the two
backends agree bit for bit. Any change here must be mirrored there.
"""
from __future__ import annotations

import math

import numpy as np

DOUBLE_WELL = 0
GAUSSIAN_MIXTURE = 1
MUELLER_BROWN = 2
PERIODIC_TORSION = 3


def _double_well(p, x):
    a, b = p[0], p[1]
    u = x[0] * x[0] - 1.0
    return a * u * u + b * x[0]


def _gaussian_mixture(p, x):
    kT = p[0]
    d, K = int(p[1]), int(p[2])
    stride = 1 + d + d * d
    zs = []
    for k in range(K):
        off = 3 + k * stride
        q = 0.0
        for i in range(d):
            for j in range(d):
                q = q + (x[i] - p[off + 1 + i]) * p[off + 1 + d + i * d + j] * (x[j] - p[off + 1 + j])
        zs.append(p[off] - 0.5 * q)
    m = -1e308
    for z in zs:
        if z > m:
            m = z
    s = 0.0
    for z in zs:
        s = s + math.exp(z - m)
    return -kT * (m + math.log(s))


def _mueller_brown(p, x):
    n = int(p[0])
    e = 0.0
    for k in range(n):
        off = 1 + 6 * k
        dx = x[0] - p[off + 4]
        dy = x[1] - p[off + 5]
        e = e + p[off] * math.exp(p[off + 1] * dx * dx + p[off + 2] * dx * dy + p[off + 3] * dy * dy)
    return e


def _torsion(p, x):
    d, n = int(p[0]), int(p[1])
    e = 0.0
    for i in range(d):
        for h in range(n):
            e = e + p[2 + i * n + h] * (1.0 + math.cos((h + 1) * x[i] - p[2 + d * n + i * n + h]))
    return e


_ENERGY = {
    DOUBLE_WELL: _double_well,
    GAUSSIAN_MIXTURE: _gaussian_mixture,
    MUELLER_BROWN: _mueller_brown,
    PERIODIC_TORSION: _torsion,
}


def _wrap(v):
    return v - 2.0 * math.pi * math.floor((v + math.pi) / (2.0 * math.pi))


def energy_point(kind, params, x):
    return _ENERGY[kind](list(map(float, params)), list(map(float, x)))


def mh_chain(kind, params, x, e_x, proposals, log_u, kT, periodic, thin, out):
    """Advance a random-walk Metropolis chain in place (see the compiled twin)."""
    energy = _ENERGY[kind]
    p = [float(v) for v in params]
    cur = [float(v) for v in x]
    props = proposals.tolist()
    lus = log_u.tolist()
    d = len(cur)
    accepted = 0
    w = 0
    for i, step in enumerate(props):
        prop = [cur[j] + step[j] for j in range(d)]
        if periodic:
            prop = [_wrap(v) for v in prop]
        e_p = energy(p, prop)
        if lus[i] < -(e_p - e_x) / kT:
            cur = prop
            e_x = e_p
            accepted += 1
        if (i + 1) % thin == 0:
            out[w, :] = cur
            w += 1
    x[:] = cur
    return accepted, w, e_x


def jacobi_eigh(a_in, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition; eigenvalues ascending, vectors as columns."""
    a = np.array(a_in, dtype=np.float64).tolist()
    n = len(a)
    v = np.eye(n).tolist()
    for _ in range(max_sweeps):
        off = 0.0
        scale = 0.0
        for p in range(n):
            scale = scale + a[p][p] * a[p][p]
            for q in range(p + 1, n):
                off = off + a[p][q] * a[p][q]
        if off <= tol * tol * scale or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p][q]
                if apq == 0.0:
                    continue
                app = a[p][p]
                aqq = a[q][q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                a[p][p] = app - t * apq
                a[q][q] = aqq + t * apq
                a[p][q] = 0.0
                a[q][p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k][p]
                        akq = a[k][q]
                        a[k][p] = akp - s * (akq + tau * akp)
                        a[p][k] = a[k][p]
                        a[k][q] = akq + s * (akp - tau * akq)
                        a[q][k] = a[k][q]
                for k in range(n):
                    vkp = v[k][p]
                    vkq = v[k][q]
                    v[k][p] = vkp - s * (vkq + tau * vkp)
                    v[k][q] = vkq + s * (vkp - tau * vkq)
    w = np.array([a[k][k] for k in range(n)])
    order = np.argsort(w, kind="stable")
    return w[order], np.array(v)[:, order]
