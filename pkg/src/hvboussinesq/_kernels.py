"""Element-level integration kernels.

Each kernel exists twice: a numba ``@njit`` loop nest and a pure-numpy
``einsum`` version.  The active backend is chosen at import time; set
``HVBOUSSINESQ_NUMBA=0`` to force numpy (also used when numba is missing).

Array conventions: ``w`` holds physical quadrature weights (n_el, n_q),
``vals`` reference basis values (n_q, n_b), ``grads`` physical basis
gradients (n_el, n_q, n_b, 2).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("HVBOUSSINESQ_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"


# --- numpy reference path -------------------------------------------------

def np_stiffness(grads, w):
    return np.einsum("eq,eqad,eqbd->eab", w, grads, grads, optimize=True)


def np_mass(vals, w):
    return np.einsum("eq,qa,qb->eab", w, vals, vals, optimize=True)


def np_mixed_mass(vals_a, vals_b, w):
    return np.einsum("eq,qa,qb->eab", w, vals_a, vals_b, optimize=True)


def np_advection(vals, grads, vel, w):
    conv = np.einsum("eqd,eqbd->eqb", vel, grads)
    return np.einsum("eq,qa,eqb->eab", w, vals, conv, optimize=True)


def np_elasticity(grads, w):
    ne, _, nb, _ = grads.shape
    lap = np.einsum("eq,eqad,eqbd->eab", w, grads, grads, optimize=True)
    cross = np.einsum("eq,eqaj,eqbi->eaibj", w, grads, grads, optimize=True)
    out = cross.copy()
    for i in range(2):
        out[:, :, i, :, i] += lap
    return out.reshape(ne, 2 * nb, 2 * nb)


def np_divergence(pvals, grads, w):
    ne, _, nb, _ = grads.shape
    out = -np.einsum("eq,qc,eqbj->ecbj", w, pvals, grads, optimize=True)
    return out.reshape(ne, pvals.shape[1], 2 * nb)


def np_load(vals, f, w):
    return np.einsum("eq,qa->ea", w * f, vals)


# --- numba path -----------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def nb_stiffness(grads, w):
        ne, nq, nb, _ = grads.shape
        out = np.zeros((ne, nb, nb))
        for e in range(ne):
            for q in range(nq):
                wq = w[e, q]
                for a in range(nb):
                    gax = grads[e, q, a, 0] * wq
                    gay = grads[e, q, a, 1] * wq
                    for b in range(nb):
                        out[e, a, b] += gax * grads[e, q, b, 0] + gay * grads[e, q, b, 1]
        return out

    @_jit
    def nb_mass(vals, w):
        ne, nq = w.shape
        nb = vals.shape[1]
        out = np.zeros((ne, nb, nb))
        for e in range(ne):
            for q in range(nq):
                wq = w[e, q]
                for a in range(nb):
                    va = vals[q, a] * wq
                    for b in range(nb):
                        out[e, a, b] += va * vals[q, b]
        return out

    @_jit
    def nb_mixed_mass(vals_a, vals_b, w):
        ne, nq = w.shape
        na = vals_a.shape[1]
        nb = vals_b.shape[1]
        out = np.zeros((ne, na, nb))
        for e in range(ne):
            for q in range(nq):
                wq = w[e, q]
                for a in range(na):
                    va = vals_a[q, a] * wq
                    for b in range(nb):
                        out[e, a, b] += va * vals_b[q, b]
        return out

    @_jit
    def nb_advection(vals, grads, vel, w):
        ne, nq, nb, _ = grads.shape
        out = np.zeros((ne, nb, nb))
        conv = np.empty(nb)
        for e in range(ne):
            for q in range(nq):
                vx = vel[e, q, 0]
                vy = vel[e, q, 1]
                for b in range(nb):
                    conv[b] = vx * grads[e, q, b, 0] + vy * grads[e, q, b, 1]
                wq = w[e, q]
                for a in range(nb):
                    va = vals[q, a] * wq
                    for b in range(nb):
                        out[e, a, b] += va * conv[b]
        return out

    @_jit
    def nb_elasticity(grads, w):
        ne, nq, nb, _ = grads.shape
        out = np.zeros((ne, 2 * nb, 2 * nb))
        for e in range(ne):
            for q in range(nq):
                wq = w[e, q]
                for a in range(nb):
                    for b in range(nb):
                        lap = grads[e, q, a, 0] * grads[e, q, b, 0] + grads[e, q, a, 1] * grads[e, q, b, 1]
                        for i in range(2):
                            for j in range(2):
                                v = grads[e, q, a, j] * grads[e, q, b, i]
                                if i == j:
                                    v += lap
                                out[e, 2 * a + i, 2 * b + j] += wq * v
        return out

    @_jit
    def nb_divergence(pvals, grads, w):
        ne, nq, nb, _ = grads.shape
        npb = pvals.shape[1]
        out = np.zeros((ne, npb, 2 * nb))
        for e in range(ne):
            for q in range(nq):
                wq = w[e, q]
                for c in range(npb):
                    pc = pvals[q, c] * wq
                    for b in range(nb):
                        out[e, c, 2 * b] -= pc * grads[e, q, b, 0]
                        out[e, c, 2 * b + 1] -= pc * grads[e, q, b, 1]
        return out

    @_jit
    def nb_load(vals, f, w):
        ne, nq = w.shape
        nb = vals.shape[1]
        out = np.zeros((ne, nb))
        for e in range(ne):
            for q in range(nq):
                wf = w[e, q] * f[e, q]
                for a in range(nb):
                    out[e, a] += wf * vals[q, a]
        return out


if USE_NUMBA:
    stiffness = nb_stiffness
    mass = nb_mass
    mixed_mass = nb_mixed_mass
    advection = nb_advection
    elasticity = nb_elasticity
    divergence = nb_divergence
    load = nb_load
else:
    stiffness = np_stiffness
    mass = np_mass
    mixed_mass = np_mixed_mass
    advection = np_advection
    elasticity = np_elasticity
    divergence = np_divergence
    load = np_load
