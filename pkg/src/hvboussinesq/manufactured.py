"""Symbolic manufactured solution on the unit square with homogeneous Dirichlet data.

u* = curl(sin^2(pi x) sin^2(pi y)) e^{-t}, theta* = sin(pi x) sin(pi y) e^{-t},
p* = cos(pi x) cos(pi y).  Sources are derived with sympy for the strong form

    u_t - alpha lap u + (u . grad) u + grad p = beta theta e + f,
    theta_t - div(k(theta) grad theta) + u . grad theta = g.
"""
from __future__ import annotations

import functools

import numpy as np
import sympy as sym

_x, _y, _t = sym.symbols("x y t", real=True)


def _k_expr(kind: str, params: tuple, r):
    p = dict(params)
    if kind == "constant":
        return sym.Float(p["value"])
    if kind == "sine":
        return p["a"] + p["b"] * sym.sin(p["c"] * r)
    raise ValueError(f"manufactured sources need a smooth conductivity, got {kind!r}")


@functools.lru_cache(maxsize=None)
def _build(alpha: float, beta: float, e: tuple, k_kind: str, k_params: tuple):
    pi = sym.pi
    psi = sym.sin(pi * _x) ** 2 * sym.sin(pi * _y) ** 2 * sym.exp(-_t)
    u = sym.Matrix([sym.diff(psi, _y), -sym.diff(psi, _x)])
    th = sym.sin(pi * _x) * sym.sin(pi * _y) * sym.exp(-_t)
    p = sym.cos(pi * _x) * sym.cos(pi * _y)

    def grad(s):
        return sym.Matrix([sym.diff(s, _x), sym.diff(s, _y)])

    def lap(s):
        return sym.diff(s, _x, 2) + sym.diff(s, _y, 2)

    f = []
    for i in range(2):
        conv = u[0] * sym.diff(u[i], _x) + u[1] * sym.diff(u[i], _y)
        f.append(sym.diff(u[i], _t) - alpha * lap(u[i]) + conv + grad(p)[i] - beta * e[i] * th)
    k = _k_expr(k_kind, k_params, th)
    gth = grad(th)
    g = (sym.diff(th, _t) - sym.diff(k * gth[0], _x) - sym.diff(k * gth[1], _y)
         + u[0] * gth[0] + u[1] * gth[1])
    lam = functools.partial(sym.lambdify, (_x, _y, _t), modules="numpy")
    return {
        "u": (lam(u[0]), lam(u[1])),
        "theta": lam(th),
        "p": lam(p),
        "f": (lam(sym.simplify(f[0])), lam(sym.simplify(f[1]))),
        "g": lam(sym.simplify(g)),
    }


def _bcast(v, x):
    return np.broadcast_to(np.asarray(v, dtype=float), np.shape(x)).copy()


class ManufacturedField:
    """Picklable callable for one exact field or source; lambdified lazily per process."""

    def __init__(self, which: str, alpha: float, beta: float, e, k_kind: str, k_params: dict):
        self.which = which
        self.key = (float(alpha), float(beta), tuple(float(v) for v in e), k_kind,
                    tuple(sorted((str(a), float(b)) for a, b in k_params.items())))

    def __call__(self, x, y, t=0.0):
        fns = _build(*self.key)[self.which]
        if isinstance(fns, tuple):
            return _bcast(fns[0](x, y, t), x), _bcast(fns[1](x, y, t), x)
        return _bcast(fns(x, y, t), x)

    def __repr__(self):
        return f"ManufacturedField({self.which!r})"


def fields_for(cfg) -> dict:
    """Exact fields and sources matching the physical parameters of ``cfg``."""
    k = cfg.conductivity
    args = (cfg.alpha, cfg.buoyancy.beta, cfg.buoyancy.e, k.kind, k.params)
    return {w: ManufacturedField(w, *args) for w in ("u", "theta", "p", "f", "g")}
