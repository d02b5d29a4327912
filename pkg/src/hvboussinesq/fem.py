"""Reference-element data: triangle quadrature and P1/P2 Lagrange bases.

The reference triangle is {(x, y): x >= 0, y >= 0, x + y <= 1} with
barycentric coordinates l0 = 1 - x - y, l1 = x, l2 = y.  Local P2 ordering is
vertices 0, 1, 2 followed by edge midpoints (0,1), (1,2), (2,0).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

P2_EDGES = ((0, 1), (1, 2), (2, 0))


@lru_cache(maxsize=None)
def triangle_rule(n: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference triangle.

    ``n`` points per direction; exact for polynomials of total degree
    ``2n - 2``.  Weights sum to 1/2.
    """
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    wt = (wu * wv * (1.0 - u)).ravel()
    pts = np.column_stack([x, y])
    pts.setflags(write=False)
    wt.setflags(write=False)
    return pts, wt


@lru_cache(maxsize=None)
def line_rule(n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


def p1_basis(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, 3) and reference gradients (nq, 3, 2) of the P1 basis."""
    x, y = pts[:, 0], pts[:, 1]
    vals = np.column_stack([1.0 - x - y, x, y])
    grads = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2)
    ).copy()
    return vals, grads


def p2_basis(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, 6) and reference gradients (nq, 6, 2) of the P2 basis."""
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(pts)
    vals = np.empty((nq, 6))
    grads = np.empty((nq, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
    for k, (i, j) in enumerate(P2_EDGES):
        vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k, :] = 4.0 * (
            lam[:, i][:, None] * dlam[j] + lam[:, j][:, None] * dlam[i]
        )
    return vals, grads


def p2_line_basis(t: np.ndarray) -> np.ndarray:
    """1D quadratic Lagrange basis on [0, 1] with nodes (0, 1, 1/2)."""
    return np.column_stack(
        [(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)]
    )
