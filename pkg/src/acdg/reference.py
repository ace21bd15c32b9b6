"""Quadrature and orthonormal modal bases on the reference triangle.

Reference triangle: vertices (0, 0), (1, 0), (0, 1), area 1/2.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def triangle_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule exact for polynomials of total degree ``degree``.

    Returns points (nq, 2) and weights (nq,) summing to 1/2.
    """
    q = max(1, (degree + 2) // 2)
    t, wt = roots_legendre(q)
    s, ws = roots_jacobi(q, 1.0, 0.0)
    xi = 0.5 * (t + 1.0)
    eta = 0.5 * (s + 1.0)
    XI, ETA = np.meshgrid(xi, eta, indexing="ij")
    pts = np.column_stack([(XI * (1.0 - ETA)).ravel(), ETA.ravel()])
    w = np.outer(0.5 * wt, 0.25 * ws).ravel()
    return pts, w


def line_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [0, 1]: points (nq,), weights (nq,) summing to 1."""
    q = max(1, (degree + 2) // 2)
    t, w = roots_legendre(q)
    return 0.5 * (t + 1.0), 0.5 * w


def monomial_exponents(r: int) -> list[tuple[int, int]]:
    return [(a, p - a) for p in range(r + 1) for a in range(p, -1, -1)]


def _monomials(r: int, pts: np.ndarray) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([x**a * y**b for a, b in monomial_exponents(r)], axis=-1)


def _monomial_grads(r: int, pts: np.ndarray) -> np.ndarray:
    x, y = pts[..., 0], pts[..., 1]
    cols = []
    for a, b in monomial_exponents(r):
        dx = a * x ** max(a - 1, 0) * y**b if a > 0 else np.zeros_like(x)
        dy = b * x**a * y ** max(b - 1, 0) if b > 0 else np.zeros_like(x)
        cols.append(np.stack([dx, dy], axis=-1))
    return np.stack(cols, axis=-2)


@lru_cache(maxsize=None)
def _orthonormal_coefficients(r: int) -> np.ndarray:
    pts, w = triangle_quadrature(2 * r)
    V = _monomials(r, pts)
    gram = V.T @ (w[:, None] * V)
    L = np.linalg.cholesky(gram)
    return np.linalg.inv(L)


class ModalBasis:
    """Monomials Gram-Schmidt orthonormalised on the reference triangle.

    ``values(pts)`` has shape ``pts.shape[:-1] + (nb,)`` and ``grads(pts)``
    shape ``pts.shape[:-1] + (nb, 2)`` (derivatives in reference coordinates).
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.n = (degree + 1) * (degree + 2) // 2
        self.coefficients = _orthonormal_coefficients(degree)

    def values(self, pts: np.ndarray) -> np.ndarray:
        return _monomials(self.degree, np.asarray(pts, dtype=float)) @ self.coefficients.T

    def grads(self, pts: np.ndarray) -> np.ndarray:
        g = _monomial_grads(self.degree, np.asarray(pts, dtype=float))
        return np.einsum("ij,...jd->...id", self.coefficients, g)


def lagrange_nodes(r: int) -> np.ndarray:
    """Nodal points on the reference triangle: vertices, then edge midpoints for r=2.

    Edge midpoints follow the local edge numbering (edge i opposite vertex i).
    """
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if r == 1:
        return verts
    if r == 2:
        mids = np.array([[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])
        return np.vstack([verts, mids])
    raise ValueError(f"nodal interpolation supports r in {{1, 2}}, got {r}")
