"""Quadrature on the reference triangle and the unit segment."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_VOLUME_DEGREE = 14
MAX_SEGMENT_DEGREE = 25


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) reference-triangle coordinates or (n,) segment parameters
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def volume_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule on the triangle (0,0),(1,0),(0,1).

    Exact for polynomials of total degree ``degree``; weights sum to 1/2.
    """
    if not 0 <= degree <= MAX_VOLUME_DEGREE:
        raise ValueError(f"quadrature: volume degree {degree} not in [0, {MAX_VOLUME_DEGREE}]")
    n = max(1, (degree + 2) // 2)
    tj, wj = roots_jacobi(n, 1.0, 0.0)
    tl, wl = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (1.0 + tj)
    v = 0.5 * (1.0 + tl)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(0.25 * wj, 0.5 * wl)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1]; weights sum to 1."""
    if not 0 <= degree <= MAX_SEGMENT_DEGREE:
        raise ValueError(f"quadrature: segment degree {degree} not in [0, {MAX_SEGMENT_DEGREE}]")
    n = max(1, (degree + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (1.0 + t)
    pts.setflags(write=False)
    w = 0.5 * w
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


def subtriangle_rule(rule: QuadratureRule, corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a reference rule onto the triangle with reference-space ``corners`` (3, 2).

    Returned weights integrate over the sub-triangle in reference measure.
    """
    a, b, c = corners
    pts = a + np.outer(rule.points[:, 0], b - a) + np.outer(rule.points[:, 1], c - a)
    area2 = abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
    return pts, rule.weights * area2
