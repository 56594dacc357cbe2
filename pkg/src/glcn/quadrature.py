"""Quadrature rules on the reference triangle and the reference edge.

The reference triangle is {(x, y): x >= 0, y >= 0, x + y <= 1}; the
reference edge is the interval [0, 1].  Every rule carries the polynomial
degree it integrates exactly, which the tests verify monomial by monomial.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points, weights and the declared exactness degree of a rule.

    ``points`` has shape (n, 2) for triangle rules and (n,) for edge rules.
    Weights include the reference measure: triangle weights sum to 1/2,
    edge weights to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def __len__(self):
        return len(self.weights)


def gauss_unit_interval(npoints):
    """Gauss-Legendre points and weights on [0, 1] (exact to degree 2*npoints-1)."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_rule(degree):
    """Gauss rule on the reference edge [0, 1] exact for polynomials of `degree`."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    npoints = max(1, (degree + 2) // 2)
    x, w = gauss_unit_interval(npoints)
    return QuadratureRule(points=x, weights=w, degree=2 * npoints - 1)


def triangle_rule(degree):
    """Tensor Gauss rule on the reference triangle via the collapsed-square map.

    The square (a, b) in [0,1]^2 maps to (x, y) = (a, b*(1-a)) with Jacobian
    (1-a).  A monomial x^p y^q with p+q <= d pulls back to degree d+1 in `a`
    and d in `b`, so an m-point Gauss rule per direction with 2m-1 >= d+1 is
    exact for total degree d.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    m = max(1, (degree + 3) // 2)
    a, wa = gauss_unit_interval(m)
    b, wb = gauss_unit_interval(m)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = A.ravel()
    y = (B * (1.0 - A)).ravel()
    w = (WA * WB * (1.0 - A)).ravel()
    return QuadratureRule(points=np.column_stack([x, y]), weights=w, degree=2 * m - 2)


def reference_monomial_integral(a, b):
    """Exact value of the integral of x^a y^b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
