"""Nodal Lagrange basis of total degree k on the reference triangle.

Nodes sit at the principal lattice points (i/k, j/k), i + j <= k, so
interpolation of a smooth function is just evaluation at the mapped nodes.
Values and gradients are produced by a monomial expansion whose coefficient
matrix is the inverse of the node Vandermonde matrix; conditioning is fine
for the degrees used here (k <= 3 in all experiments).
"""

import numpy as np


def monomial_exponents(degree):
    """Exponent pairs (a, b) of all monomials x^a y^b with a + b <= degree."""
    return [(a, t - a) for t in range(degree + 1) for a in range(t + 1)]


def lattice_nodes(degree):
    """Principal lattice nodes of the reference triangle, shape (nloc, 2)."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    nodes = [
        (i / degree, j / degree)
        for j in range(degree + 1)
        for i in range(degree + 1 - j)
    ]
    return np.array(nodes, dtype=float)


class ReferenceBasis:
    """Lagrange basis functions on the reference triangle.

    Attributes
    ----------
    degree : int
    nodes : (nloc, 2) array of interpolation nodes
    size : number of basis functions, (k+1)(k+2)/2
    """

    def __init__(self, degree):
        self.degree = int(degree)
        self.exponents = monomial_exponents(self.degree)
        self.nodes = lattice_nodes(self.degree)
        self.size = len(self.exponents)
        if len(self.nodes) != self.size:
            raise AssertionError("lattice node count must match monomial count")
        vander = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(vander)  # column j = expansion of phi_j

    def _monomials(self, points):
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        cols = [x**a * y**b for (a, b) in self.exponents]
        return np.stack(cols, axis=-1)

    def _monomial_grads(self, points):
        pts = np.asarray(points, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        gx, gy = [], []
        for a, b in self.exponents:
            gx.append(a * x ** max(a - 1, 0) * y**b if a > 0 else np.zeros_like(x))
            gy.append(b * x**a * y ** max(b - 1, 0) if b > 0 else np.zeros_like(x))
        return np.stack(gx, axis=-1), np.stack(gy, axis=-1)

    def values(self, points):
        """Basis values at reference points; shape points.shape[:-1] + (nloc,)."""
        return self._monomials(points) @ self.coeffs

    def gradients(self, points):
        """Basis gradients at reference points; trailing axes (nloc, 2)."""
        gx, gy = self._monomial_grads(points)
        return np.stack([gx @ self.coeffs, gy @ self.coeffs], axis=-1)
