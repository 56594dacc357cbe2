"""Broken polynomial spaces on triangulations: dof layout, field evaluation
and the L2, L4 and DG norms.

Degrees of freedom are element-major and never shared between elements.
All quadrature-based reductions use fixed summation orders so repeated runs
are bit-identical.
"""

from dataclasses import dataclass, field

import numpy as np

from .basis import ReferenceBasis
from .mesh import Mesh
from .quadrature import QuadratureRule, edge_rule, triangle_rule


@dataclass(frozen=True)
class EdgeTabulation:
    """Basis traces on all edges at a shared arc-length quadrature."""

    rule: QuadratureRule
    points: np.ndarray        # (nE, q, 2) physical quadrature points
    left_val: np.ndarray      # (nE, q, nloc) traces from the left element
    right_val: np.ndarray     # zero rows on boundary edges
    left_ngrad: np.ndarray    # (nE, q, nloc) normal gradient traces
    right_ngrad: np.ndarray


@dataclass(frozen=True)
class Tabulation:
    """Everything needed to integrate with one volume rule and one edge rule."""

    vol_rule: QuadratureRule
    vol_phi: np.ndarray       # (q, nloc)
    vol_dphi: np.ndarray      # (q, nloc, 2) reference gradients
    vol_points: np.ndarray    # (ne, q, 2) physical quadrature points
    edges: EdgeTabulation


class DGSpace:
    """Discontinuous piecewise-polynomial space of total degree k.

    The default volume rule is exact to degree >= 4k (the cubic nonlinearity
    against a test function has degree 4k) and the default edge rule to
    2k+1.  Elevated rules, used when measuring errors against an exact
    solution, are obtained from :meth:`tabulation`.
    """

    def __init__(self, mesh: Mesh, degree: int,
                 vol_degree=None, edge_degree=None):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.mesh = mesh
        self.degree = int(degree)
        self.basis = ReferenceBasis(degree)
        self.nloc = self.basis.size
        self.ndof = mesh.num_elements * self.nloc
        self._tabs = {}
        self.vol_degree = int(vol_degree if vol_degree is not None else 4 * degree)
        self.edge_degree = int(edge_degree if edge_degree is not None else 2 * degree + 1)
        self.tab = self.tabulation(self.vol_degree, self.edge_degree)

    def tabulation(self, vol_degree, edge_degree):
        key = (int(vol_degree), int(edge_degree))
        if key not in self._tabs:
            self._tabs[key] = self._build_tabulation(*key)
        return self._tabs[key]

    def elevated_tabulation(self):
        """Rules for error integration: exactness >= 4k+2 in the volume."""
        return self.tabulation(4 * self.degree + 2, 4 * self.degree + 2)

    def _build_tabulation(self, vol_degree, edge_degree):
        mesh = self.mesh
        vol = triangle_rule(vol_degree)
        erule = edge_rule(edge_degree)
        phi = self.basis.values(vol.points)
        dphi = self.basis.gradients(vol.points)
        xq = mesh.elem_origin[:, None, :] + np.einsum(
            "eab,qb->eqa", mesh.elem_jacobian, vol.points)

        t = erule.points
        v0 = mesh.vertices[mesh.edge_vertices[:, 0]]
        v1 = mesh.vertices[mesh.edge_vertices[:, 1]]
        xe = v0[:, None, :] + t[None, :, None] * (v1 - v0)[:, None, :]

        def side_tab(elem_idx, valid):
            ref = np.einsum("eab,eqb->eqa",
                            mesh.elem_jacobian_inv[elem_idx],
                            xe - mesh.elem_origin[elem_idx][:, None, :])
            vals = self.basis.values(ref)
            grads = self.basis.gradients(ref)
            # n . (B^-T grad_ref) = grad_ref . (B^-1 n)
            nref = np.einsum("eab,eb->ea", mesh.elem_jacobian_inv[elem_idx],
                             mesh.edge_normal)
            ngrad = np.einsum("eqia,ea->eqi", grads, nref)
            vals[~valid] = 0.0
            ngrad[~valid] = 0.0
            return vals, ngrad

        interior = mesh.edge_right >= 0
        left_val, left_ngrad = side_tab(mesh.edge_left,
                                        np.ones(mesh.num_edges, dtype=bool))
        right_val, right_ngrad = side_tab(np.where(interior, mesh.edge_right, 0),
                                          interior)
        edges = EdgeTabulation(rule=erule, points=xe,
                               left_val=left_val, right_val=right_val,
                               left_ngrad=left_ngrad, right_ngrad=right_ngrad)
        return Tabulation(vol_rule=vol, vol_phi=phi, vol_dphi=dphi,
                          vol_points=xq, edges=edges)

    def node_points(self):
        """Physical interpolation nodes, shape (ne, nloc, 2)."""
        mesh = self.mesh
        return mesh.elem_origin[:, None, :] + np.einsum(
            "eab,ib->eia", mesh.elem_jacobian, self.basis.nodes)


@dataclass
class Field:
    """Complex coefficient vector of a function in the broken space."""

    space: DGSpace
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros(self.space.ndof, dtype=complex)
        else:
            self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.space.ndof,):
            raise ValueError("coefficient vector length does not match the space")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    def by_element(self):
        return self.coeffs.reshape(self.space.mesh.num_elements, self.space.nloc)

    def copy(self):
        return Field(self.space, self.coeffs.copy())


def zero_field(space):
    return Field(space)


def interpolate(space, f):
    """Element-local interpolation of f(x, y) at the degree-k lattice nodes."""
    pts = space.node_points()
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=complex)
    return Field(space, vals.reshape(-1))


def evaluate(field, element, ref_point):
    """Value of the field at one reference point of one element."""
    space = field.space
    if not 0 <= element < space.mesh.num_elements:
        raise IndexError("element index out of range")
    phi = space.basis.values(np.asarray(ref_point, dtype=float))
    return complex(phi @ field.by_element()[element])


def values_at_volume_points(field, tab=None):
    """Field values at the volume quadrature points, shape (ne, q)."""
    space = field.space
    tab = tab or space.tab
    return np.einsum("qi,ei->eq", tab.vol_phi, field.by_element())


def l2_norm(field, tab=None):
    space = field.space
    tab = tab or space.tab
    vals = values_at_volume_points(field, tab)
    sq = np.einsum("e,q,eq->", space.mesh.elem_det, tab.vol_rule.weights,
                   np.abs(vals) ** 2)
    return float(np.sqrt(sq))


def lp_norm(field, p=4, tab=None):
    """L^p norm; only p = 4 is needed (the cubic-term energy)."""
    if p != 4:
        raise ValueError("only p = 4 is supported")
    space = field.space
    tab = tab or space.tab
    vals = values_at_volume_points(field, tab)
    s = np.einsum("e,q,eq->", space.mesh.elem_det, tab.vol_rule.weights,
                  np.abs(vals) ** 4)
    return float(s ** 0.25)


def _edge_jumps(field, edges):
    """Jump values on every edge; boundary edges carry the single trace."""
    c = field.by_element()
    mesh = field.space.mesh
    left = np.einsum("eqi,ei->eq", edges.left_val, c[mesh.edge_left])
    right = np.einsum("eqi,ei->eq", edges.right_val,
                      c[np.maximum(mesh.edge_right, 0)])
    interior = (mesh.edge_right >= 0)[:, None]
    return np.where(interior, left - right, left)


def dg_jump_sq(field, tab=None):
    """Sum over edges of (1/h_E) * integral of |[v]|^2."""
    space = field.space
    tab = tab or space.tab
    jumps = _edge_jumps(field, tab.edges)
    # (1/h_E) * int_E = (1/h_E) * h_E * sum_q w_q, so lengths cancel
    return float(np.einsum("q,eq->", tab.edges.rule.weights, np.abs(jumps) ** 2))


def dg_interior_jump_sq(field, tab=None):
    space = field.space
    tab = tab or space.tab
    jumps = _edge_jumps(field, tab.edges)
    inter = space.mesh.interior_edges
    return float(np.einsum("q,eq->", tab.edges.rule.weights,
                           np.abs(jumps[inter]) ** 2))


def broken_grad_sq(field, tab=None):
    space = field.space
    tab = tab or space.tab
    mesh = space.mesh
    gref = np.einsum("qib,ei->eqb", tab.vol_dphi, field.by_element())
    gphys = np.einsum("eba,eqb->eqa", mesh.elem_jacobian_inv, gref)
    return float(np.einsum("e,q,eqa->", mesh.elem_det, tab.vol_rule.weights,
                           np.abs(gphys) ** 2))


def dg_norm(field, tab=None):
    """Broken H1 seminorm plus h_E-weighted squared jumps over all edges."""
    return float(np.sqrt(broken_grad_sq(field, tab) + dg_jump_sq(field, tab)))


def errors_vs_exact(field, u_fun, grad_fun=None):
    """L2 and DG distance between the field and a smooth exact function.

    Uses elevated quadrature so the quadrature error stays below the
    discretization error being measured.  `u_fun(x, y)` returns complex
    values; `grad_fun(x, y)` returns a pair (du/dx, du/dy) and is required
    for the DG error (the broken-gradient term needs the exact gradient).
    """
    space = field.space
    mesh = space.mesh
    tab = space.elevated_tabulation()
    w = tab.vol_rule.weights

    xq = tab.vol_points
    diff = values_at_volume_points(field, tab) - u_fun(xq[..., 0], xq[..., 1])
    l2_sq = np.einsum("e,q,eq->", mesh.elem_det, w, np.abs(diff) ** 2)
    l2 = float(np.sqrt(l2_sq))
    if grad_fun is None:
        return l2, None

    gref = np.einsum("qib,ei->eqb", tab.vol_dphi, field.by_element())
    gphys = np.einsum("eba,eqb->eqa", mesh.elem_jacobian_inv, gref)
    gx, gy = grad_fun(xq[..., 0], xq[..., 1])
    gdiff = gphys - np.stack([gx, gy], axis=-1)
    grad_sq = np.einsum("e,q,eqa->", mesh.elem_det, w, np.abs(gdiff) ** 2)

    # the exact solution is single-valued, so interior jumps of (u - u_h)
    # reduce to jumps of u_h; on the boundary the trace of u enters
    edges = tab.edges
    jump_h = _edge_jumps(field, edges)
    bnd = mesh.boundary_edges
    xb = edges.points[bnd]
    jump = jump_h.copy()
    jump[bnd] = u_fun(xb[..., 0], xb[..., 1]) - jump_h[bnd]
    jump_sq = np.einsum("q,eq->", edges.rule.weights, np.abs(jump) ** 2)
    dg = float(np.sqrt(grad_sq + jump_sq))
    return l2, dg


def field_csv(field):
    """CSV dump of the coefficients: dof index, real part, imaginary part."""
    lines = ["dof,re,im"]
    for i, z in enumerate(field.coeffs):
        lines.append(f"{i},{float(z.real)!r},{float(z.imag)!r}")
    return "\n".join(lines) + "\n"
