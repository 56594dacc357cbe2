"""Symmetric interior penalty assembly: mass matrix, stiffness operator,
DG-norm Gram matrix and the elliptic (Ritz) projection.

All operators are real sparse matrices; they act on complex fields by
acting on the real and imaginary coefficient vectors independently, since
every basis function is real-valued.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import Field


class LinearSolveFailed(Exception):
    """Sparse linear solve failed (singular operator or no convergence)."""


def default_penalty(degree):
    """Penalty 10(k+1)^2, scaling like the polynomial trace constant."""
    return 10.0 * (degree + 1) ** 2


@dataclass(frozen=True)
class SipgConfig:
    """Interior-penalty parameters: the penalty must be positive for
    coercivity ("sufficiently large" in theory; 10(k+1)^2 in practice)."""

    penalty: float
    degree: int = 1

    def __post_init__(self):
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")

    @classmethod
    def for_degree(cls, degree, penalty=None):
        return cls(penalty=default_penalty(degree) if penalty is None else penalty,
                   degree=degree)


class SparseOperator:
    """Real sparse matrix acting componentwise on complex coefficients."""

    def __init__(self, matrix, symmetric=False):
        self.matrix = matrix.tocsr()
        self.symmetric = bool(symmetric)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, field):
        return Field(field.space, self.matrix @ field.coeffs)

    def pairing(self, u, v):
        """Sesquilinear pairing v^H (A u) on coefficient vectors."""
        return complex(np.vdot(v, self.matrix @ u))

    def export_coo(self):
        """Coordinate-format text dump: one "i j value" line per entry."""
        coo = self.matrix.tocoo()
        lines = [f"{i} {j} {float(v)!r}" for i, j, v in zip(coo.row, coo.col, coo.data)]
        return "\n".join(lines) + "\n"


def _scatter_blocks(space, blocks, rows_elem, cols_elem):
    """COO triplets for per-edge (or per-element) dense blocks."""
    nloc = space.nloc
    nb = blocks.shape[0]
    i = np.arange(nloc)
    rows = (rows_elem[:, None, None] * nloc + i[None, :, None])
    cols = (cols_elem[:, None, None] * nloc + i[None, None, :])
    rows = np.broadcast_to(rows, (nb, nloc, nloc)).ravel()
    cols = np.broadcast_to(cols, (nb, nloc, nloc)).ravel()
    return blocks.ravel(), rows, cols


def element_block_matrix(space, local):
    """Assemble per-element (ne, nloc, nloc) blocks into a CSR matrix."""
    elems = np.arange(space.mesh.num_elements)
    data, rows, cols = _scatter_blocks(space, local, elems, elems)
    return sp.coo_matrix((data, (rows, cols)),
                         shape=(space.ndof, space.ndof)).tocsr()


def assemble_mass(space):
    """Block-diagonal SPD matrix of the L2 inner product."""
    tab = space.tab
    ref = np.einsum("q,qi,qj->ij", tab.vol_rule.weights, tab.vol_phi, tab.vol_phi)
    local = space.mesh.elem_det[:, None, None] * ref[None, :, :]
    return SparseOperator(element_block_matrix(space, local), symmetric=True)


def _volume_stiffness_blocks(space):
    mesh = space.mesh
    tab = space.tab
    g = np.einsum("eba,eca->ebc", mesh.elem_jacobian_inv, mesh.elem_jacobian_inv)
    return np.einsum("e,q,qib,ebc,qjc->eij", mesh.elem_det, tab.vol_rule.weights,
                     tab.vol_dphi, g, tab.vol_dphi, optimize=True)


def _face_triplets(space, penalty, consistency):
    """COO triplets of the face terms (consistency + penalty) over all edges."""
    mesh = space.mesh
    edges = space.tab.edges
    w = edges.rule.weights
    h = mesh.edge_length
    data, rows, cols = [], [], []

    inter = mesh.interior_edges
    sides = [
        (mesh.edge_left[inter], edges.left_val[inter], edges.left_ngrad[inter], 1.0),
        (mesh.edge_right[inter], edges.right_val[inter], edges.right_ngrad[inter], -1.0),
    ]
    for elem_s, val_s, ngrad_s, sig_s in sides:
        for elem_t, val_t, ngrad_t, sig_t in sides:
            block = penalty * sig_s * sig_t * np.einsum(
                "q,eqi,eqj->eij", w, val_s, val_t, optimize=True)
            if consistency:
                block -= 0.5 * sig_t * h[inter, None, None] * np.einsum(
                    "q,eqi,eqj->eij", w, ngrad_s, val_t, optimize=True)
                block -= 0.5 * sig_s * h[inter, None, None] * np.einsum(
                    "q,eqi,eqj->eij", w, val_s, ngrad_t, optimize=True)
            d, r, c = _scatter_blocks(space, block, elem_s, elem_t)
            data.append(d)
            rows.append(r)
            cols.append(c)

    bnd = mesh.boundary_edges
    if len(bnd):
        elem = mesh.edge_left[bnd]
        val = edges.left_val[bnd]
        ngrad = edges.left_ngrad[bnd]
        block = penalty * np.einsum("q,eqi,eqj->eij", w, val, val, optimize=True)
        if consistency:
            block -= h[bnd, None, None] * np.einsum(
                "q,eqi,eqj->eij", w, ngrad, val, optimize=True)
            block -= h[bnd, None, None] * np.einsum(
                "q,eqi,eqj->eij", w, val, ngrad, optimize=True)
        d, r, c = _scatter_blocks(space, block, elem, elem)
        data.append(d)
        rows.append(r)
        cols.append(c)

    return np.concatenate(data), np.concatenate(rows), np.concatenate(cols)


def assemble_stiffness(space, cfg):
    """SIPG discretization of -Laplace with homogeneous Dirichlet data.

    Four ingredients: broken gradient volume term, the two symmetric
    consistency face terms and the penalty; boundary edges use the
    single-sided average/jump convention.
    """
    vol = _volume_stiffness_blocks(space)
    elems = np.arange(space.mesh.num_elements)
    dv, rv, cv = _scatter_blocks(space, vol, elems, elems)
    df, rf, cf = _face_triplets(space, cfg.penalty, consistency=True)
    mat = sp.coo_matrix((np.concatenate([dv, df]),
                         (np.concatenate([rv, rf]), np.concatenate([cv, cf]))),
                        shape=(space.ndof, space.ndof)).tocsr()
    return SparseOperator(mat, symmetric=True)


def assemble_dg_gram(space):
    """Gram matrix of the DG norm: gradient term plus (1/h_E)-weighted jumps."""
    vol = _volume_stiffness_blocks(space)
    elems = np.arange(space.mesh.num_elements)
    dv, rv, cv = _scatter_blocks(space, vol, elems, elems)
    df, rf, cf = _face_triplets(space, 1.0, consistency=False)
    mat = sp.coo_matrix((np.concatenate([dv, df]),
                         (np.concatenate([rv, rf]), np.concatenate([cv, cf]))),
                        shape=(space.ndof, space.ndof)).tocsr()
    return SparseOperator(mat, symmetric=True)


@dataclass(frozen=True)
class LinearSolver:
    """How sparse systems are solved: direct LU or preconditioned GMRES.

    Either route must reach a relative residual of `tol`; the artifact's
    results may not depend on which one is used beyond that tolerance.
    """

    method: str = "direct"
    tol: float = 1e-12
    max_iter: int = 2000

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError("linear solver method must be direct or iterative")


def factorize(matrix):
    """LU-factorize a sparse matrix, reporting singularity explicitly.

    The A+A^T minimum-degree ordering roughly halves the fill of the
    default column ordering on these structurally symmetric systems.
    """
    try:
        return spla.splu(matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise LinearSolveFailed(f"sparse factorization failed: {exc}") from exc


def solve_real_system(matrix, rhs, solver=LinearSolver()):
    """Solve a real sparse system for a real or complex right-hand side.

    Complex right-hand sides are handled componentwise.  Returns the
    solution and the iteration count (0 for the direct route).
    """
    if np.iscomplexobj(rhs):
        xr, it_r = solve_real_system(matrix, rhs.real, solver)
        xi, it_i = solve_real_system(matrix, rhs.imag, solver)
        return xr + 1j * xi, it_r + it_i
    if solver.method == "direct":
        x = factorize(matrix).solve(rhs)
        _check_residual(matrix, x, rhs, solver.tol)
        return x, 0
    ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-8, fill_factor=20)
    precond = spla.LinearOperator(matrix.shape, ilu.solve)
    x, info = spla.gmres(matrix.tocsr(), rhs, rtol=solver.tol, atol=0.0,
                         maxiter=solver.max_iter, M=precond)
    if info != 0:
        raise LinearSolveFailed(f"gmres did not converge (info={info})")
    _check_residual(matrix, x, rhs, solver.tol)
    return x, 1


def _check_residual(matrix, x, rhs, tol):
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return
    rel = np.linalg.norm(matrix @ x - rhs) / scale
    if not np.isfinite(rel) or rel > 100 * tol:
        raise LinearSolveFailed(f"linear solve residual {rel:.3e} exceeds tolerance")


def ritz_project(space, cfg, lap_fun, stiffness=None, solver=LinearSolver()):
    """Elliptic projection: a_h(R u, v) = -(lap u, v) for all discrete v.

    `lap_fun(x, y)` is the exact Laplacian in closed form; the projected
    function must have a zero boundary trace for the identity to be the
    Ritz projection of u.
    """
    A = stiffness if stiffness is not None else assemble_stiffness(space, cfg)
    tab = space.tab
    xq = tab.vol_points
    lap = np.asarray(lap_fun(xq[..., 0], xq[..., 1]), dtype=complex)
    b = -np.einsum("e,q,eq,qi->ei", space.mesh.elem_det, tab.vol_rule.weights,
                   lap, tab.vol_phi, optimize=True).reshape(-1)
    x, _ = solve_real_system(A.matrix, b, solver)
    return Field(space, x), A


def coercivity_min_eig(space, cfg):
    """Smallest eigenvalue of a_h on the DG-norm unit sphere (dense solve)."""
    from scipy.linalg import eigh

    A = assemble_stiffness(space, cfg).matrix.toarray()
    B = assemble_dg_gram(space).matrix.toarray()
    vals = eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])
