"""Conforming structured triangulations of axis-aligned rectangles.

A mesh knows its vertices, counterclockwise triangles and oriented edges.
Every edge stores a unit normal pointing from its left element into its
right element (outward of the domain for boundary edges), which is the
orientation convention the interior-penalty jump and average terms rely on.
Meshes are immutable after construction.
"""

from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle (x0, x1) x (y0, y1)."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("rectangle requires x0 < x1 and y0 < y1")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height


class Mesh:
    """Triangulation with oriented edges and cached affine element maps.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counterclockwise vertex triples
    edge_vertices : (nE, 2) int array, endpoints in stored orientation
    edge_left, edge_right : (nE,) int arrays; right is -1 on the boundary
    edge_normal : (nE, 2) unit normals, left element -> right element
    edge_length : (nE,) float array
    h : reported mesh parameter (cell edge length for structured grids)
    h_max_diam : largest element diameter
    """

    def __init__(self, vertices, elements, h=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.elements = np.asarray(elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be an (ne, 3) array")
        self._build_geometry()
        self._build_edges()
        self.h = float(h) if h is not None else float(self.h_max_diam)
        for arr in (self.vertices, self.elements, self.edge_vertices,
                    self.edge_left, self.edge_right, self.edge_normal,
                    self.edge_length):
            arr.setflags(write=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_elements(self):
        return len(self.elements)

    @property
    def num_edges(self):
        return len(self.edge_vertices)

    def _build_geometry(self):
        p0 = self.vertices[self.elements[:, 0]]
        p1 = self.vertices[self.elements[:, 1]]
        p2 = self.vertices[self.elements[:, 2]]
        e1 = p1 - p0
        e2 = p2 - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            raise MeshError("all elements must have positive signed area")
        # x = p0 + B @ xi with B columns (p1-p0, p2-p0)
        self.elem_origin = p0
        self.elem_jacobian = np.stack(
            [np.stack([e1[:, 0], e2[:, 0]], axis=-1),
             np.stack([e1[:, 1], e2[:, 1]], axis=-1)], axis=1)
        self.elem_det = det
        self.elem_area = 0.5 * det
        inv = np.empty_like(self.elem_jacobian)
        inv[:, 0, 0] = e2[:, 1]
        inv[:, 0, 1] = -e2[:, 0]
        inv[:, 1, 0] = -e1[:, 1]
        inv[:, 1, 1] = e1[:, 0]
        self.elem_jacobian_inv = inv / det[:, None, None]
        sides = np.stack([
            np.linalg.norm(p1 - p0, axis=1),
            np.linalg.norm(p2 - p1, axis=1),
            np.linalg.norm(p0 - p2, axis=1),
        ])
        self.elem_diameter = sides.max(axis=0)
        self.h_max_diam = float(self.elem_diameter.max())

    def _build_edges(self):
        first = {}
        ev, left, right = [], [], []
        for e, tri in enumerate(self.elements):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                idx = first.get(key)
                if idx is None:
                    first[key] = len(ev)
                    ev.append((a, b))
                    left.append(e)
                    right.append(-1)
                elif right[idx] == -1:
                    right[idx] = e
                else:
                    raise MeshError("edge shared by more than two elements")
        self.edge_vertices = np.array(ev, dtype=np.int64)
        self.edge_left = np.array(left, dtype=np.int64)
        self.edge_right = np.array(right, dtype=np.int64)
        v0 = self.vertices[self.edge_vertices[:, 0]]
        v1 = self.vertices[self.edge_vertices[:, 1]]
        tangent = v1 - v0
        length = np.linalg.norm(tangent, axis=1)
        if np.any(length <= 0):
            raise MeshError("degenerate edge")
        self.edge_length = length
        # rotate the left element's CCW traversal by -90 degrees: outward
        # of the left element, hence pointing into the right one
        self.edge_normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_right >= 0)

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_right < 0)

    def element_corners(self, e):
        return self.vertices[self.elements[e]]

    def to_reference(self, e, points):
        """Map physical points into reference coordinates of element e."""
        rel = np.asarray(points, dtype=float) - self.elem_origin[e]
        return rel @ self.elem_jacobian_inv[e].T

    def to_physical(self, e, ref_points):
        """Map reference coordinates of element e to physical points."""
        ref = np.asarray(ref_points, dtype=float)
        return self.elem_origin[e] + ref @ self.elem_jacobian[e].T


def build_structured(rect, n):
    """Uniform n-by-n triangulation of `rect`.

    Each cell is split along the diagonal from its lower-left to its
    upper-right corner, fixed for reproducibility.  The reported mesh
    parameter h is the cell edge length (x1 - x0)/n, matching how the
    convergence tables label their rows; the largest element diameter is
    kept separately in ``h_max_diam``.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    xs = np.linspace(rect.x0, rect.x1, n + 1)
    ys = np.linspace(rect.y0, rect.y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    elements = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    return Mesh(vertices, np.array(elements), h=rect.width / n)


@dataclass(frozen=True)
class EdgeTrace:
    """One side of an edge: the incident element plus the trace maps."""

    mesh: Mesh
    element: int
    edge: int

    def physical_points(self, s):
        s = np.asarray(s, dtype=float)
        v0, v1 = self.mesh.edge_vertices[self.edge]
        p0, p1 = self.mesh.vertices[v0], self.mesh.vertices[v1]
        return p0 + s[..., None] * (p1 - p0)

    def reference_points(self, s):
        return self.mesh.to_reference(self.element, self.physical_points(s))


def edge_trace_pairing(mesh, edge):
    """Left and right trace parametrizations sharing one arc-length parameter.

    Boundary edges return (left, None); the jump there is the single trace.
    """
    if not 0 <= edge < mesh.num_edges:
        raise IndexError("edge index out of range")
    left = EdgeTrace(mesh, int(mesh.edge_left[edge]), int(edge))
    r = int(mesh.edge_right[edge])
    right = EdgeTrace(mesh, r, int(edge)) if r >= 0 else None
    return left, right


def check_invariants(mesh, rect=None):
    """Verify conformity, orientation, areas and the Euler characteristic.

    Raises MeshError on the first violation; returns a diagnostics dict on
    success (area sum, quasi-uniformity ratio, edge counts).
    """
    euler = mesh.num_vertices - mesh.num_edges + mesh.num_elements
    if euler != 1:
        raise MeshError(f"Euler characteristic V-E+F = {euler}, expected 1")
    if np.any(mesh.elem_area <= 0):
        raise MeshError("element with nonpositive area")

    # conformity: every element edge appears exactly once in the edge table
    seen = {}
    for e, tri in enumerate(mesh.elements):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            seen[key] = seen.get(key, 0) + 1
    if len(seen) != mesh.num_edges:
        raise MeshError("edge table does not match element traversal")
    for count in seen.values():
        if count not in (1, 2):
            raise MeshError("edge incident to more than two elements")

    centroids = mesh.vertices[mesh.elements].mean(axis=1)
    mids = 0.5 * (mesh.vertices[mesh.edge_vertices[:, 0]]
                  + mesh.vertices[mesh.edge_vertices[:, 1]])
    # normal leaves the left element ...
    away = np.einsum("ij,ij->i", mesh.edge_normal, mids - centroids[mesh.edge_left])
    if np.any(away <= 0):
        raise MeshError("edge normal does not point away from its left element")
    # ... and enters the right one on interior edges
    inter = mesh.interior_edges
    if len(inter):
        toward = np.einsum("ij,ij->i", mesh.edge_normal[inter],
                           centroids[mesh.edge_right[inter]] - mids[inter])
        if np.any(toward <= 0):
            raise MeshError("interior edge normal does not point into the right element")

    diag = {
        "area_sum": float(mesh.elem_area.sum()),
        "num_interior_edges": int(len(mesh.interior_edges)),
        "num_boundary_edges": int(len(mesh.boundary_edges)),
        "quasi_uniformity": float(mesh.elem_diameter.max() / mesh.elem_diameter.min()),
    }
    if rect is not None:
        if abs(diag["area_sum"] - rect.area) > 1e-12 * rect.area:
            raise MeshError("element areas do not sum to the domain area")
    return diag


def dump_mesh(mesh):
    """Plain-text dump: vertices, elements and oriented edges."""
    lines = ["vertices"]
    for i, (x, y) in enumerate(mesh.vertices):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    lines.append("elements")
    for i, (a, b, c) in enumerate(mesh.elements):
        lines.append(f"{i} {a} {b} {c}")
    lines.append("edges")
    for i in range(mesh.num_edges):
        a, b = mesh.edge_vertices[i]
        nx, ny = mesh.edge_normal[i]
        lines.append(f"{i} {a} {b} {mesh.edge_left[i]} {mesh.edge_right[i]} "
                     f"{float(nx)!r} {float(ny)!r}")
    return "\n".join(lines) + "\n"
