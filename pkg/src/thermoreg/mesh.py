"""Structured quadrilateral meshes, element spaces, and quadrature rules.

The solver operates on axis-aligned ``nx x ny`` grids of rectangular cells.
Four element families cover the fields involved: 8-node serendipity
quadrilaterals for displacement and temperature (a full 9-node biquadratic
variant is available for comparison), bilinear quadrilaterals for the
filtered density, and piecewise constants for the raw design variable.

Cell integration uses a 3x3 Gauss-Lobatto rule whose points sit on element
corners and edge midpoints; sampling the worst-compressed locations of the
contact medium there keeps nearly collapsed void elements stable. Facet
integrals use a 3-point Gauss rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Local node coordinates, one row per node, in the reference square [-1, 1]^2.
_SEREN_NODES = np.array(
    [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0],
     [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
_Q2_NODES = np.vstack([_SEREN_NODES, [[0.0, 0.0]]])
_Q1_NODES = _SEREN_NODES[:4]

# Fine-grid offsets (in half-cell steps) matching the local node orderings.
_SEREN_OFFSETS = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1)]
_Q2_OFFSETS = _SEREN_OFFSETS + [(1, 1)]

# Local serendipity node indices along each edge (edge 0 = bottom, 1 = right,
# 2 = top, 3 = left), ordered by increasing edge parameter.
EDGE_NODES = ((0, 4, 1), (1, 5, 2), (3, 6, 2), (0, 7, 3))


def _seren_tables(points: np.ndarray):
    """Values, reference gradients, and reference Hessians of the 8 serendipity
    basis functions at ``points`` (n, 2).

    Returns (N (n,8), dN (n,8,2), d2N (n,8,3)); Hessian columns are ordered
    (xi-xi, eta-eta, xi-eta).
    """
    xi, eta = points[:, 0], points[:, 1]
    n = len(points)
    N = np.empty((n, 8))
    dN = np.empty((n, 8, 2))
    d2N = np.empty((n, 8, 3))
    for k in range(4):
        a, b = _SEREN_NODES[k]
        N[:, k] = 0.25 * (1 + a * xi) * (1 + b * eta) * (a * xi + b * eta - 1)
        dN[:, k, 0] = 0.25 * a * (1 + b * eta) * (2 * a * xi + b * eta)
        dN[:, k, 1] = 0.25 * b * (1 + a * xi) * (a * xi + 2 * b * eta)
        d2N[:, k, 0] = 0.5 * (1 + b * eta)
        d2N[:, k, 1] = 0.5 * (1 + a * xi)
        d2N[:, k, 2] = 0.25 * a * b * (2 * a * xi + 2 * b * eta + 1)
    for k in (4, 6):  # midside nodes on eta = +-1
        b = _SEREN_NODES[k, 1]
        N[:, k] = 0.5 * (1 - xi**2) * (1 + b * eta)
        dN[:, k, 0] = -xi * (1 + b * eta)
        dN[:, k, 1] = 0.5 * b * (1 - xi**2)
        d2N[:, k, 0] = -(1 + b * eta)
        d2N[:, k, 1] = 0.0
        d2N[:, k, 2] = -xi * b
    for k in (5, 7):  # midside nodes on xi = +-1
        a = _SEREN_NODES[k, 0]
        N[:, k] = 0.5 * (1 + a * xi) * (1 - eta**2)
        dN[:, k, 0] = 0.5 * a * (1 - eta**2)
        dN[:, k, 1] = -eta * (1 + a * xi)
        d2N[:, k, 0] = 0.0
        d2N[:, k, 1] = -(1 + a * xi)
        d2N[:, k, 2] = -a * eta
    return N, dN, d2N


def _lag1d(t: np.ndarray):
    """Quadratic 1D Lagrange basis on {-1, 0, 1}: values, first and second
    derivatives, each shaped (n, 3) with column order (node -1, node 0, node 1)."""
    v = np.stack([0.5 * t * (t - 1), 1 - t**2, 0.5 * t * (t + 1)], axis=-1)
    d = np.stack([t - 0.5, -2 * t, t + 0.5], axis=-1)
    h = np.stack([np.ones_like(t), -2 * np.ones_like(t), np.ones_like(t)], axis=-1)
    return v, d, h


def _q2_tables(points: np.ndarray):
    """Full biquadratic (9-node) basis tables, same layout as _seren_tables."""
    vx, dx, hx = _lag1d(points[:, 0])
    vy, dy, hy = _lag1d(points[:, 1])
    # map local node -> (index into 1D basis along x, along y)
    pos = {(-1.0, -1.0): (0, 0), (1.0, -1.0): (2, 0), (1.0, 1.0): (2, 2),
           (-1.0, 1.0): (0, 2), (0.0, -1.0): (1, 0), (1.0, 0.0): (2, 1),
           (0.0, 1.0): (1, 2), (-1.0, 0.0): (0, 1), (0.0, 0.0): (1, 1)}
    n = len(points)
    N = np.empty((n, 9))
    dN = np.empty((n, 9, 2))
    d2N = np.empty((n, 9, 3))
    for k, (a, b) in enumerate(map(tuple, _Q2_NODES)):
        i, j = pos[(a, b)]
        N[:, k] = vx[:, i] * vy[:, j]
        dN[:, k, 0] = dx[:, i] * vy[:, j]
        dN[:, k, 1] = vx[:, i] * dy[:, j]
        d2N[:, k, 0] = hx[:, i] * vy[:, j]
        d2N[:, k, 1] = vx[:, i] * hy[:, j]
        d2N[:, k, 2] = dx[:, i] * dy[:, j]
    return N, dN, d2N


def _q1_tables(points: np.ndarray):
    xi, eta = points[:, 0], points[:, 1]
    n = len(points)
    N = np.empty((n, 4))
    dN = np.empty((n, 4, 2))
    d2N = np.zeros((n, 4, 3))
    for k in range(4):
        a, b = _Q1_NODES[k]
        N[:, k] = 0.25 * (1 + a * xi) * (1 + b * eta)
        dN[:, k, 0] = 0.25 * a * (1 + b * eta)
        dN[:, k, 1] = 0.25 * b * (1 + a * xi)
        d2N[:, k, 2] = 0.25 * a * b
    return N, dN, d2N


_BASIS_TABLES = {
    "serendipity8": _seren_tables,
    "q2": _q2_tables,
    "q1": _q1_tables,
}


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-cell quadrature rule.

    ``points`` has shape (nq, dim); weights sum to 2**dim.
    """
    variant: str
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)


def quadrature(variant: str) -> QuadratureRule:
    """Build a quadrature rule by name.

    Supported variants: ``gauss-lobatto-3x3`` (cells; nodes at {-1, 0, 1} with
    weights {1/3, 4/3, 1/3}, exact through bi-cubic terms) and ``gauss-3``
    (facets; 3-point Gauss-Legendre on [-1, 1], exact to degree 5).
    """
    if variant == "gauss-lobatto-3x3":
        t = np.array([-1.0, 0.0, 1.0])
        w = np.array([1.0, 4.0, 1.0]) / 3.0
        pts = np.array([[x, y] for y in t for x in t])
        wts = np.array([wy * wx for wy in w for wx in w])
        return QuadratureRule(variant, pts, wts)
    if variant == "gauss-3":
        s = np.sqrt(3.0 / 5.0)
        pts = np.array([[-s], [0.0], [s]])
        wts = np.array([5.0, 8.0, 5.0]) / 9.0
        return QuadratureRule(variant, pts, wts)
    raise ValueError(f"unknown quadrature variant: {variant!r}")


@dataclass
class MeshGrid:
    """Axis-aligned structured grid of nx x ny rectangular cells.

    Boundary facets are element edges on the domain boundary; each carries at
    most one tag assigned from coordinate predicates evaluated at the facet
    midpoint (first matching rule wins, untagged facets are natural).
    """
    nx: int
    ny: int
    width: float
    height: float
    # facet arrays, one entry per boundary facet
    facet_elem: np.ndarray = field(default=None, repr=False)
    facet_edge: np.ndarray = field(default=None, repr=False)
    facet_mid: np.ndarray = field(default=None, repr=False)
    facet_tags: list = field(default=None, repr=False)
    tags: dict = field(default_factory=dict, repr=False)
    _spaces: dict = field(default_factory=dict, repr=False)

    @property
    def n_elems(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return self.width / self.nx

    @property
    def hy(self) -> float:
        return self.height / self.ny

    @property
    def elem_area(self) -> float:
        return self.hx * self.hy

    def elem_index(self, ex: int, ey: int) -> int:
        return ey * self.nx + ex

    def elem_centers(self) -> np.ndarray:
        ex = (np.arange(self.nx) + 0.5) * self.hx
        ey = (np.arange(self.ny) + 0.5) * self.hy
        X, Y = np.meshgrid(ex, ey)
        return np.column_stack([X.ravel(), Y.ravel()])

    def facet_length(self, f: int) -> float:
        return self.hx if self.facet_edge[f] in (0, 2) else self.hy

    def tag_length(self, tag: str) -> float:
        return sum(self.facet_length(f) for f in self.tags[tag])


def build_structured_mesh(nx: int, ny: int, width: float, height: float,
                          tag_spec=()) -> MeshGrid:
    """Create a structured mesh and tag its boundary facets.

    ``tag_spec`` is a sequence of ``(name, predicate)`` pairs where the
    predicate maps facet midpoint coordinates ``(x, y)`` to bool. Rules are
    applied in order; the first match assigns the facet's single tag.
    """
    if nx < 1 or ny < 1:
        raise ValueError("mesh needs at least one element per direction")
    if width <= 0 or height <= 0:
        raise ValueError("mesh extents must be positive")
    mesh = MeshGrid(nx=nx, ny=ny, width=float(width), height=float(height))

    hx, hy = mesh.hx, mesh.hy
    elems, edges, mids = [], [], []
    for ex in range(nx):  # bottom, top
        for ey, edge in ((0, 0), (ny - 1, 2)):
            elems.append(mesh.elem_index(ex, ey))
            edges.append(edge)
            mids.append(((ex + 0.5) * hx, 0.0 if edge == 0 else height))
    for ey in range(ny):  # left, right
        for ex, edge in ((nx - 1, 1), (0, 3)):
            elems.append(mesh.elem_index(ex, ey))
            edges.append(edge)
            mids.append((width if edge == 1 else 0.0, (ey + 0.5) * hy))
    mesh.facet_elem = np.array(elems, dtype=int)
    mesh.facet_edge = np.array(edges, dtype=int)
    mesh.facet_mid = np.array(mids)

    mesh.facet_tags = [None] * len(elems)
    mesh.tags = {name: [] for name, _ in tag_spec}
    for f, (x, y) in enumerate(mesh.facet_mid):
        for name, pred in tag_spec:
            if pred(x, y):
                mesh.facet_tags[f] = name
                mesh.tags[name].append(f)
                break
    mesh.tags = {name: np.array(fs, dtype=int) for name, fs in mesh.tags.items()}
    return mesh


@dataclass
class FESpace:
    """A finite element space over a MeshGrid.

    ``kind`` selects the family: ``serendipity8`` or ``q2`` (quadratic,
    displacement/temperature), ``q1`` (bilinear, filtered density), ``q0``
    (elementwise constant, design variable). Global dofs are numbered
    node-major, components interleaved (``dof = node * n_comp + comp``).
    """
    mesh: MeshGrid
    kind: str
    n_comp: int = 1
    nodes: np.ndarray = field(default=None, repr=False)
    elems: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        nx, ny = self.mesh.nx, self.mesh.ny
        hx, hy = self.mesh.hx, self.mesh.hy
        if self.kind in ("serendipity8", "q2"):
            fnx, fny = 2 * nx + 1, 2 * ny + 1
            keep = np.ones((fnx, fny), dtype=bool)
            if self.kind == "serendipity8":
                keep[1::2, 1::2] = False  # drop cell-center points
            idx = -np.ones((fnx, fny), dtype=int)
            ii, jj = np.nonzero(keep)
            order = np.lexsort((ii, jj))  # row-major: y outer, x inner
            idx[ii[order], jj[order]] = np.arange(len(ii))
            self.nodes = np.column_stack([ii[order] * hx / 2, jj[order] * hy / 2])
            offs = _SEREN_OFFSETS if self.kind == "serendipity8" else _Q2_OFFSETS
            conn = np.empty((nx * ny, len(offs)), dtype=int)
            for ey in range(ny):
                for ex in range(nx):
                    conn[ey * nx + ex] = [idx[2 * ex + di, 2 * ey + dj]
                                          for di, dj in offs]
            self.elems = conn
        elif self.kind == "q1":
            X, Y = np.meshgrid(np.arange(nx + 1) * hx, np.arange(ny + 1) * hy)
            self.nodes = np.column_stack([X.ravel(), Y.ravel()])
            conn = np.empty((nx * ny, 4), dtype=int)
            for ey in range(ny):
                for ex in range(nx):
                    n0 = ey * (nx + 1) + ex
                    conn[ey * nx + ex] = [n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]
            self.elems = conn
        elif self.kind == "q0":
            self.nodes = self.mesh.elem_centers()
            self.elems = np.arange(nx * ny, dtype=int)[:, None]
        else:
            raise ValueError(f"unknown element kind: {self.kind!r}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_basis(self) -> int:
        return self.elems.shape[1]

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.n_comp

    def elem_dofs(self) -> np.ndarray:
        """(n_elems, n_basis * n_comp) global dof ids, node-major per element."""
        nb, nc = self.n_basis, self.n_comp
        dofs = (self.elems[:, :, None] * nc + np.arange(nc)[None, None, :])
        return dofs.reshape(-1, nb * nc)

    def ref_tables(self, points: np.ndarray):
        """Reference basis tables (N, dN_ref, d2N_ref) at (n, 2) points."""
        if self.kind == "q0":
            n = len(points)
            return (np.ones((n, 1)), np.zeros((n, 1, 2)), np.zeros((n, 1, 3)))
        return _BASIS_TABLES[self.kind](points)


def shape_eval(space: FESpace, elem: int, points: np.ndarray):
    """Physical basis values, gradients, and second derivatives at reference
    ``points`` (n, 2) of element ``elem``.

    Returns (N (n, nb), dNdx (n, nb, 2), d2Ndx2 (n, nb, 3), detJ (n,)) with
    Hessian columns ordered (xx, yy, xy). Second derivatives are transformed
    with the affine chain rule; the mapping Hessian vanishes on the axis-
    aligned cells this mesh produces.
    """
    N, dN, d2N = space.ref_tables(points)
    # geometric map from the element's corner vertices (bilinear)
    q1 = space.mesh._spaces.get("_geom")
    if q1 is None:
        q1 = FESpace(space.mesh, "q1")
        space.mesh._spaces["_geom"] = q1
    corners = q1.nodes[q1.elems[elem]]
    _, dG, _ = _q1_tables(points)
    # J[p, i, j] = d x_i / d xi_j
    J = np.einsum("pbj,bi->pij", dG, corners)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(detJ <= 0):
        raise ValueError(f"non-positive mapping Jacobian in element {elem}")
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / detJ
    Jinv[:, 1, 1] = J[:, 0, 0] / detJ
    Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
    Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
    dNdx = np.einsum("pbk,pki->pbi", dN, Jinv)
    # Hessian transform H_x = Jinv^T H_ref Jinv, packed (xx, yy, xy)
    Hr = np.empty((len(points), space.n_basis, 2, 2))
    Hr[:, :, 0, 0] = d2N[:, :, 0]
    Hr[:, :, 1, 1] = d2N[:, :, 1]
    Hr[:, :, 0, 1] = Hr[:, :, 1, 0] = d2N[:, :, 2]
    Hx = np.einsum("pki,pbkl,plj->pbij", Jinv, Hr, Jinv)
    d2Ndx2 = np.stack([Hx[:, :, 0, 0], Hx[:, :, 1, 1], Hx[:, :, 0, 1]], axis=-1)
    return N, dNdx, d2Ndx2, detJ


def edge_param_points(edge: int, s: np.ndarray) -> np.ndarray:
    """Map 1D edge parameters s in [-1, 1] to reference-cell coordinates."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if edge == 0:
        return np.column_stack([s, -np.ones_like(s)])
    if edge == 1:
        return np.column_stack([np.ones_like(s), s])
    if edge == 2:
        return np.column_stack([s, np.ones_like(s)])
    if edge == 3:
        return np.column_stack([-np.ones_like(s), s])
    raise ValueError(f"bad edge id {edge}")


def edge_trace_tables(s: np.ndarray):
    """Quadratic edge trace basis (start, mid, end) at parameters ``s``."""
    v, d, _ = _lag1d(np.asarray(s, dtype=float).reshape(-1))
    return v, d
