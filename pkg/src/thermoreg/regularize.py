"""Design-field regularization.

The raw elementwise design variable z is smoothed into a nodal bilinear field
by a Helmholtz-type PDE filter,

    int l^2 grad(zeta).grad(dzeta) dV + int (zeta - z) dzeta dV = 0,

with natural boundary conditions (testing with 1 shows the filter conserves
total material exactly). The filtered field is then sharpened by a smooth
Heaviside projection whose steepness beta follows a doubling schedule during
optimization. A dilated threshold is used for the volume constraint so the
enforced budget refers to the slightly larger design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FESpace, MeshGrid, quadrature, shape_eval


@dataclass(frozen=True)
class ProjectionParams:
    """Heaviside projection thresholds and the beta continuation schedule."""
    beta_ini: float = 2.0
    beta_max: float = 16.0
    eta: float = 0.5
    eta_dilated: float = 0.4
    start_iter: int = 300
    period: int = 50


def beta_schedule(iteration: int, params: ProjectionParams) -> float:
    """Projection steepness at a (0-based) optimization iteration.

    beta stays at beta_ini until ``start_iter``, then doubles every
    ``period`` iterations, capped at beta_max. With the defaults, iteration
    0 gives 2, 300 gives 4, and 400 gives 16.
    """
    if iteration < params.start_iter:
        return params.beta_ini
    doublings = (iteration - params.start_iter) // params.period + 1
    return float(min(params.beta_ini * 2.0**doublings, params.beta_max))


def heaviside(zeta, beta: float, eta: float):
    """Smooth Heaviside projection and its derivative.

    H(zeta) = (tanh(beta eta) + tanh(beta (zeta - eta)))
              / (tanh(beta eta) + tanh(beta (1 - eta)))

    Returns (H, dH/dzeta). H fixes 0 and 1 for every beta and is strictly
    increasing.
    """
    zeta = np.asarray(zeta, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    t = np.tanh(beta * (zeta - eta))
    H = (np.tanh(beta * eta) + t) / denom
    dH = beta * (1.0 - t**2) / denom
    return H, dH


@dataclass
class DesignField:
    """Elementwise design variable with frozen (passive) regions.

    Frozen entries hold their prescribed value (1 in solid frames, the floor
    value in prescribed void) and are never updated by the optimizer.
    """
    values: np.ndarray
    frozen: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.frozen is None:
            self.frozen = np.zeros(len(self.values), dtype=bool)
        else:
            self.frozen = np.asarray(self.frozen, dtype=bool).copy()

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def free(self) -> np.ndarray:
        return ~self.frozen

    def free_values(self) -> np.ndarray:
        return self.values[self.free]

    def with_free_values(self, x: np.ndarray) -> "DesignField":
        out = DesignField(self.values, self.frozen)
        out.values[out.free] = x
        return out


class DesignFilter:
    """Helmholtz filter from elementwise z to a nodal bilinear field.

    The system (l^2 K + M) zeta = B z is factorized once; B maps element
    constants to consistent nodal loads (each element spreads its volume
    equally over its four corners on these affine cells). The adjoint of the
    map is B^T (l^2 K + M)^-1, reusing the same factorization.
    """

    def __init__(self, mesh: MeshGrid, radius: float):
        if radius < 0:
            raise ValueError("filter radius must be nonnegative")
        self.mesh = mesh
        self.radius = float(radius)
        self.space = FESpace(mesh, "q1")
        rule = quadrature("gauss-lobatto-3x3")
        N, dNdx, _, detJ = shape_eval(self.space, 0, rule.points)
        w = rule.weights * detJ
        Ke = np.einsum("q,qai,qbi->ab", w, dNdx, dNdx)
        Me = np.einsum("q,qa,qb->ab", w, N, N)
        conn = self.space.elems
        rows = np.repeat(conn, 4, axis=1).ravel()
        cols = np.tile(conn, (1, 4)).ravel()
        data = np.tile((self.radius**2 * Ke + Me).ravel(), mesh.n_elems)
        n = self.space.n_nodes
        A = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()
        self._lu = spla.splu(A)
        # element -> nodal load map, one quarter of the cell volume per corner
        quarter = mesh.elem_area / 4.0
        e_ids = np.repeat(np.arange(mesh.n_elems), 4)
        self._B = sp.coo_matrix(
            (np.full(conn.size, quarter), (conn.ravel(), e_ids)),
            shape=(n, mesh.n_elems)).tocsr()

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Filtered nodal field zeta for elementwise design z."""
        return self._lu.solve(self._B @ np.asarray(z, dtype=float))

    def adjoint_map(self, y: np.ndarray) -> np.ndarray:
        """Transpose of ``apply``: nodal covector y to element covector."""
        return self._B.T @ self._lu.solve(np.asarray(y, dtype=float))

    def chain_gradient(self, dC_dzeta: np.ndarray) -> np.ndarray:
        """Per-element gradient of any C(zeta(z)) given its nodal gradient.

        Formulated through the filter adjoint field mu solving
        (l^2 K + M) mu = -dC/dzeta; the element gradient is -int_e mu dV,
        which collapses to B^T A^-1 dC/dzeta.
        """
        mu = self._lu.solve(-np.asarray(dC_dzeta, dtype=float))
        return -(self._B.T @ mu)


def pde_filter(mesh: MeshGrid, z: np.ndarray, radius: float) -> np.ndarray:
    """One-shot filter application (builds and discards the factorization)."""
    return DesignFilter(mesh, radius).apply(z)


def default_filter_radius(mesh: MeshGrid) -> float:
    """Default length scale 2 l_e / (2 sqrt(3)) from the element side."""
    return max(mesh.hx, mesh.hy) / np.sqrt(3.0)
