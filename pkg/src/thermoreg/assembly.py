"""Coupled thermo-mechanical residual and tangent assembly.

The monolithic unknown vector stacks displacement dofs, temperature dofs,
nodal Lagrange multipliers for every Dirichlet-type boundary group, and one
scalar multiplier per average-value constraint:

    a = [u | theta | lambda_mech ... | lambda_theta ... | scalars]

Weak form blocks (all integrals over the reference configuration):

    R_u      = int P : grad(du) dV + int k_r HH(u) ::: HH(du) dV
               + sum_tags int lambda_u . du dS + scalar terms
    R_theta  = -int grad(dtheta) . q dV + sum_tags int lambda_theta dtheta dS
               + int h (theta - theta_inf) dtheta dS
    R_lambda = int (u - u_bar) . dlambda dS   /   int (theta - theta_abs) dlambda dS

With this orientation the temperature multiplier field equals the outward
normal heat flux n.q on its boundary (heat entering the body shows up
negative), and the natural convection condition is n.q = h (theta -
theta_inf). Constraint blocks are exact transposes of each other, so the
tangent is symmetric wherever the physics is.

Cell terms use the 3x3 Gauss-Lobatto rule; every boundary term is linear in
the state, so the boundary tangent is assembled once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .material import (
    BaseMaterial,
    ErsatzScaling,
    Kinematics,
    heat_flux,
    interpolate,
    material_tangents,
    pk1_stress,
    strain_energy,
)
from .mesh import EDGE_NODES, FESpace, MeshGrid, edge_trace_tables, quadrature, shape_eval


class InvertedElementError(RuntimeError):
    """Raised when the deformation gradient determinant turns non-positive."""

    def __init__(self, elements):
        self.elements = np.atleast_1d(elements)
        ids = ", ".join(map(str, self.elements[:8]))
        more = "..." if len(self.elements) > 8 else ""
        super().__init__(f"non-positive J in elements [{ids}{more}]")


def _as_ramp(value):
    """Wrap constants into linear ramps value(t) = t * value."""
    if callable(value):
        return value
    v = float(value)
    return lambda t: t * v


class BoundaryConditions:
    """Declarative boundary data; all prescribed values ramp with the
    continuation parameter t (constants become t * value).

    When two groups claim the same (node, component) pair, the first
    declaration keeps the multiplier and later ones skip the node, so
    e.g. a clamp meeting a symmetry plane at a corner stays well posed.
    """

    def __init__(self):
        self.mech = []         # (tag, comp, ramp)
        self.temp = []         # (tag, ramp)  [value relative to theta_ref]
        self.convective = []   # (tag, h, theta_inf)
        self.averages = []     # (tag, comp)

    def fix_displacement(self, tag: str, ux=None, uy=None):
        if ux is not None:
            self.mech.append((tag, 0, _as_ramp(ux)))
        if uy is not None:
            self.mech.append((tag, 1, _as_ramp(uy)))
        return self

    def prescribe_temperature(self, tag: str, theta_rel):
        self.temp.append((tag, _as_ramp(theta_rel)))
        return self

    def convection(self, tag: str, h: float, theta_inf: float):
        self.convective.append((tag, float(h), float(theta_inf)))
        return self

    def zero_average(self, tag: str, comp: int):
        self.averages.append((tag, int(comp)))
        return self


@dataclass
class ConstraintGroup:
    kind: str              # "mech" or "temp"
    tag: str
    comp: int              # component for mech, -1 for temp
    nodes: np.ndarray      # trace node ids owning a multiplier here
    offset: int            # first multiplier dof
    ramp: object           # t -> prescribed value
    all_nodes: np.ndarray  # every trace node of the tag
    all_weights: np.ndarray  # int psi_n dS per trace node, this tag's facets
    rhs_dofs: np.ndarray = None  # multiplier dof acting for each trace node
    scale: float = 1.0     # row/column scaling; stored multiplier = physical / scale

    @property
    def dofs(self) -> np.ndarray:
        return self.offset + np.arange(len(self.nodes))


@dataclass
class ScalarConstraint:
    tag: str
    comp: int
    dof: int
    nodes: np.ndarray
    weights: np.ndarray
    scale: float = 1.0


@dataclass
class SystemState:
    """Flat unknown vector plus the layout needed to slice it."""
    a: np.ndarray
    layout: "Assembler"

    def u(self) -> np.ndarray:
        return self.a[: self.layout.n_u].reshape(-1, 2)

    def theta(self) -> np.ndarray:
        return self.a[self.layout.n_u: self.layout.n_u + self.layout.n_th]

    def multipliers(self, kind: str, tag: str, comp: int = -1) -> np.ndarray:
        """Physical multiplier values (traction or boundary flux density)."""
        g = self.layout.group(kind, tag, comp)
        return g.scale * self.a[g.offset: g.offset + len(g.nodes)]

    def copy(self) -> "SystemState":
        return SystemState(self.a.copy(), self.layout)


@dataclass
class GlobalSystem:
    """Assembled residual and (optional) tangent at a state."""
    residual: np.ndarray
    matrix: sp.spmatrix = None


class Assembler:
    """Vectorized assembly over a structured mesh.

    All cells are congruent, so basis tables, the mapping Jacobian, and the
    Hessian-penalty element matrix are computed once and shared.
    """

    def __init__(self, mesh: MeshGrid, bcs: BoundaryConditions,
                 base: BaseMaterial, ersatz: ErsatzScaling,
                 h_char: float = None, u_kind: str = "serendipity8"):
        self.mesh = mesh
        self.bcs = bcs
        self.base = base
        self.ersatz = ersatz
        self.U = FESpace(mesh, u_kind, n_comp=2)
        self.TH = FESpace(mesh, u_kind, n_comp=1)
        self.Q1 = FESpace(mesh, "q1")
        self.h_char = float(h_char) if h_char is not None else mesh.height
        self.k_r = ersatz.hessian_penalty(base, self.h_char)

        rule = quadrature("gauss-lobatto-3x3")
        self.rule = rule
        N, dNdx, d2N, detJ = shape_eval(self.TH, 0, rule.points)
        self.N, self.dN, self.d2N = N, dNdx, d2N
        self.wq = rule.weights * detJ          # (nq,)
        self.N1, _, _, _ = shape_eval(self.Q1, 0, rule.points)

        # Hessian penalty element matrix (per displacement component)
        d2 = d2N
        self.Kreg = self.k_r * np.einsum(
            "q,qam,qbm,m->ab", self.wq, d2, d2, np.array([1.0, 1.0, 2.0]))

        self.n_nodes = self.TH.n_nodes
        self.n_u = 2 * self.n_nodes
        self.n_th = self.n_nodes
        self._trace_mass_cache = {}
        self._build_constraints()
        self._build_boundary_matrix()
        self._build_scatter()

    # ---- dof bookkeeping ---------------------------------------------------

    def udof(self, nodes, comp):
        return 2 * np.asarray(nodes) + comp

    def thdof(self, nodes):
        return self.n_u + np.asarray(nodes)

    def group(self, kind: str, tag: str, comp: int = -1) -> ConstraintGroup:
        return self._groups_by_key[(kind, tag, comp)]

    def _tag_trace(self, tag: str):
        """Trace nodes of a tag (deduped, ordered) and their facet weights."""
        facets = self.mesh.tags[tag]
        rule1 = quadrature("gauss-3")
        tr, _ = edge_trace_tables(rule1.points[:, 0])
        nodes, weights = [], {}
        for f in facets:
            e, edge = self.mesh.facet_elem[f], self.mesh.facet_edge[f]
            gl = self.TH.elems[e][list(EDGE_NODES[edge])]
            jac = self.mesh.facet_length(f) / 2.0
            wpsi = jac * rule1.weights @ tr          # int psi_a over facet
            for n, w in zip(gl, wpsi):
                if n not in weights:
                    nodes.append(n)
                    weights[n] = 0.0
                weights[n] += w
        nodes = np.array(nodes, dtype=int)
        return nodes, np.array([weights[n] for n in nodes]), facets

    def tag_trace_mass(self, tag: str):
        """Consistent mass matrix of the quadratic trace on a tagged boundary.

        Returns the deduped trace nodes and the dense matrix M with
        M[a, b] = int_tag psi_a psi_b dS, so that a boundary integral of a
        squared nodal field v is v @ M @ v.
        """
        if tag in self._trace_mass_cache:
            return self._trace_mass_cache[tag]
        nodes, _, facets = self._tag_trace(tag)
        index = {n: k for k, n in enumerate(nodes)}
        rule1 = quadrature("gauss-3")
        tr, _ = edge_trace_tables(rule1.points[:, 0])
        M = np.zeros((len(nodes), len(nodes)))
        for f in facets:
            e, edge = self.mesh.facet_elem[f], self.mesh.facet_edge[f]
            gl = self.TH.elems[e][list(EDGE_NODES[edge])]
            jac = self.mesh.facet_length(f) / 2.0
            block = jac * np.einsum("q,qa,qb->ab", rule1.weights, tr, tr)
            idx = [index[n] for n in gl]
            M[np.ix_(idx, idx)] += block
        self._trace_mass_cache[tag] = (nodes, M)
        return nodes, M

    def _build_constraints(self):
        self.groups: list[ConstraintGroup] = []
        self.scalars: list[ScalarConstraint] = []
        self._groups_by_key = {}
        self._node_mult = {}  # (comp-or-"th", node) -> owning multiplier dof
        offset = self.n_u + self.n_th

        # Row/column scaling of the constraint blocks.  The raw trace-mass
        # entries (order facet length) sit many orders below the stiffness
        # and conduction entries, which makes the saddle system numerically
        # singular in double precision.  Scaling each kind by modulus over
        # mean facet length puts the blocks at the magnitude of the
        # corresponding field equations.  Stored multipliers are the
        # physical values divided by this scale.
        ell = (self.mesh.hx + self.mesh.hy) / 2.0
        kind_scale = {"mech": self.base.K / ell, "temp": self.base.kappa / ell}

        specs = ([("mech", tag, comp, ramp) for tag, comp, ramp in self.bcs.mech]
                 + [("temp", tag, -1, ramp) for tag, ramp in self.bcs.temp])
        for kind, tag, comp, ramp in specs:
            key = comp if kind == "mech" else "th"
            all_nodes, all_w, _ = self._tag_trace(tag)
            keep = np.array([(key, n) not in self._node_mult for n in all_nodes])
            own = all_nodes[keep]
            for k, n in enumerate(own):
                self._node_mult[(key, n)] = offset + k
            g = ConstraintGroup(kind, tag, comp, own, offset, ramp,
                                all_nodes, all_w, scale=kind_scale[kind])
            g.rhs_dofs = np.array([self._node_mult[(key, n)] for n in all_nodes],
                                  dtype=int)
            self.groups.append(g)
            self._groups_by_key[(kind, tag, comp)] = g
            offset += len(own)
        for tag, comp in self.bcs.averages:
            nodes, w, _ = self._tag_trace(tag)
            self.scalars.append(ScalarConstraint(tag, comp, offset, nodes, w,
                                                 scale=kind_scale["mech"]))
            offset += 1
        self.n_total = offset

    def _facet_blocks(self, tag: str):
        """Facet mass triplets: (rows of trace nodes, cols, values) with the
        3x3 quadratic edge mass matrix per facet."""
        rule1 = quadrature("gauss-3")
        tr, _ = edge_trace_tables(rule1.points[:, 0])
        rows, cols, vals = [], [], []
        for f in self.mesh.tags[tag]:
            e, edge = self.mesh.facet_elem[f], self.mesh.facet_edge[f]
            gl = self.TH.elems[e][list(EDGE_NODES[edge])]
            jac = self.mesh.facet_length(f) / 2.0
            Mf = jac * np.einsum("k,ka,kb->ab", rule1.weights, tr, tr)
            rows.append(np.repeat(gl, 3))
            cols.append(np.tile(gl, 3))
            vals.append(Mf.ravel())
        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))

    def _build_boundary_matrix(self):
        """All boundary terms are linear: assemble their tangent once and keep
        the triplets; the boundary residual is K_bc a - f_bc(t)."""
        R, C, V = [], [], []

        def add(r, c, v):
            R.append(np.asarray(r).ravel())
            C.append(np.asarray(c).ravel())
            V.append(np.asarray(v).ravel())

        for g in self.groups:
            key = (g.comp if g.kind == "mech" else "th")
            rows, cols, vals = self._facet_blocks(g.tag)
            # multiplier rows route through the owning dof, so a node shared
            # by two groups of the same component keeps a single-valued field
            mrow = np.array([self._node_mult[(key, n)] for n in rows])
            fcol = (self.udof(cols, g.comp) if g.kind == "mech"
                    else self.thdof(cols))
            add(mrow, fcol, g.scale * vals)   # constraint rows
            add(fcol, mrow, g.scale * vals)   # transposed force terms

        self._conv_loads = []
        for tag, h, theta_inf in self.bcs.convective:
            rows, cols, vals = self._facet_blocks(tag)
            add(self.thdof(rows), self.thdof(cols), h * vals)
            nodes, w, _ = self._tag_trace(tag)
            self._conv_loads.append((self.thdof(nodes), h * theta_inf * w))

        for s in self.scalars:
            ud = self.udof(s.nodes, s.comp)
            add(np.full(len(ud), s.dof), ud, s.scale * s.weights)
            add(ud, np.full(len(ud), s.dof), s.scale * s.weights)

        if R:
            self._bc_rows = np.concatenate(R)
            self._bc_cols = np.concatenate(C)
            self._bc_vals = np.concatenate(V)
        else:
            self._bc_rows = np.zeros(0, dtype=int)
            self._bc_cols = np.zeros(0, dtype=int)
            self._bc_vals = np.zeros(0)
        self._K_bc = sp.coo_matrix(
            (self._bc_vals, (self._bc_rows, self._bc_cols)),
            shape=(self.n_total, self.n_total)).tocsr()

    def boundary_load(self, t: float) -> np.ndarray:
        """f_bc(t): prescribed-value terms of the boundary residual."""
        f = np.zeros(self.n_total)
        for g in self.groups:
            value = g.ramp(t) if g.kind == "mech" \
                else self.base.theta_ref + g.ramp(t)
            np.add.at(f, g.rhs_dofs, g.scale * g.all_weights * value)
        for dofs, load in self._conv_loads:
            np.add.at(f, dofs, load)
        return f

    def _build_scatter(self):
        du = self.U.elem_dofs()                      # (ne, 16)
        dt = self.thdof(self.TH.elems)               # (ne, nbt)
        self._du, self._dt = du, dt
        self._idx = {}
        for name, rdof, cdof in [("uu", du, du), ("ut", du, dt),
                                 ("tu", dt, du), ("tt", dt, dt)]:
            rows = np.repeat(rdof, cdof.shape[1], axis=1)
            cols = np.tile(cdof, (1, rdof.shape[1]))
            self._idx[name] = (rows.ravel(), cols.ravel())
        self._all_rows = np.concatenate(
            [self._idx[k][0] for k in ("uu", "ut", "tu", "tt")] + [self._bc_rows])
        self._all_cols = np.concatenate(
            [self._idx[k][1] for k in ("uu", "ut", "tu", "tt")] + [self._bc_cols])

    # ---- state helpers -----------------------------------------------------

    def reference_state(self) -> SystemState:
        a = np.zeros(self.n_total)
        a[self.n_u: self.n_u + self.n_th] = self.base.theta_ref
        return SystemState(a, self)

    def _kinematics(self, a: np.ndarray):
        conn = self.TH.elems
        u = a[: self.n_u].reshape(-1, 2)[conn]               # (ne, nb, 2)
        th = a[self.n_u: self.n_u + self.n_th][conn]         # (ne, nb)
        F = np.einsum("ebi,qbj->eqij", u, self.dN)
        F[..., 0, 0] += 1.0
        F[..., 1, 1] += 1.0
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        if np.any(J <= 0.0):
            bad = np.unique(np.nonzero(np.any(J <= 0.0, axis=1))[0])
            raise InvertedElementError(bad)
        theta_q = np.einsum("eb,qb->eq", th, self.N)
        grad_th = np.einsum("eb,qbi->eqi", th, self.dN)
        return u, th, Kinematics(F, theta_q, grad_th)

    def material_at(self, zbar_q) -> "MaterialPoint":
        zbar_q = np.broadcast_to(np.asarray(zbar_q, dtype=float),
                                 (self.mesh.n_elems, self.rule.n_points))
        return interpolate(zbar_q, self.base, self.ersatz)

    def density_at_qp(self, zeta_nodal: np.ndarray) -> np.ndarray:
        """Sample a nodal bilinear density at the cell quadrature points."""
        return np.einsum("eb,qb->eq", zeta_nodal[self.Q1.elems], self.N1)

    def step_limit(self, a: np.ndarray, da: np.ndarray) -> float:
        """Largest step s keeping det(F(a + s*da)) positive everywhere.

        The determinant is quadratic in s at each quadrature point; the
        smallest positive root over all points bounds the admissible
        update.  Returns inf when the direction never inverts.
        """
        conn = self.TH.elems
        u = a[: self.n_u].reshape(-1, 2)[conn]
        du = da[: self.n_u].reshape(-1, 2)[conn]
        F = np.einsum("ebi,qbj->eqij", u, self.dN)
        F[..., 0, 0] += 1.0
        F[..., 1, 1] += 1.0
        dF = np.einsum("ebi,qbj->eqij", du, self.dN)
        c0 = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        c1 = (F[..., 0, 0] * dF[..., 1, 1] + dF[..., 0, 0] * F[..., 1, 1]
              - F[..., 0, 1] * dF[..., 1, 0] - dF[..., 0, 1] * F[..., 1, 0])
        c2 = dF[..., 0, 0] * dF[..., 1, 1] - dF[..., 0, 1] * dF[..., 1, 0]

        s_max = np.inf
        lin = np.abs(c2) <= 1e-12 * (np.abs(c1) + np.abs(c0))
        neg = lin & (c1 < 0)
        if np.any(neg):
            s_max = min(s_max, float((-c0[neg] / c1[neg]).min()))
        quad = ~lin
        if np.any(quad):
            disc = c1[quad] ** 2 - 4.0 * c2[quad] * c0[quad]
            real = disc >= 0.0
            if np.any(real):
                sq = np.sqrt(disc[real])
                den = 2.0 * c2[quad][real]
                roots = np.concatenate([(-c1[quad][real] - sq) / den,
                                        (-c1[quad][real] + sq) / den])
                pos = roots[roots > 0]
                if pos.size:
                    s_max = min(s_max, float(pos.min()))
        return s_max

    # ---- assembly ----------------------------------------------------------

    def assemble(self, a: np.ndarray, zbar_q, t: float,
                 want_matrix: bool = True) -> GlobalSystem:
        u, th, kin = self._kinematics(a)
        mp = self.material_at(zbar_q)
        P = pk1_stress(kin, mp)
        hf = heat_flux(kin, mp)
        w = self.wq

        Ru = np.einsum("q,eqcj,qbj->ebc", w, P, self.dN)
        Ru += np.einsum("ab,ebc->eac", self.Kreg, u)
        Rt = -np.einsum("q,eqi,qbi->eb", w, hf.q, self.dN)

        R = np.zeros(self.n_total)
        np.add.at(R, self._du.ravel(), Ru.reshape(len(Ru), -1).ravel())
        np.add.at(R, self._dt.ravel(), Rt.ravel())
        R += self._K_bc @ a - self.boundary_load(t)

        if not want_matrix:
            return GlobalSystem(R)

        tan = material_tangents(kin, mp)
        tmp = np.einsum("eqcjdl,qpl->eqcjdp", tan.dP_dF, self.dN)
        Kuu = np.einsum("q,qbj,eqcjdp->ebcpd", w, self.dN, tmp)
        Kuu += self.Kreg[None, :, None, :, None] * np.eye(2)[None, None, :, None, :]
        Kut = np.einsum("q,qbj,eqcj,qp->ebcp", w, self.dN, tan.dP_dtheta, self.N)
        Ktu = -np.einsum("q,qbi,eqidl,qpl->ebpd", w, self.dN, hf.dq_dF, self.dN)
        Ktt = -np.einsum("q,qbi,eqij,qpj->ebp", w, self.dN, hf.dq_dgrad, self.dN)

        ne = self.mesh.n_elems
        data = np.concatenate([Kuu.reshape(ne, -1).ravel(),
                               Kut.reshape(ne, -1).ravel(),
                               Ktu.reshape(ne, -1).ravel(),
                               Ktt.reshape(ne, -1).ravel(),
                               self._bc_vals])
        K = sp.coo_matrix((data, (self._all_rows, self._all_cols)),
                          shape=(self.n_total, self.n_total)).tocsc()
        return GlobalSystem(R, K)

    def total_energy(self, a: np.ndarray, zbar_q) -> float:
        """int Psi dV plus the Hessian penalty (mechanical part of the
        potential; used for gradient-consistency checks)."""
        u, th, kin = self._kinematics(a)
        mp = self.material_at(zbar_q)
        psi = strain_energy(kin, mp)
        d2u = np.einsum("ebc,qbm->eqcm", u, self.d2N)
        reg = 0.5 * self.k_r * np.einsum(
            "eqcm,eqcm,m->eq", d2u, d2u, np.array([1.0, 1.0, 2.0]))
        return float(np.einsum("q,eq->", self.wq, psi + reg))

    def design_partial(self, a: np.ndarray, mu: np.ndarray, zbar_q) -> np.ndarray:
        """d(mu^T R)/d(zbar) per quadrature point, shape (ne, nq).

        The Hessian penalty is not interpolated, so only P (through K, G,
        K alpha) and q (through kappa) contribute.
        """
        _, _, kin = self._kinematics(a)
        mp = self.material_at(zbar_q)
        tan = material_tangents(kin, mp)
        hf = heat_flux(kin, mp)
        conn = self.TH.elems
        mu_u = mu[: self.n_u].reshape(-1, 2)[conn]
        mu_t = mu[self.n_u: self.n_u + self.n_th][conn]
        gmu_u = np.einsum("ebc,qbj->eqcj", mu_u, self.dN)
        gmu_t = np.einsum("eb,qbi->eqi", mu_t, self.dN)
        dP = (tan.dP_dK * mp.dK[..., None, None]
              + tan.dP_dG * mp.dG[..., None, None]
              + tan.dP_dKalpha * mp.dKalpha[..., None, None])
        dq = hf.dq_dkappa * mp.dkappa[..., None]
        return self.wq[None, :] * (np.einsum("eqcj,eqcj->eq", gmu_u, dP)
                                   - np.einsum("eqi,eqi->eq", gmu_t, dq))

    # ---- reactions ---------------------------------------------------------

    def reaction_flux(self, state: SystemState, tag: str):
        """Total and average normal heat flux (n.q) through a temperature
        Dirichlet tag, integrated from its multiplier field."""
        g = self.group("temp", tag)
        total = g.scale * float(g.all_weights @ state.a[g.rhs_dofs])
        return total, total / self.mesh.tag_length(tag)

    def reaction_force(self, state: SystemState, tag: str) -> np.ndarray:
        """Total multiplier force per component on a mechanical tag."""
        out = np.zeros(2)
        for comp in (0, 1):
            key = ("mech", tag, comp)
            if key in self._groups_by_key:
                g = self._groups_by_key[key]
                out[comp] = g.scale * (g.all_weights @ state.a[g.rhs_dofs])
        return out


# ---- spec-level functional wrappers ----------------------------------------

def assemble_residual(asm: Assembler, state: SystemState, zbar_q, t: float) -> np.ndarray:
    return asm.assemble(state.a, zbar_q, t, want_matrix=False).residual


def assemble_tangent(asm: Assembler, state: SystemState, zbar_q, t: float) -> GlobalSystem:
    return asm.assemble(state.a, zbar_q, t, want_matrix=True)


def reaction_flux(asm: Assembler, state: SystemState, tag: str):
    return asm.reaction_flux(state, tag)


def average_constraint_rows(asm: Assembler):
    """Scalar average-value constraints (tag, component, dof, weights)."""
    return list(asm.scalars)
