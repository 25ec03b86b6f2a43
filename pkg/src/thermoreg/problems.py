"""Thermo-mechanical regulator problems and the design-optimization driver.

Contains the 1D series-resistance rod model used for validation, the
switch/diode/triode objective definitions, geometry builders for the
benchmark domains, response sweeps, and the staggered optimization loop
(filter, project, solve load cases, adjoint gradient, moving-asymptotes
update).
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import Assembler, BoundaryConditions
from .material import BaseMaterial, ErsatzScaling
from .mesh import MeshGrid, build_structured_mesh
from .mma import MMAState, mma_update
from .nlsolve import NewtonOptions, continuation_solve
from .regularize import (
    DesignFilter,
    ProjectionParams,
    beta_schedule,
    default_filter_radius,
    heaviside,
)
from .sensitivity import adjoint_solve, design_gradient, volume_gradient

__all__ = [
    "Rod1DParams",
    "Rod1DSolution",
    "solve_rod_1d",
    "contact_resistance",
    "LoadCase",
    "RegulatorProblem",
    "SwitchObjective",
    "DiodeObjective",
    "TriodeObjective",
    "volume_constraint",
    "build_switch_problem",
    "build_diode_problem",
    "build_triode_problem",
    "build_rod_problem",
    "RodProblem",
    "solve_case",
    "response_sweep",
    "OptimizeConfig",
    "OptimizeResult",
    "optimize",
]


# ---------------------------------------------------------------------------
# 1D analytical rod: conduction through two solid branches, a contact
# resistance at mid-length, and convection at the far end
# ---------------------------------------------------------------------------

@dataclass
class Rod1DParams:
    """Series model: conducting length L_c, contact resistance R_th at
    L_c/2, convection (h, theta_inf) at X=0, prescribed theta_bar at X=L_c."""

    L_c: float
    kappa: float
    h: float
    theta_inf: float
    theta_bar: float
    R_th: float = 0.0


@dataclass
class Rod1DSolution:
    A: float
    B1: float
    B2: float
    params: Rod1DParams

    def temperature(self, X):
        """Piecewise-linear profile with a jump at L_c/2."""
        X = np.asarray(X, float)
        p = self.params
        lo = -(self.A * X + self.B1) / p.kappa
        hi = -(self.A * X + self.B2) / p.kappa
        return np.where(X <= p.L_c / 2.0, lo, hi)

    @property
    def flux(self):
        """Heat flux density along +X (negative: flows toward X=0)."""
        return self.A

    @property
    def jump(self):
        """Temperature jump across the contact, hot side minus cold side."""
        return -self.params.R_th * self.A


def solve_rod_1d(params: Rod1DParams) -> Rod1DSolution:
    """Closed-form steady profile of the series rod model."""
    p = params
    if p.L_c <= 0 or p.kappa <= 0 or p.h <= 0:
        raise ValueError("L_c, kappa and h must be positive")
    A = (p.theta_inf - p.theta_bar) / (p.L_c / p.kappa + p.R_th + 1.0 / p.h)
    B1 = p.kappa * (A / p.h - p.theta_inf)
    B2 = -p.kappa * p.theta_bar - A * p.L_c
    return Rod1DSolution(A, B1, B2, p)


def contact_resistance(L_c_v: float, delta_kappa: float, kappa: float) -> float:
    """Thermal resistance of a squeezed gap of deformed thickness L_c_v."""
    if L_c_v < 0 or delta_kappa <= 0 or kappa <= 0:
        raise ValueError("inputs must be positive (L_c_v >= 0)")
    return L_c_v / (delta_kappa * kappa)


# ---------------------------------------------------------------------------
# load cases and problem container
# ---------------------------------------------------------------------------

@dataclass
class LoadCase:
    """Declarative record of one loading state (full values at t=1)."""

    index: int
    temps: dict = field(default_factory=dict)   # tag -> relative temperature
    disps: dict = field(default_factory=dict)   # tag -> (ux, uy), None = free
    stops: tuple = ()


@dataclass
class RegulatorProblem:
    name: str
    mesh: MeshGrid
    assemblers: list
    cases: list
    objective: object
    design_filter: DesignFilter
    projection: ProjectionParams
    base: BaseMaterial
    ersatz: ErsatzScaling
    z0: np.ndarray
    frozen: np.ndarray
    volume_fraction: float = 0.4
    dt_init: float = 0.05

    @property
    def domain_area(self):
        return self.mesh.width * self.mesh.height

    def density_at_qp(self, z, beta):
        """Filter + project a raw design to quadrature-point densities."""
        zeta = self.design_filter.apply(z)
        zeta_q = self.assemblers[0].density_at_qp(zeta)
        zbar_q, _ = heaviside(zeta_q, beta, self.projection.eta)
        return zeta, zbar_q


# ---------------------------------------------------------------------------
# objectives: linear and quadratic functionals of the boundary-flux
# multipliers at the terminal tags
# ---------------------------------------------------------------------------

def _flux_total(assembler, state, tag):
    total, _ = assembler.reaction_flux(state, tag)
    return total


def _linear_partial(assembler, coeff, tag, out):
    """Add coeff * d(int lambda dS)/da onto the state-partial vector.

    The stored multiplier dofs carry the physical flux divided by the
    group scale, so the chain rule brings one factor of the scale in.
    """
    g = assembler.group("temp", tag)
    np.add.at(out, g.rhs_dofs, coeff * g.scale * g.all_weights)


class SwitchObjective:
    """Low transmission at target 1, high transmission at target 2.

    C = int_anode (-w1 lambda^(1) + w2 lambda^(2)) dS, with lambda = n.q
    negative where heat enters, so minimizing C suppresses case-1 inflow
    and rewards case-2 inflow.
    """

    n_cases = 2

    def __init__(self, tag="anode", w1=2e3, w2=1e3):
        self.tag = tag
        self.w1 = float(w1)
        self.w2 = float(w2)

    def value(self, assemblers, states):
        q1 = _flux_total(assemblers[0], states[0], self.tag)
        q2 = _flux_total(assemblers[1], states[1], self.tag)
        return -self.w1 * q1 + self.w2 * q2

    def state_partial(self, case, assembler, state):
        out = np.zeros(assembler.n_total)
        coeff = -self.w1 if case == 0 else self.w2
        _linear_partial(assembler, coeff, self.tag, out)
        return out


class DiodeObjective:
    """Forward transmission minus reverse blocking.

    C = w1 int_anode (lambda^(1) + lambda^(2)) dS: case 1 heats the anode
    (inflow, lambda < 0, rewarded), case 2 heats the cathode (anode
    outflow, lambda > 0, penalized).
    """

    n_cases = 2

    def __init__(self, tag="anode", w1=1e3):
        self.tag = tag
        self.w1 = float(w1)

    def value(self, assemblers, states):
        q1 = _flux_total(assemblers[0], states[0], self.tag)
        q2 = _flux_total(assemblers[1], states[1], self.tag)
        return self.w1 * (q1 + q2)

    def state_partial(self, case, assembler, state):
        out = np.zeros(assembler.n_total)
        _linear_partial(assembler, self.w1, self.tag, out)
        return out


class TriodeObjective:
    """Gate-controlled transmission with a gate heat-loss penalty.

    C = (w1/|anode|) int_anode (-lambda^(1) + lambda^(2)) dS
      + (w2/|gate|) int_gate ((lambda^(1))^2 + (lambda^(2))^2) dS.
    """

    n_cases = 2

    def __init__(self, tag="anode", gate_tag="gate", w1=1e3, w2=1e3):
        self.tag = tag
        self.gate_tag = gate_tag
        self.w1 = float(w1)
        self.w2 = float(w2)

    def _norms(self, assembler):
        s1 = assembler.mesh.tag_length(self.tag)
        s3 = assembler.mesh.tag_length(self.gate_tag)
        return s1, s3

    def _gate_lambda(self, assembler, state):
        g = assembler.group("temp", self.gate_tag)
        nodes, M = assembler.tag_trace_mass(self.gate_tag)
        lam = g.scale * state.a[g.rhs_dofs]   # physical flux density
        return g, nodes, M, lam

    def value(self, assemblers, states):
        s1, s3 = self._norms(assemblers[0])
        q1 = _flux_total(assemblers[0], states[0], self.tag)
        q2 = _flux_total(assemblers[1], states[1], self.tag)
        out = self.w1 / s1 * (-q1 + q2)
        for assembler, state in zip(assemblers, states):
            _, _, M, lam = self._gate_lambda(assembler, state)
            out += self.w2 / s3 * (lam @ M @ lam)
        return out

    def state_partial(self, case, assembler, state):
        out = np.zeros(assembler.n_total)
        s1, s3 = self._norms(assembler)
        coeff = -self.w1 / s1 if case == 0 else self.w1 / s1
        _linear_partial(assembler, coeff, self.tag, out)
        if self.w2:
            g, _, M, lam = self._gate_lambda(assembler, state)
            np.add.at(out, g.rhs_dofs, 2.0 * self.w2 / s3 * g.scale * (M @ lam))
        return out


def volume_constraint(assembler, zeta_nodal, beta, eta_d, v_star):
    """Dilated-volume constraint g = int H_{beta,eta_d}(zeta) dV - V*.

    Returns (g, dg/dzeta at the filtered-field nodes).
    """
    zeta_q = assembler.density_at_qp(zeta_nodal)
    H, dH = heaviside(zeta_q, beta, eta_d)
    g = float(np.sum(H * assembler.wq[None, :]) - v_star)
    contrib = np.einsum("eq,q,qb->eb", dH, assembler.wq, assembler.N1)
    dg = np.zeros(assembler.Q1.n_nodes)
    np.add.at(dg, assembler.Q1.elems, contrib)
    return g, dg


# ---------------------------------------------------------------------------
# geometry builders
# ---------------------------------------------------------------------------

def _region_mask(mesh, x0, x1, y0=-np.inf, y1=np.inf):
    c = mesh.elem_centers()
    return ((c[:, 0] >= x0) & (c[:, 0] <= x1)
            & (c[:, 1] >= y0) & (c[:, 1] <= y1))


def _half_domain_problem(name, objective, cases_temps, nx, ny, *,
                         width=0.060, height=0.030, delta_kappa,
                         projection, filter_radius, volume_fraction=0.4,
                         base=None, gray=0.3):
    """Shared geometry for switch and diode: half a symmetric domain.

    The anode is the left edge and the cathode the right edge, both
    mechanically clamped solid terminals (frozen solid columns inboard of
    each).  The bottom edge is the symmetry plane.  A thin designable
    void strip near the cathode seeds the contact gap.
    """
    base = base or BaseMaterial()
    ersatz = ErsatzScaling(delta_kappa=delta_kappa)
    tags = [
        ("anode", lambda x, y: x < 1e-12),
        ("cathode", lambda x, y, w=width: x > w - 1e-12),
        ("symmetry", lambda x, y: y < 1e-12),
    ]
    mesh = build_structured_mesh(nx, ny, width, height, tags)

    solid = (_region_mask(mesh, 0.0, 0.05 * width)
             | _region_mask(mesh, 0.95 * width, width))
    void = _region_mask(mesh, 0.89 * width, 0.92 * width)
    z0 = np.full(mesh.n_elems, gray)
    z0[void] = 1e-4
    z0[solid] = 1.0
    frozen = solid.copy()

    assemblers = []
    cases = []
    for i, (t_anode, t_cathode) in enumerate(cases_temps):
        bcs = BoundaryConditions()
        bcs.fix_displacement("anode", ux=0.0, uy=0.0)
        bcs.fix_displacement("cathode", ux=0.0, uy=0.0)
        bcs.fix_displacement("symmetry", uy=0.0)
        bcs.prescribe_temperature("anode", t_anode)
        bcs.prescribe_temperature("cathode", t_cathode)
        assemblers.append(Assembler(mesh, bcs, base, ersatz, h_char=height))
        cases.append(LoadCase(i, temps={"anode": t_anode,
                                        "cathode": t_cathode}))

    radius = (default_filter_radius(mesh) if filter_radius is None
              else filter_radius)
    return RegulatorProblem(
        name=name, mesh=mesh, assemblers=assemblers, cases=cases,
        objective=objective, design_filter=DesignFilter(mesh, radius),
        projection=projection, base=base, ersatz=ersatz,
        z0=z0, frozen=frozen, volume_fraction=volume_fraction)


def build_switch_problem(nx=120, ny=60, *, theta_targets=((200.0, 0.0),
                                                          (400.0, 0.0)),
                         weights=(2e3, 1e3), delta_kappa=1e-4,
                         projection=None, filter_radius=None, **kw):
    """Thermal switch: block at the first target, conduct at the second."""
    projection = projection or ProjectionParams()
    objective = SwitchObjective("anode", *weights)
    return _half_domain_problem("switch", objective, theta_targets,
                                nx, ny, delta_kappa=delta_kappa,
                                projection=projection,
                                filter_radius=filter_radius, **kw)


def build_diode_problem(nx=120, ny=60, *, theta_targets=((400.0, 0.0),
                                                         (0.0, 400.0)),
                        w1=1e3, delta_kappa=1e-3,
                        projection=None, filter_radius=None, **kw):
    """Thermal diode: conduct forward, block in reverse."""
    projection = projection or ProjectionParams()
    objective = DiodeObjective("anode", w1)
    return _half_domain_problem("diode", objective, theta_targets,
                                nx, ny, delta_kappa=delta_kappa,
                                projection=projection,
                                filter_radius=filter_radius, **kw)


def build_triode_problem(nx=160, ny=80, *, width=0.080, height=0.040,
                         theta_targets=((380.0, 0.0, 50.0),
                                        (380.0, 0.0, 100.0)),
                         weights=(1e3, 1e3), delta_kappa=1e-4,
                         gate_extent=(0.4375, 0.5625),
                         projection=None, filter_radius=None,
                         volume_fraction=0.4, base=None, gray=0.3):
    """Thermal triode: gate temperature modulates anode-cathode flux.

    Full rectangular domain; anode/cathode on the left/right edges, gate
    pad centered on the bottom edge (extent as fractions of the width).
    """
    base = base or BaseMaterial()
    ersatz = ErsatzScaling(delta_kappa=delta_kappa)
    projection = projection or ProjectionParams(beta_max=8.0)
    gx0, gx1 = gate_extent[0] * width, gate_extent[1] * width
    tags = [
        ("anode", lambda x, y: x < 1e-12),
        ("cathode", lambda x, y, w=width: x > w - 1e-12),
        ("gate", lambda x, y, a=gx0, b=gx1: y < 1e-12 and a <= x <= b),
    ]
    mesh = build_structured_mesh(nx, ny, width, height, tags)

    solid = (_region_mask(mesh, 0.0, 0.0375 * width)
             | _region_mask(mesh, 0.9625 * width, width)
             | _region_mask(mesh, gx0, gx1, 0.0, 0.075 * height))
    void = _region_mask(mesh, 0.89 * width, 0.9125 * width)
    z0 = np.full(mesh.n_elems, gray)
    z0[void] = 1e-4
    z0[solid] = 1.0
    frozen = solid.copy()

    assemblers = []
    cases = []
    for i, (t_a, t_c, t_g) in enumerate(theta_targets):
        bcs = BoundaryConditions()
        bcs.fix_displacement("anode", ux=0.0, uy=0.0)
        bcs.fix_displacement("cathode", ux=0.0, uy=0.0)
        bcs.fix_displacement("gate", ux=0.0, uy=0.0)
        bcs.prescribe_temperature("anode", t_a)
        bcs.prescribe_temperature("cathode", t_c)
        bcs.prescribe_temperature("gate", t_g)
        assemblers.append(Assembler(mesh, bcs, base, ersatz, h_char=height))
        cases.append(LoadCase(i, temps={"anode": t_a, "cathode": t_c,
                                        "gate": t_g}))

    radius = (default_filter_radius(mesh) if filter_radius is None
              else filter_radius)
    return RegulatorProblem(
        name="triode", mesh=mesh, assemblers=assemblers, cases=cases,
        objective=TriodeObjective("anode", "gate", *weights),
        design_filter=DesignFilter(mesh, radius), projection=projection,
        base=base, ersatz=ersatz, z0=z0, frozen=frozen,
        volume_fraction=volume_fraction)


# ---------------------------------------------------------------------------
# rod benchmark: thirds solid/void/solid, compressed end, heated end
# ---------------------------------------------------------------------------

@dataclass
class RodProblem:
    """Compression rod with a closing gap; forward analysis only."""

    mesh: MeshGrid
    assembler: Assembler
    z: np.ndarray
    mode: str                 # "sharp" or "diffuse"
    design_filter: object     # None when sharp
    u_bar: float
    theta_bar: float
    t_thermal: float          # ramp fraction spent heating before pushing
    base: BaseMaterial
    ersatz: ErsatzScaling

    def density_at_qp(self):
        if self.mode == "sharp":
            nq = self.assembler.wq.size
            return np.repeat(self.z[:, None], nq, axis=1)
        zeta = np.clip(self.design_filter.apply(self.z), 0.0, 1.0)
        return self.assembler.density_at_qp(zeta)

    def t_of_u(self, u):
        """Continuation parameter at which the end displacement equals u."""
        if self.u_bar == 0.0:
            return self.t_thermal
        return self.t_thermal + (1.0 - self.t_thermal) * (u / self.u_bar)


def build_rod_problem(nx=120, ny=20, *, length=0.06, height=0.01,
                      u_bar=-0.03, delta_kappa=1e-4, mode="sharp",
                      filter_radius=None, h_conv=1000.0, theta_inf=20.0,
                      theta_bar_abs=200.0, t_thermal=0.1, base=None):
    """Rod in thirds (solid, void, solid) compressed axially.

    The left end is held (zero normal displacement, zero average
    transverse motion) and cooled by convection; the right end is pushed
    to ``u_bar`` and held at ``theta_bar_abs``.  The ramp first brings the
    temperature up over t in [0, t_thermal], then pushes.
    """
    base = base or BaseMaterial(alpha=0.0)
    ersatz = ErsatzScaling(delta_kappa=delta_kappa)
    tags = [("left", lambda x, y: x < 1e-12),
            ("right", lambda x, y, L=length: x > L - 1e-12)]
    mesh = build_structured_mesh(nx, ny, length, height, tags)

    theta_rel = theta_bar_abs - base.theta_ref

    def temp_ramp(t):
        return theta_rel * min(t / t_thermal, 1.0)

    def disp_ramp(t):
        return u_bar * max(0.0, (t - t_thermal) / (1.0 - t_thermal))

    bcs = BoundaryConditions()
    bcs.fix_displacement("left", ux=lambda t: 0.0)
    bcs.zero_average("left", comp=1)
    bcs.convection("left", h_conv, theta_inf)
    bcs.fix_displacement("right", ux=disp_ramp, uy=lambda t: 0.0)
    bcs.prescribe_temperature("right", temp_ramp)
    assembler = Assembler(mesh, bcs, base, ersatz, h_char=height)

    z = np.ones(mesh.n_elems)
    z[_region_mask(mesh, length / 3.0, 2.0 * length / 3.0)] = 0.0

    dfilter = None
    if mode == "diffuse":
        radius = (default_filter_radius(mesh) if filter_radius is None
                  else filter_radius)
        dfilter = DesignFilter(mesh, radius)
    elif mode != "sharp":
        raise ValueError("mode must be 'sharp' or 'diffuse'")

    return RodProblem(mesh, assembler, z, mode, dfilter, u_bar,
                      theta_rel, t_thermal, base, ersatz)


# ---------------------------------------------------------------------------
# forward solves and response sweeps
# ---------------------------------------------------------------------------

def solve_case(assembler, zbar_q, *, dt_init=0.05, stops=(), on_step=None,
               options=None):
    """Continuation solve of one load case from the reference state."""
    state = assembler.reference_state()
    result = continuation_solve(assembler, state, zbar_q, options=options,
                                dt_init=dt_init, stops=stops,
                                on_step=on_step)
    return state, result


def response_sweep(assembler, zbar_q, stops, tags, *, dt_init=0.05,
                   options=None, extra=None):
    """Record terminal fluxes along a continuation path.

    Returns the continuation result; its history holds, per accepted stop,
    a dict {tag: (total, average)} plus the output of ``extra(t, state)``
    merged in when given.
    """
    stops = np.asarray(stops, float)

    def record(t, state):
        if not np.any(np.isclose(t, stops, atol=1e-12)) and t != 1.0:
            return None
        row = {tag: assembler.reaction_flux(state, tag) for tag in tags}
        if extra is not None:
            row.update(extra(t, state))
        return row

    return solve_case(assembler, zbar_q, dt_init=dt_init, stops=stops,
                      on_step=record, options=options)


# ---------------------------------------------------------------------------
# optimization driver
# ---------------------------------------------------------------------------

@dataclass
class OptimizeConfig:
    max_iter: int = 500
    design_tol: float = 1e-3
    dt_init: float = None          # default: problem.dt_init
    newton: NewtonOptions = None
    log: callable = None           # row dict -> None
    snapshot: callable = None      # (iteration, problem, z, zeta, states)
    snapshot_every: int = 0


@dataclass
class OptimizeResult:
    converged: bool
    iterations: int
    z: np.ndarray
    zeta: np.ndarray
    objective: float
    constraint: float
    history: list
    states: list
    message: str = ""


def optimize(problem: RegulatorProblem, config: OptimizeConfig = None):
    """Staggered design loop for a regulator problem.

    Per iteration: filter and project the design at the scheduled
    sharpness, solve every load case by continuation from the reference
    state, evaluate objective and dilated-volume constraint, solve the
    adjoints, chain the design gradient, and take a moving-asymptotes
    step on the unfrozen variables.  Stops at the iteration budget or
    when the design change drops below ``design_tol`` after the
    projection has reached its final sharpness.
    """
    config = config or OptimizeConfig()
    dt_init = config.dt_init or problem.dt_init
    proj = problem.projection
    v_star = problem.volume_fraction * problem.domain_area

    z = problem.z0.copy()
    free = ~problem.frozen
    mma = MMAState(int(free.sum()))
    history = []
    states = []
    message = ""
    converged = False

    it = 0
    for it in range(1, config.max_iter + 1):
        beta = beta_schedule(it - 1, proj)
        zeta = problem.design_filter.apply(z)
        zeta_q = problem.assemblers[0].density_at_qp(zeta)
        zbar_q, _ = heaviside(zeta_q, beta, proj.eta)

        states = []
        failed = None
        for assembler in problem.assemblers:
            state, result = solve_case(assembler, zbar_q, dt_init=dt_init,
                                       options=config.newton)
            if not result.converged:
                state, result = solve_case(assembler, zbar_q,
                                           dt_init=dt_init / 2.0,
                                           options=config.newton)
            if not result.converged:
                failed = result
                break
            states.append(state)
        if failed is not None:
            message = "load case failed at iteration %d: %s" % (
                it, failed.message)
            break

        C = problem.objective.value(problem.assemblers, states)
        g, dg_dzeta = volume_constraint(problem.assemblers[0], zeta, beta,
                                        proj.eta_dilated, v_star)

        adjoint_cases = []
        for case, (assembler, state) in enumerate(
                zip(problem.assemblers, states)):
            dC_da = problem.objective.state_partial(case, assembler, state)
            mu = adjoint_solve(assembler, state, zbar_q, dC_da)
            adjoint_cases.append((assembler, state, mu))
        dC_dz = design_gradient(adjoint_cases, zeta, beta, proj.eta,
                                problem.design_filter)
        dg_dz = problem.design_filter.chain_gradient(dg_dzeta)

        z_free = mma_update(mma, z[free], dC_dz[free],
                            np.array([g]), dg_dz[None, free])
        z_new = z.copy()
        z_new[free] = z_free
        max_change = float(np.abs(z_new - z).max())
        z = z_new

        row = {"iteration": it, "objective": C, "constraint": g,
               "beta": beta, "max_change": max_change}
        history.append(row)
        if config.log is not None:
            config.log(row)
        if (config.snapshot is not None and config.snapshot_every
                and it % config.snapshot_every == 0):
            config.snapshot(it, problem, z, zeta, states)

        if beta >= proj.beta_max and max_change < config.design_tol:
            converged = True
            message = "design change below tolerance"
            break

    zeta = problem.design_filter.apply(z)
    C = history[-1]["objective"] if history else np.nan
    g = history[-1]["constraint"] if history else np.nan
    return OptimizeResult(converged, it, z, zeta, C, g, history, states,
                          message or "iteration budget reached")
