"""Adjoint sensitivities of boundary-flux objectives with respect to design.

The converged coupled system defines the state implicitly; the adjoint
system is the transposed tangent with the objective's state partials as
right-hand side.  The design gradient accumulates, per load case, the
explicit dependence of the residual on the projected density at each
quadrature point, chains it through the projection derivative and the
density interpolation to filtered-field nodes, and finally through the
filter transpose to the per-element design variables.
"""

import numpy as np

from .nlsolve import factorize
from .regularize import heaviside

__all__ = [
    "adjoint_solve",
    "design_gradient",
    "volume_gradient",
    "fd_gradient_check",
]


def adjoint_solve(assembler, state, zbar_q, dC_da, t=1.0, lu=None):
    """Solve the transposed tangent system for one load case.

    Parameters
    ----------
    assembler : Assembler
    state : SystemState
        Converged primal state.
    zbar_q : ndarray
        Projected density at quadrature points used by the primal solve.
    dC_da : (n_total,) ndarray
        Partial of the objective with respect to the state vector.
    t : float
        Load factor of the converged solve.
    lu : optional
        Existing factorization of the tangent at the converged state; a
        fresh one is computed when omitted.

    Returns
    -------
    mu : (n_total,) ndarray
        Adjoint vector, satisfying (dR/da)^T mu = -dC/da.
    """
    if lu is None:
        system = assembler.assemble(state.a, zbar_q, t)
        lu = factorize(system.matrix)
    return lu.solve(-np.asarray(dC_da, float), trans="T")


def _zeta_chain(assembler, zeta_nodal, beta, eta):
    """Quadrature-point density and projection slope for a filtered field."""
    zeta_q = assembler.density_at_qp(zeta_nodal)
    zbar_q, dH_q = heaviside(zeta_q, beta, eta)
    return zeta_q, zbar_q, dH_q


def _scatter_to_nodes(assembler, per_qp):
    """Accumulate a per-(element, point) quantity onto filtered-field nodes."""
    contrib = np.einsum("eq,qb->eb", per_qp, assembler.N1)
    out = np.zeros(assembler.Q1.n_nodes)
    np.add.at(out, assembler.Q1.elems, contrib)
    return out


def design_gradient(cases, zeta_nodal, beta, eta, design_filter):
    """Objective gradient with respect to the raw per-element design.

    Parameters
    ----------
    cases : sequence of (assembler, state, mu)
        One entry per load case, all solved at the same design.
    zeta_nodal : ndarray
        Filtered density at the filter-space nodes.
    beta, eta : float
        Projection sharpness and threshold used by the primal solves.
    design_filter : DesignFilter

    Returns
    -------
    (n_elems,) ndarray
    """
    dC_dzeta = np.zeros_like(zeta_nodal)
    for assembler, state, mu in cases:
        zeta_q, zbar_q, dH_q = _zeta_chain(assembler, zeta_nodal, beta, eta)
        G = assembler.design_partial(state.a, mu, zbar_q)
        dC_dzeta += _scatter_to_nodes(assembler, G * dH_q)
    return design_filter.chain_gradient(dC_dzeta)


def volume_gradient(assembler, zeta_nodal, beta, eta_d, design_filter):
    """Gradient of the dilated-volume measure int H(zeta) dV in design space."""
    zeta_q = assembler.density_at_qp(zeta_nodal)
    _, dH_q = heaviside(zeta_q, beta, eta_d)
    dV_dzeta = _scatter_to_nodes(assembler, assembler.wq[None, :] * dH_q)
    return design_filter.chain_gradient(dV_dzeta)


def fd_gradient_check(evaluate, gradient, z, n_probes=10, dz=1e-6, seed=0,
                      free=None):
    """Central-difference probe of a design gradient.

    Parameters
    ----------
    evaluate : callable z -> float
        Objective evaluation including the full solve chain.
    gradient : (n,) ndarray
        Adjoint gradient at ``z``.
    z : (n,) ndarray
    n_probes : int
        Number of randomly chosen design entries to probe.
    dz : float
        Central-difference step.
    seed : int
    free : ndarray of indices, optional
        Candidate entries (default all).

    Returns
    -------
    list of dict
        One record per probe: element, fd, adjoint, rel_err (or an
        ``error`` message when a perturbed solve failed).
    """
    rng = np.random.default_rng(seed)
    candidates = np.arange(z.size) if free is None else np.asarray(free)
    picks = rng.choice(candidates, size=min(n_probes, candidates.size),
                       replace=False)
    report = []
    for e in picks:
        zp, zm = z.copy(), z.copy()
        zp[e] += dz
        zm[e] -= dz
        try:
            fd = (evaluate(zp) - evaluate(zm)) / (2 * dz)
        except RuntimeError as err:
            report.append({"element": int(e), "error": str(err)})
            continue
        scale = max(abs(fd), abs(gradient[e]), 1e-30)
        report.append({
            "element": int(e),
            "fd": fd,
            "adjoint": gradient[e],
            "rel_err": abs(fd - gradient[e]) / scale,
        })
    return report
