"""Newton solution of the coupled equilibrium system and load continuation.

The assembled system is an unsymmetric sparse saddle point problem; it is
factorized with SuperLU.  ``newton_solve`` runs a Newton iteration at a
fixed load factor, with two safeguards for the violently nonlinear
contact-closure regime: each update is clamped to keep every element
determinant positive, and backtracked until the residual norm decreases.
Both are inactive on smooth steps, where the full update is taken.
``continuation_solve`` ramps the load factor from zero to one with
adaptive sub-stepping, halving the increment whenever Newton fails to
converge.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import InvertedElementError

__all__ = [
    "NewtonOptions",
    "NewtonResult",
    "ContinuationResult",
    "SingularSystemError",
    "newton_solve",
    "continuation_solve",
    "factorize",
]


class SingularSystemError(RuntimeError):
    """Raised when the tangent matrix cannot be factorized."""


@dataclass
class NewtonOptions:
    """Convergence controls for the Newton loop and load stepping.

    Convergence is declared when the residual norm drops below
    ``tol_rel`` times the first residual norm of the current solve plus
    ``tol_abs``.  The absolute floor covers warm starts whose first
    residual is already at rounding level.  ``dt_min`` is the smallest
    continuation increment tried before the ramp is abandoned; the
    default is small because passing through contact closure can demand
    increments around 1e-5 of the ramp.

    ``step_guard`` scales each Newton update down just enough to keep
    every element determinant positive (the fraction of the distance to
    the nearest inversion that may be travelled).  Near the solution the
    full update never approaches an inversion, so the clamp is inactive
    there and quadratic convergence is unaffected.  Set to 0 to disable.
    """

    tol_rel: float = 1e-8
    tol_abs: float = 1e-8
    max_iter: int = 25
    divergence_factor: float = 1e6
    dt_min: float = 1e-7
    step_guard: float = 0.8

    def __post_init__(self):
        if self.tol_rel <= 0 or self.tol_abs <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 <= self.step_guard < 1:
            raise ValueError("step_guard must lie in [0, 1)")


@dataclass
class NewtonResult:
    converged: bool
    iterations: int
    residual_norm: float
    residual_norm0: float
    norms: list = field(default_factory=list)
    message: str = ""


@dataclass
class ContinuationResult:
    converged: bool
    t: float
    steps: int
    newton_iterations: int
    history: list = field(default_factory=list)
    message: str = ""


def factorize(matrix):
    """LU-factorize a sparse tangent matrix, raising on singularity."""
    try:
        return spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as err:
        raise SingularSystemError(str(err)) from err


def newton_solve(assembler, state, zbar, t, options=None):
    """Newton iteration at fixed load factor ``t``.

    Parameters
    ----------
    assembler : Assembler
        Provides ``assemble(a, zbar, t)``.
    state : SystemState
        Start guess; updated in place on success and rolled back on failure.
    zbar : float or ndarray
        Filtered, projected density at the quadrature points.
    t : float
        Load factor passed to the boundary data ramps.
    options : NewtonOptions, optional

    Returns
    -------
    NewtonResult
    """
    opts = options or NewtonOptions()
    a0 = state.a.copy()
    norm0 = None
    norm = np.inf
    norms = []
    try:
        for it in range(opts.max_iter + 1):
            system = assembler.assemble(state.a, zbar, t)
            norm = np.linalg.norm(system.residual)
            norms.append(norm)
            if norm0 is None:
                norm0 = norm
            if norm <= opts.tol_rel * norm0 + opts.tol_abs:
                return NewtonResult(True, it, norm, norm0, norms)
            if not np.isfinite(norm) or norm > opts.divergence_factor * (norm0 + 1.0):
                break
            # near contact closure the iteration can enter a limit cycle;
            # cut the solve short once 8 iterations pass without a 4x
            # reduction, so the load-step halving reacts sooner
            if len(norms) >= 10 and norms[-1] > 0.25 * norms[-9]:
                state.a[:] = a0
                return NewtonResult(False, it, norm, norm0, norms,
                                    "stalled (no progress over 8 iterations)")
            if it == opts.max_iter:
                break
            lu = factorize(system.matrix)
            da = lu.solve(system.residual)
            s = 1.0
            if opts.step_guard > 0:
                s = min(1.0, opts.step_guard * assembler.step_limit(state.a, -da))
            # backtrack on the residual norm: near contact closure the
            # effective conductivity varies so violently that the full
            # step overshoots; accept the first fraction with sufficient
            # decrease, else the best fraction seen
            best_s, best_norm = s, np.inf
            for _ in range(12):
                try:
                    trial = assembler.assemble(state.a - s * da, zbar, t,
                                               want_matrix=False)
                    trial_norm = np.linalg.norm(trial.residual)
                except InvertedElementError:
                    trial_norm = np.inf
                if trial_norm < best_norm:
                    best_s, best_norm = s, trial_norm
                if trial_norm <= (1.0 - 1e-4 * s) * norm:
                    break
                s *= 0.5
            state.a -= best_s * da
    except (InvertedElementError, SingularSystemError) as err:
        state.a[:] = a0
        return NewtonResult(False, 0, np.inf, norm0 or np.inf, norms, str(err))
    state.a[:] = a0
    return NewtonResult(False, opts.max_iter, norm, norm0, norms,
                        "no convergence in %d iterations" % opts.max_iter)


def continuation_solve(assembler, state, zbar, options=None, dt_init=0.05,
                       dt_min=None, stops=(), on_step=None):
    """Ramp the load factor from 0 to 1 with adaptive sub-stepping.

    The increment is halved after a failed Newton solve and grown by 1.5
    after a success (never past ``dt_init``).  Every value in ``stops`` is
    hit exactly, as is t = 1.  ``on_step(t, state)`` is called after each
    accepted step; its return value, if not None, is appended to
    ``result.history`` as ``(t, value)``.

    The state is updated in place; on failure it holds the last accepted
    step and ``result.t`` reports how far the ramp got.
    """
    opts = options or NewtonOptions()
    if dt_min is None:
        dt_min = opts.dt_min
    targets = np.unique(np.concatenate([np.asarray(stops, dtype=float), [1.0]]))
    targets = targets[(targets > 1e-14) & (targets <= 1.0)]

    t = 0.0
    dt = min(dt_init, targets[0])
    n_steps = 0
    n_newton = 0
    history = []
    for target in targets:
        while t < target - 1e-12:
            dt = min(dt, target - t)
            t_try = t + dt
            saved = state.a.copy()
            res = newton_solve(assembler, state, zbar, t_try, opts)
            n_newton += res.iterations
            if res.converged:
                t = t_try
                n_steps += 1
                if on_step is not None:
                    value = on_step(t, state)
                    if value is not None:
                        history.append((t, value))
                dt = min(dt * 1.5, dt_init)
            else:
                state.a[:] = saved
                dt *= 0.5
                if dt < dt_min:
                    return ContinuationResult(
                        False, t, n_steps, n_newton, history,
                        "step size underflow at t = %.6f (%s)" % (t, res.message))
    return ContinuationResult(True, t, n_steps, n_newton, history)
