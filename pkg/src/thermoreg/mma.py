"""Method of Moving Asymptotes for box-constrained design updates.

Implements the classic moving-asymptotes scheme: a convex separable
approximation of objective and constraints built from the gradient signs
relative to per-variable asymptotes, solved in the dual.  The dual of the
separable subproblem is concave; with few constraints it is maximized by
safeguarded scalar root finding per multiplier (block coordinate ascent,
a single bracketed solve when there is one constraint).

Gradients are normalized internally by their max-abs entry, which makes
the update invariant under positive rescaling of the objective and keeps
the heuristic damping terms dimensionless.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = ["MMAOptions", "MMAState", "mma_update"]


@dataclass
class MMAOptions:
    """Asymptote and subproblem parameters (standard defaults)."""

    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    asy_min: float = 1e-4   # narrowest asymptote gap, fraction of the range
    asy_max: float = 10.0
    move: float = 0.2
    albefa: float = 0.1     # keep-away fraction from the asymptotes
    raa0: float = 1e-5      # minimum curvature of the approximation
    elastic: float = 1000.0  # cap on constraint multipliers
    kkt_tol: float = 1e-8


class MMAState:
    """Mutable per-run state: asymptotes, previous iterates, bounds."""

    def __init__(self, n, xmin=0.0, xmax=1.0, options=None):
        self.n = int(n)
        self.xmin = np.broadcast_to(np.asarray(xmin, float), (self.n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(xmax, float), (self.n,)).copy()
        if np.any(self.xmax <= self.xmin):
            raise ValueError("xmax must exceed xmin componentwise")
        self.options = options or MMAOptions()
        self.low = None
        self.upp = None
        self.xold1 = None
        self.xold2 = None
        self.iteration = 0
        self.df_scale = 0.0
        self.dg_scale = None
        self.last_info = {}


def _update_asymptotes(state, x):
    opts = state.options
    xrange = state.xmax - state.xmin
    if state.iteration < 2 or state.xold2 is None:
        low = x - opts.asy_init * xrange
        upp = x + opts.asy_init * xrange
    else:
        sign = (x - state.xold1) * (state.xold1 - state.xold2)
        gamma = np.ones_like(x)
        gamma[sign > 0] = opts.asy_incr
        gamma[sign < 0] = opts.asy_decr
        low = x - gamma * (state.xold1 - state.low)
        upp = x + gamma * (state.upp - state.xold1)
        low = np.clip(low, x - opts.asy_max * xrange, x - opts.asy_min * xrange)
        upp = np.clip(upp, x + opts.asy_min * xrange, x + opts.asy_max * xrange)
    state.low, state.upp = low, upp
    return low, upp


def mma_update(state, x, df, g=None, dg=None):
    """One design update.

    Parameters
    ----------
    state : MMAState
        Updated in place (asymptotes, iterate history).
    x : (n,) ndarray
        Current design, inside the bounds.
    df : (n,) ndarray
        Objective gradient.
    g : (m,) ndarray, optional
        Constraint values, feasible when <= 0.
    dg : (m, n) ndarray, optional
        Constraint gradients.

    Returns
    -------
    (n,) ndarray
        The subproblem minimizer, satisfying box and move limits.
    """
    opts = state.options
    x = np.asarray(x, float)
    df = np.asarray(df, float)
    if x.shape != (state.n,) or df.shape != (state.n,):
        raise ValueError("x and df must have shape (%d,)" % state.n)
    if g is None:
        g = np.zeros(0)
        dg = np.zeros((0, state.n))
    g = np.atleast_1d(np.asarray(g, float))
    dg = np.atleast_2d(np.asarray(dg, float))
    if dg.shape != (g.shape[0], state.n):
        raise ValueError("dg must have shape (m, n)")
    if not (np.all(np.isfinite(df)) and np.all(np.isfinite(g))
            and np.all(np.isfinite(dg))):
        raise ValueError("non-finite gradients or constraint values")

    low, upp = _update_asymptotes(state, x)
    xrange = state.xmax - state.xmin

    # move limits and keep-away band from the asymptotes
    alfa = np.maximum.reduce([state.xmin, low + opts.albefa * (x - low),
                              x - opts.move * xrange])
    beta = np.minimum.reduce([state.xmax, upp - opts.albefa * (upp - x),
                              x + opts.move * xrange])

    # normalize by the running max-abs gradient: the update is then exactly
    # invariant to positive rescaling of the objective, while a gradient
    # that shrinks as the run converges still produces contracting steps
    state.df_scale = max(state.df_scale, np.abs(df).max())
    dfn = df / state.df_scale if state.df_scale > 0 else df
    m = g.shape[0]
    if state.dg_scale is None or state.dg_scale.size != m:
        state.dg_scale = np.zeros(m)
    gn = g.copy()
    dgn = dg.copy()
    for i in range(m):
        state.dg_scale[i] = max(state.dg_scale[i], np.abs(dg[i]).max())
        if state.dg_scale[i] > 0:
            gn[i] /= state.dg_scale[i]
            dgn[i] /= state.dg_scale[i]

    ux, xl = upp - x, x - low
    damp = 0.001 * np.abs(dfn) + opts.raa0 / xrange
    p0 = ux ** 2 * (np.maximum(dfn, 0.0) + damp)
    q0 = xl ** 2 * (np.maximum(-dfn, 0.0) + damp)
    P = ux[None, :] ** 2 * np.maximum(dgn, 0.0)
    Q = xl[None, :] ** 2 * np.maximum(-dgn, 0.0)
    b = P @ (1.0 / ux) + Q @ (1.0 / xl) - gn

    def x_of(lam):
        pl = p0 + lam @ P
        ql = q0 + lam @ Q
        sp, sq = np.sqrt(pl), np.sqrt(ql)
        return np.clip((low * sp + upp * sq) / (sp + sq), alfa, beta)

    def gtilde(lam):
        xs = x_of(lam)
        return P @ (1.0 / (upp - xs)) + Q @ (1.0 / (xs - low)) - b

    lam = np.zeros(m)
    if m:
        # block coordinate ascent on the concave dual; each coordinate is a
        # monotone scalar root problem solved by bracketed iteration
        for sweep in range(100):
            lam_prev = lam.copy()
            for i in range(m):
                def resid(li, i=i):
                    trial = lam.copy()
                    trial[i] = li
                    return gtilde(trial)[i]
                r0 = resid(0.0)
                if r0 <= 0.0:
                    lam[i] = 0.0
                elif resid(opts.elastic) >= 0.0:
                    lam[i] = opts.elastic
                else:
                    lam[i] = brentq(resid, 0.0, opts.elastic, xtol=1e-14,
                                    rtol=1e-15, maxiter=200)
            if np.abs(lam - lam_prev).max() <= 1e-13 * (1.0 + lam.max()):
                break

    x_new = x_of(lam)
    resid = gtilde(lam) if m else np.zeros(0)
    kkt = 0.0
    for i in range(m):
        if lam[i] <= 0.0:
            kkt = max(kkt, max(resid[i], 0.0))
        elif lam[i] < opts.elastic:
            kkt = max(kkt, abs(resid[i]))
    state.last_info = {"lam": lam, "kkt": kkt,
                       "elastic": bool(m and np.any(lam >= opts.elastic))}
    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.iteration += 1
    return x_new
