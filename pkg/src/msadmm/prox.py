"""The two ADMM sub-minimizations.

``solve_u_step`` minimizes a quadratic by conjugate gradients.
``solve_v_step`` minimizes

    G(v) = rho * theta(F_q(v)) - <b, v> + eta/2 * ||c - v||^2,   c = A u,

by steepest subdifferential descent: the steepest descent direction is
``d = r - z`` with ``r = b + eta (c - v)`` and ``z`` the projection of ``r``
onto ``rho * hull(active generators)``; the step runs along ``d`` up to the
first point where another window joins the active level, or to the minimizer
of the quadratic part (``1 / eta``), whichever comes first.  The method is an
active-set method and terminates finitely in exact arithmetic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import apply, apply_adjoint, as_signal, forward_gradient, forward_gradient_adjoint
from .errors import InvalidInputError, SolverFailure
from .multiscale import ACTIVE_RTOL, active_gradients, eval_penalty

__all__ = [
    "QuadraticRegularizer",
    "HullProjection",
    "DescentState",
    "solve_u_step",
    "solve_u_step_dense",
    "min_norm_projection",
    "max_step_preserving_active",
    "solve_v_step",
    "eval_objective",
    "ObjectiveParts",
]

logger = logging.getLogger(__name__)

POLISH_RTOL = 1e-15
POLISH_ITERS = 200


@dataclass(frozen=True)
class QuadraticRegularizer:
    """``J(u) = alpha ||u||^2`` or ``J(u) = alpha ||grad u||^2``.

    The gradient uses forward differences with no wrap-around.
    """

    kind: str = "squared-norm"
    alpha: float = 0.01

    def __post_init__(self):
        if self.kind not in ("squared-norm", "squared-gradient"):
            raise InvalidInputError(f"unknown regularizer kind {self.kind!r}")
        if not self.alpha > 0:
            raise InvalidInputError("alpha must be positive")

    def __call__(self, u):
        if self.kind == "squared-norm":
            return self.alpha * float(np.vdot(u, u))
        g = forward_gradient(u)
        if u.ndim == 1:
            return self.alpha * float(np.vdot(g, g))
        return self.alpha * float(np.vdot(g[0], g[0]) + np.vdot(g[1], g[1]))

    def hessian_apply(self, u):
        """``Q u`` such that ``J(u) = alpha <u, Q u>`` (so grad J = 2 alpha Q u)."""
        if self.kind == "squared-norm":
            return u
        return forward_gradient_adjoint(forward_gradient(u), u.shape)

    def hessian_bounds(self, shape):
        """Eigenvalue bounds ``(lo, hi)`` of ``Q``."""
        if self.kind == "squared-norm":
            return 1.0, 1.0
        return 0.0, 4.0 * len(shape)


def _normal_operator(J, A, eta, with_center):
    def op(u):
        out = 2.0 * J.alpha * J.hessian_apply(u) + eta * apply_adjoint(A, apply(A, u))
        if with_center:
            out = out + u
        return out

    return op


def _cg_cap(J, A, eta, with_center, size):
    qlo, qhi = J.hessian_bounds(A.shape)
    smin, smax = A.singular_value_bounds()
    extra = 1.0 if with_center else 0.0
    lo = 2 * J.alpha * qlo + eta * smin**2 + extra
    hi = 2 * J.alpha * qhi + eta * smax**2 + extra
    if lo <= 0:
        return max(200, 10 * size)
    return max(200, int(10 * np.sqrt(hi / lo)))


def _cg(op, rhs, x0, rtol, maxiter):
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(rhs)
    target = rtol * (1.0 + bnorm)
    r = rhs - op(x)
    rr = float(np.vdot(r, r))
    if np.sqrt(rr) <= target:
        return x, np.sqrt(rr), 0
    p = r.copy()
    for it in range(1, maxiter + 1):
        Ap = op(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0:
            break
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(np.vdot(r, r))
        if np.sqrt(rr_new) <= target:
            # recompute the true residual to guard against drift
            res = np.linalg.norm(rhs - op(x))
            if res <= target:
                return x, res, it
            r = rhs - op(x)
            rr_new = float(np.vdot(r, r))
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = np.linalg.norm(rhs - op(x))
    if res <= target:
        return x, res, maxiter
    raise SolverFailure(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", residual=res)


def _u_rhs(A, b, v, eta, center):
    rhs = apply_adjoint(A, eta * v - b)
    if center is not None:
        rhs = rhs + center
    return rhs


def solve_u_step(J, A, b, v, eta, center=None, x0=None, tol=1e-12, maxiter=None):
    """Minimize ``J(u) + <b, A u> + eta/2 ||A u - v||^2 [+ 1/2 ||u - center||^2]``.

    Solves the normal equations
    ``(2 alpha Q + eta A^T A [+ I]) u = A^T (eta v - b) [+ center]`` by
    conjugate gradients, warm-started at ``x0``.  ``tol`` bounds the
    residual relative to ``1 + ||rhs||``.

    Raises
    ------
    SolverFailure
        If CG does not reach ``tol`` within ``maxiter`` iterations
        (default ``max(200, 10 sqrt(cond))``).
    """
    if not eta > 0:
        raise InvalidInputError("eta must be positive")
    v = as_signal(v, A.codomain_shape, name="v")
    b = as_signal(b, A.codomain_shape, name="b")
    if center is not None:
        center = as_signal(center, A.domain_shape, name="center")
    rhs = _u_rhs(A, b, v, eta, center)
    op = _normal_operator(J, A, eta, center is not None)
    if maxiter is None:
        maxiter = _cg_cap(J, A, eta, center is not None, rhs.size)
    u, _, _ = _cg(op, rhs, x0, tol, maxiter)
    return u


def solve_u_step_dense(J, A, b, v, eta, center=None):
    """Dense direct solve of the u-step normal equations (small problems)."""
    shape = A.domain_shape
    n = int(np.prod(shape))
    op = _normal_operator(J, A, eta, center is not None)
    mat = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        mat[:, i] = op(e.reshape(shape)).ravel()
    rhs = _u_rhs(A, b, v, eta, center)
    return np.linalg.solve(mat, rhs.ravel()).reshape(shape)


@dataclass(frozen=True, eq=False)
class HullProjection:
    """Projection ``z`` of a point onto the convex hull of generators."""

    point: np.ndarray
    coefficients: np.ndarray

    def optimality_violation(self, r, generators):
        """``max_i <r - z, g_i - z>`` (nonpositive at the exact projection)."""
        d = (r - self.point).ravel()
        return max(float(np.dot(d, (g - self.point).ravel())) for g in generators)


def min_norm_projection(r, generators, max_iter=None, rel_tol=1e-13, init=None):
    """Project ``r`` onto ``hull(generators)`` with Wolfe's min-norm-point method.

    Runs Wolfe's algorithm on the shifted points ``g_i - r``: the minimum
    norm point ``x`` of their hull gives ``z = r + x``.  Affine minimizers
    over the corral are found from the Gram matrix of the points during the
    iteration and recomputed by least squares in point space at the end,
    which keeps ``x`` accurate when it is close to zero.

    ``init`` optionally gives nonnegative starting weights; their support
    should be affinely independent (a previous result's support is).

    Raises
    ------
    SolverFailure
        If the iteration cap is exceeded.  The best point found is attached
        as ``err.best`` and its optimality violation as ``err.residual``.
    """
    if len(generators) == 0:
        raise InvalidInputError("need at least one generator")
    r = np.asarray(r, dtype=float)
    shape = r.shape
    G = np.stack([np.asarray(g, dtype=float).ravel() for g in generators])
    k = G.shape[0]
    pts = G - r.ravel()
    K = pts @ pts.T
    scale = max(float(np.max(np.diag(K))), 1e-300)
    if max_iter is None:
        max_iter = 100 + 50 * k

    lam = np.zeros(k)
    if init is not None and np.any(np.asarray(init) > 0):
        init = np.asarray(init, dtype=float)
        corral = [int(i) for i in np.flatnonzero(init > 0)]
        lam[corral] = init[corral] / init[corral].sum()
        corral, _ = _minor_cycle(K, corral, lam, None)
    else:
        j0 = int(np.argmin(np.diag(K)))
        corral = [j0]
        lam[j0] = 1.0
    for _ in range(max_iter):
        w = K @ lam
        xx = float(np.dot(lam, w))
        j = int(np.argmin(w))
        if xx - w[j] <= rel_tol * scale or j in corral:
            break
        corral.append(j)
        corral, stuck = _minor_cycle(K, corral, lam, j)
        if stuck:
            break
    else:
        z = (lam @ G).reshape(shape)
        hp = HullProjection(point=z, coefficients=lam.copy())
        err = SolverFailure(
            "min-norm projection iteration cap exceeded",
            residual=hp.optimality_violation(r, generators),
        )
        err.best = hp
        raise err
    if len(corral) > 1:
        base = pts[corral[0]]
        D = (pts[corral[1:]] - base).T
        t, *_ = np.linalg.lstsq(D, -base, rcond=None)
        mu = np.concatenate(([1.0 - t.sum()], t))
        if np.all(mu >= 0):
            lam[:] = 0.0
            lam[corral] = mu
    z = (lam @ G).reshape(shape)
    return HullProjection(point=z, coefficients=lam.copy())


def _minor_cycle(K, corral, lam, entering):
    """Wolfe minor cycles: move ``lam`` to the affine minimizer of the corral,
    dropping points whose weight reaches zero.  Updates ``lam`` in place and
    returns ``(corral, stuck)``; ``stuck`` means the entering point was
    rejected without progress."""
    while True:
        mu = _affine_minimizer(K, corral)
        if np.all(mu > 1e-15):
            lam[:] = 0.0
            lam[corral] = mu
            return corral, False
        cur = lam[corral]
        neg = mu <= 1e-15
        denom = cur[neg] - mu[neg]
        with np.errstate(divide="ignore", invalid="ignore"):
            steps = np.where(denom > 0, cur[neg] / denom, np.inf)
        step = float(min(steps.min(), 1.0))
        if step <= 0 and entering is not None and corral[-1] == entering and mu[-1] <= 1e-15:
            # the entering point cannot improve the corral: converged
            corral.pop()
            return corral, True
        new = cur + step * (mu - cur)
        keep = [c for c, val in zip(corral, new) if val > 1e-15]
        lam[:] = 0.0
        if not keep:
            keep = [corral[int(np.argmax(new))]]
            lam[keep] = 1.0
        else:
            lam[corral] = np.where(new > 1e-15, new, 0.0)
        if len(keep) == len(corral):
            # no progress possible; drop the weakest point
            drop = int(np.argmin(new))
            keep.pop(drop)
            lam[corral[drop]] = 0.0
        corral = keep
        lam /= lam.sum()


def _affine_minimizer(K, corral):
    """Weights of the min-norm point of the affine hull of the corral.

    Uses the Gram matrix ``K`` of the points: with ``d_i = p_i - p_0`` the
    weights ``t`` solve ``(D^T D) t = -D^T p_0``.
    """
    if len(corral) == 1:
        return np.array([1.0])
    c0, rest = corral[0], corral[1:]
    Krr = K[np.ix_(rest, rest)]
    k0r = K[c0, rest]
    M = Krr - k0r[:, None] - k0r[None, :] + K[c0, c0]
    rhs = -(k0r - K[c0, c0])
    try:
        t = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        t = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return np.concatenate(([1.0 - t.sum()], t))


@dataclass
class DescentState:
    """One iterate of steepest subdifferential descent."""

    v: np.ndarray
    residual: np.ndarray
    projection: HullProjection
    active: np.ndarray
    step: float
    objective: float


def _level_rate(ev, rates):
    """Slope of the active level ``theta(v + t d)`` at ``t = 0+``."""
    win = ev.active_windows
    s = -np.inf
    if win.size:
        s = float(np.max(ev.inner_signs * rates[win]))
    if ev.zero_active:
        s = max(s, 0.0)
    return s


def max_step_preserving_active(ws, v, d, y, active=None, lam_max=np.inf, ev=None):
    """Largest step along ``d`` before a new index reaches the active level.

    Along ``v + t d`` each window value ``|a_j + t c_j|`` is piecewise
    linear, and the active level is ``theta + s t`` with ``s`` the largest
    active slope.  Returns the smallest positive ``t`` at which an inactive
    window (either sign branch), the opposite branch of an active window, or
    the zero component meets the level; ``lam_max`` when there is none.

    A return value of 0 means the line search stalled.
    """
    if ev is None:
        ev = eval_penalty(ws, v, y)
    if active is not None and not np.array_equal(np.asarray(active), ev.active):
        logger.debug("supplied active set differs from the evaluated one; using evaluated")
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        raise InvalidInputError("direction must be nonzero")
    c = ws.inner_products(d)
    s = _level_rate(ev, c)
    level = ev.theta + ws.q
    a = ev.inner
    is_active = np.zeros(len(ws), dtype=bool)
    is_active[ev.active_windows] = True
    sign = np.zeros(len(ws))
    sign[ev.active_windows] = ev.inner_signs

    best = lam_max
    with np.errstate(divide="ignore", invalid="ignore"):
        # + branch: a + c t - q = theta + s t
        den = c - s
        ok = (den > 0) & ~(is_active & (sign > 0))
        t_plus = np.where(ok, (level - a) / den, np.inf)
        # - branch: -a - c t - q = theta + s t
        den = -c - s
        ok = (den > 0) & ~(is_active & (sign < 0))
        t_minus = np.where(ok, (level + a) / den, np.inf)
    cand = np.minimum(t_plus, t_minus)
    cand = cand[cand > 0]
    if cand.size:
        best = min(best, float(cand.min()))
    if not ev.zero_active and s < 0:
        best = min(best, ev.theta / -s)
    if not best > 0:
        logger.info("line search stalled (lambda=%g)", best)
        return 0.0
    return best


def _generator_keys(ev):
    # (window, sign) per generator, in the order active_gradients returns them
    keys = []
    for j, sgn in zip(ev.active_windows, ev.inner_signs):
        if sgn == 0:
            keys.extend([(int(j), 1), (int(j), -1)])
        else:
            keys.append((int(j), int(sgn)))
    if ev.zero_active:
        keys.append((ev.M, 0))
    return keys


def _objective(ws, rho, b, c, eta, v, theta):
    diff = c - v
    return rho * theta - float(np.vdot(b, v)) + 0.5 * eta * float(np.vdot(diff, diff))


def solve_v_step(
    ws,
    rho,
    b,
    u,
    A,
    eta,
    v0,
    y,
    tol=1e-12,
    max_iter=20000,
    scale_by_rho=True,
    Au=None,
    full_output=False,
):
    """Minimize ``rho theta(F_q(v)) - <b, v> + eta/2 ||A u - v||^2`` over ``v``.

    Steepest subdifferential descent from ``v0``.  Stops when
    ``||z - r|| <= tol (1 + ||r||)``, where ``r = b + eta (A u - v)`` and
    ``z`` is the projection of ``r`` onto ``rho * hull(active generators)``.
    With ``scale_by_rho=False`` the generators are not multiplied by ``rho``
    (the unscaled objective with ``rho = 1`` in the penalty term).

    ``Au`` may be passed instead of recomputing ``A u``.

    Returns
    -------
    v : ndarray
        The minimizer.  With ``full_output=True`` a tuple ``(v, info)`` where
        ``info`` holds ``iterations``, ``gap``, ``fallback_steps`` and the
        list ``log`` of :class:`DescentState`.

    Raises
    ------
    SolverFailure
        When ``max_iter`` is reached; ``residual`` carries the optimality gap.
    """
    if not eta > 0:
        raise InvalidInputError("eta must be positive")
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    shape = ws.image_shape
    b = as_signal(b, shape, name="b")
    y = as_signal(y, shape, name="y")
    c = apply(A, u) if Au is None else as_signal(Au, shape, name="Au")
    v = as_signal(v0, shape, name="v0").copy()
    gscale = rho if scale_by_rho else 1.0
    prho = rho if scale_by_rho else 1.0

    log: List[DescentState] = []
    counters = {"fallback": 0}

    def descend(v, active_rtol, max_iter, fail):
        gap = np.inf
        prev = {}
        for it in range(max_iter + 1):
            ev = eval_penalty(ws, v, y, active_rtol=active_rtol)
            gens = [gscale * g for g in active_gradients(ws, ev)]
            keys = _generator_keys(ev)
            r = b + eta * (c - v)
            init = np.array([prev.get(key, 0.0) for key in keys])
            proj = min_norm_projection(r, gens, init=init if init.any() else None)
            prev = {key: lam for key, lam in zip(keys, proj.coefficients) if lam > 0}
            d = r - proj.point
            gap = float(np.linalg.norm(d))
            state = DescentState(
                v=v,
                residual=r,
                projection=proj,
                active=ev.active,
                step=0.0,
                objective=_objective(ws, prho, b, c, eta, v, ev.theta),
            )
            if full_output:
                log.append(state)
            if gap <= tol * (1.0 + np.linalg.norm(r)):
                return v, gap, it, ev, True
            if it == max_iter:
                if fail:
                    raise SolverFailure(
                        f"v-step did not converge in {max_iter} iterations (gap {gap:.3e})", residual=gap
                    )
                return v, gap, it, ev, False
            lam = max_step_preserving_active(ws, v, d, y, lam_max=1.0 / eta, ev=ev)
            if lam <= 0:
                counters["fallback"] += 1
                lam = 1.0 / (eta * (1 + counters["fallback"]))
                logger.warning("v-step: stalled line search, fallback step %g", lam)
            state.step = lam
            v = v + lam * d

    v, gap, it, ev, _ = descend(v, ACTIVE_RTOL, max_iter, True)
    if ev.zero_active and ev.theta > 0:
        # the active-set tolerance hides violations below ~1e-10; resolve them
        # with a tight tolerance, keeping the result only if it certifies
        pv, pgap, pit, pev, ok = descend(v, POLISH_RTOL, POLISH_ITERS, False)
        if ok and pev.theta <= ev.theta:
            v, gap, it = pv, pgap, it + pit
    info = {"iterations": it, "gap": gap, "fallback_steps": counters["fallback"], "log": log}
    return (v, info) if full_output else v


@dataclass(frozen=True)
class ObjectiveParts:
    total: float
    regularizer: float
    theta: float
    penalty: float
    coupling: float
    lagrangian: Optional[float] = None


def eval_objective(J, ws, rho, u, v, A, y, b=None, eta=None):
    """``J(u) + rho theta(F_q(v))`` plus the pieces used for logging.

    ``coupling`` is ``||A u - v||``.  When ``b`` and ``eta`` are given the
    augmented Lagrangian value is included as well.
    """
    reg = J(u)
    theta = eval_penalty(ws, v, y).theta
    diff = apply(A, u) - v
    lag = None
    if b is not None and eta is not None:
        lag = reg + rho * theta + float(np.vdot(b, diff)) + 0.5 * eta * float(np.vdot(diff, diff))
    return ObjectiveParts(
        total=reg + rho * theta,
        regularizer=reg,
        theta=theta,
        penalty=rho * theta,
        coupling=float(np.linalg.norm(diff)),
        lagrangian=lag,
    )
