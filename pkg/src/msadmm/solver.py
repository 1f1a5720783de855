"""ADMM and Douglas-Rachford engines and the bridge between them.

ADMM for ``min_u J(u) + H(A u)`` with ``H = rho * theta(F_q(.))`` iterates

    u+ = argmin J(u) + <b, A u> + eta/2 ||A u - v||^2
    v+ = argmin H(v) - <b, v> + eta/2 ||A u+ - v||^2
    b+ = b + eta (A u+ - v+)

Douglas-Rachford iterates ``x+ = T x`` with

    T = 1/2 (R_B R_D + Id) = J_B(2 J_D - Id) + (Id - J_D),

``J_B``, ``J_D`` resolvents and ``R = 2 J - Id`` reflectors.  For the dual
pair ``B = d(J* o (-A^T))``, ``D = dH*`` the resolvents are evaluated
through the same primal minimizations as ADMM, and under ``x = b + eta v``
(with ``b = J_D x``) the two iterations produce identical ``(b, v)``
sequences.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, List, Optional

import numpy as np

from .core import apply, apply_adjoint, as_signal
from .errors import InvalidInputError, SolverFailure
from .multiscale import eval_penalty
from .prox import solve_u_step, solve_v_step

__all__ = [
    "Problem",
    "AdmmState",
    "DrState",
    "ResolventPair",
    "TraceRecord",
    "SolverTrace",
    "initial_state",
    "admm_iterate",
    "dr_iterate",
    "make_line_projector",
    "dual_resolvent_B",
    "dual_resolvent_D",
    "dual_resolvents",
    "bridge_start",
    "check_duality_correspondence",
    "run_fixed_point",
]


@dataclass(frozen=True, eq=False)
class Problem:
    """Data of ``min J(u) + rho theta(F_q(A u))``: regularizer, operator, windows, data."""

    J: object
    A: object
    ws: object
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", as_signal(self.y, self.ws.image_shape, name="y"))
        if tuple(self.A.codomain_shape) != tuple(self.ws.image_shape):
            raise InvalidInputError("operator codomain does not match the window system")


@dataclass(frozen=True, eq=False)
class AdmmState:
    u: np.ndarray
    v: np.ndarray
    b: np.ndarray
    k: int = 0
    eta: float = 1.0

    @property
    def primary(self):
        return self.u


@dataclass(frozen=True, eq=False)
class DrState:
    x: np.ndarray
    eta: float = 1.0

    @property
    def primary(self):
        return self.x


@dataclass(frozen=True)
class ResolventPair:
    """Single-valued resolvents ``J_B`` and ``J_D`` used by :func:`dr_iterate`."""

    resolvent_B: Callable[[np.ndarray], np.ndarray]
    resolvent_D: Callable[[np.ndarray], np.ndarray]


def initial_state(problem, eta=1.0):
    """``b = 0``, ``v = y``, ``u = A^T y``."""
    y = problem.y
    return AdmmState(u=apply_adjoint(problem.A, y), v=y.copy(), b=np.zeros_like(y), k=0, eta=float(eta))


def admm_iterate(state, problem, rho, center=None, u_tol=1e-12, v_tol=1e-12, scale_by_rho=True):
    """One ADMM step ``(u, v, b) -> (u+, v+, b+)``.

    ``center`` adds ``1/2 ||u - center||^2`` to the u-step (used for the
    very first step of the sequential driver).  Sub-solver failures are
    re-raised tagged with the step name.
    """
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    eta = state.eta
    try:
        u = solve_u_step(problem.J, problem.A, state.b, state.v, eta, center=center, x0=state.u, tol=u_tol)
    except SolverFailure as err:
        raise err.annotate("u-step") from err
    Au = apply(problem.A, u)
    try:
        v = solve_v_step(
            problem.ws, rho, state.b, u, problem.A, eta, state.v, problem.y,
            tol=v_tol, Au=Au, scale_by_rho=scale_by_rho,
        )
    except SolverFailure as err:
        raise err.annotate("v-step") from err
    b = state.b + eta * (Au - v)
    return AdmmState(u=u, v=v, b=b, k=state.k + 1, eta=eta)


def dr_iterate(state, pair, debug=False):
    """``x+ = J_B(2 J_D x - x) + (x - J_D x)``.

    With ``debug=True`` the reflector form ``1/2 (R_B R_D x + x)`` is also
    evaluated and must agree to 1e-12.
    """
    x = state.x
    jd = pair.resolvent_D(x)
    refl_d = 2.0 * jd - x
    jb = pair.resolvent_B(refl_d)
    x_new = jb + (x - jd)
    if debug:
        other = 0.5 * ((2.0 * jb - refl_d) + x)
        err = float(np.max(np.abs(other - x_new))) if x_new.size else 0.0
        if err > 1e-12 * (1.0 + float(np.max(np.abs(x_new)))):
            raise AssertionError(f"DR operator forms disagree by {err:.3e}")
    return DrState(x=x_new, eta=state.eta)


def make_line_projector(direction, point):
    """Orthogonal projector onto the affine line ``point + t * direction``."""
    d = np.asarray(direction, dtype=float)
    p = np.asarray(point, dtype=float)
    if d.shape != p.shape:
        raise InvalidInputError("direction and point must have the same shape")
    dd = float(np.dot(d.ravel(), d.ravel()))
    if dd == 0.0:
        raise InvalidInputError("line direction must be nonzero")
    unit = d / math.sqrt(dd)

    def project(x):
        x = np.asarray(x, dtype=float)
        return p + np.dot((x - p).ravel(), unit.ravel()) * unit

    return project


def dual_resolvent_B(p_bar, v, J, A, eta, tol=1e-13, x0=None):
    """Resolvent of ``eta * d(J* o (-A^T))`` at ``p_bar`` via a primal u-step.

    ``u = argmin J(u) + <p_bar + eta v, A u> + eta/2 ||A u - v||^2`` and
    ``p' = p_bar + eta A u``.  Returns ``(p', u)``.  Requires ``A``
    injective (or ``J`` strongly convex) so that ``u`` is unique.
    """
    u = solve_u_step(J, A, p_bar + eta * v, v, eta, x0=x0, tol=tol)
    return p_bar + eta * apply(A, u), u


def dual_resolvent_D(p_bar, Au, ws, rho, eta, y, v0=None, tol=1e-13, scale_by_rho=True):
    """Resolvent of ``eta * dH*`` at ``p_bar``, ``H = rho theta(F_q(.))``.

    ``v = argmin H(v) - <p_bar - eta Au, v> + eta/2 ||Au - v||^2`` and
    ``p' = p_bar - eta v``.  Returns ``(p', v)``.  The result does not
    depend on ``Au``; it only shifts the sub-problem.
    """
    if v0 is None:
        v0 = y
    v = solve_v_step(
        ws, rho, p_bar - eta * Au, None, None, eta, v0, y, tol=tol, Au=Au, scale_by_rho=scale_by_rho
    )
    return p_bar - eta * v, v


def dual_resolvents(problem, rho, eta, tol=1e-13):
    """:class:`ResolventPair` for the dual of ``problem`` at penalty ``rho``."""
    zero = np.zeros(problem.ws.image_shape)
    cache = {"v": problem.y, "u": None}

    def res_b(p):
        out, u = dual_resolvent_B(p, zero, problem.J, problem.A, eta, tol=tol, x0=cache["u"])
        cache["u"] = u
        return out

    def res_d(p):
        out, v = dual_resolvent_D(p, zero, problem.ws, rho, eta, problem.y, v0=cache["v"], tol=tol)
        cache["v"] = v
        return out

    return ResolventPair(resolvent_B=res_b, resolvent_D=res_d)


def bridge_start(problem, rho, eta, u, b):
    """Produce ``(b0, v0)`` with ``v0`` in ``D b0`` by one v-step and multiplier update.

    Starting from arbitrary ``u`` and ``b``, the v-step optimality condition
    makes ``b0 = b + eta (A u - v0)`` a subgradient of ``H`` at ``v0``.
    """
    Au = apply(problem.A, u)
    v0 = solve_v_step(problem.ws, rho, b, u, problem.A, eta, problem.y, problem.y, tol=1e-13, Au=Au)
    b0 = b + eta * (Au - v0)
    return b0, v0


def check_duality_correspondence(admm_states, dr_states, eta, resolvent_D):
    """Largest mismatch between bridged ADMM and DR sequences.

    For each ``k`` computes ``b_dr = J_D x^k`` and ``v_dr = (x^k - b_dr) / eta``
    and returns ``max_k ||b^k - b_dr|| + ||v^k - v_dr||``.
    """
    if len(admm_states) != len(dr_states):
        raise InvalidInputError("ADMM and DR traces have different lengths")
    worst = 0.0
    for a, d in zip(admm_states, dr_states):
        b = resolvent_D(d.x)
        v = (d.x - b) / eta
        worst = max(worst, float(np.linalg.norm(a.b - b) + np.linalg.norm(a.v - v)))
    return worst


@dataclass
class TraceRecord:
    iter: int
    step_norm: float
    theta: float = math.nan
    objective: float = math.nan
    active_set_size: int = -1
    rate_estimate: float = math.nan
    seconds: float = 0.0


_COLUMNS = [f.name for f in fields(TraceRecord)]


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


@dataclass
class SolverTrace:
    """Append-only per-iteration log."""

    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record):
        if self.records and record.iter <= self.records[-1].iter:
            raise InvalidInputError("trace iterations must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def step_norms(self):
        return self.column("step_norm")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, c)) for c in _COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != _COLUMNS:
            raise InvalidInputError("not a trace CSV")
        out = cls()
        for row in rows[1:]:
            vals = dict(zip(_COLUMNS, row))
            out.append(
                TraceRecord(
                    iter=int(vals["iter"]),
                    step_norm=float(vals["step_norm"]),
                    theta=float(vals["theta"]),
                    objective=float(vals["objective"]),
                    active_set_size=int(vals["active_set_size"]),
                    rate_estimate=float(vals["rate_estimate"]),
                    seconds=float(vals["seconds"]),
                )
            )
        return out


def run_fixed_point(engine, state, max_iters, step_tol=0.0, monitor=None):
    """Iterate ``state = engine(state)`` until the step norm is <= ``step_tol``.

    The step norm is measured on ``state.primary``.  ``monitor(state)`` may
    return a dict with ``theta``, ``objective`` and ``active_set_size``
    entries for the trace.  Reaching ``max_iters`` is a normal outcome.

    Returns
    -------
    state, trace
    """
    if step_tol < 0:
        raise InvalidInputError("step_tol must be nonnegative")
    trace = SolverTrace()
    t0 = time.perf_counter()
    for it in range(1, max_iters + 1):
        new = engine(state)
        step = float(np.linalg.norm(new.primary - state.primary))
        extra = monitor(new) if monitor is not None else {}
        trace.append(TraceRecord(iter=it, step_norm=step, seconds=time.perf_counter() - t0, **extra))
        state = new
        if step <= step_tol:
            break
    return state, trace
