"""Sequential exact-penalty driver, rate estimation and error bounds.

The driver solves ``min J(u) + rho_k theta(F_q(A u))`` for an increasing
sequence ``rho_k = rho0 * growth**k`` with ADMM, stopping stage ``k`` once
the primal step ``||u^(i+1) - u^(i)||`` drops below ``gamma_k``.  Each stage
warm-starts from the previous one.  Once the penalty vanishes (the max
penalty is exact, so this happens at a finite ``rho``), the next stage is
run to the terminal accuracy instead of ``gamma_k``.

For linearly convergent iterations ``||u^k - u*|| <= c / (1 - c) ||u^k - u^(k-1)||``
where ``c`` is the contraction factor; :func:`estimate_rate` measures ``c``
from the tail of the step norms.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
import warnings
from collections import deque
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ParameterDomainError
from .multiscale import eval_penalty
from .solver import SolverTrace, TraceRecord, admm_iterate, initial_state

__all__ = [
    "PenaltySchedule",
    "DriverConfig",
    "StageReport",
    "SequentialResult",
    "run_sequential",
    "continue_stage",
    "estimate_rate",
    "aposteriori_bound",
    "lions_mercier_rate",
    "violation_vs_rho_report",
    "ViolationReport",
    "stages_to_csv",
    "stages_from_csv",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltySchedule:
    """``rho_k = rho0 * growth**k`` with stage tolerances ``gamma_k``.

    ``gammas`` may list the tolerances explicitly (the last one repeats);
    otherwise ``gamma_k = gamma0 * 2**-k`` with ``gamma0`` defaulting to
    ``1e-2 * ||y||`` at run time.
    """

    rho0: float = 2.0**-5
    growth: float = 2.0
    gamma0: Optional[float] = None
    gammas: Optional[Sequence[float]] = None
    rho_cap: float = 2.0**20

    def __post_init__(self):
        if not self.rho0 > 0:
            raise InvalidInputError("rho0 must be positive")
        if not self.growth > 1:
            raise InvalidInputError("growth must exceed 1")
        if not self.rho_cap > 0:
            raise InvalidInputError("rho_cap must be positive")
        if self.gammas is not None:
            g = np.asarray(self.gammas, dtype=float)
            if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) > 0):
                raise InvalidInputError("gammas must be positive and nonincreasing")
        if self.gamma0 is not None and not self.gamma0 > 0:
            raise InvalidInputError("gamma0 must be positive")

    def rho(self, k):
        return self.rho0 * self.growth**k

    def gamma(self, k, ynorm=1.0):
        if self.gammas is not None:
            return float(self.gammas[min(k, len(self.gammas) - 1)])
        g0 = self.gamma0 if self.gamma0 is not None else 1e-2 * ynorm
        return g0 * 2.0**-k


@dataclass(frozen=True)
class DriverConfig:
    eta: float = 1.0
    terminal_tol: Optional[float] = None  # default 1e-9 * (1 + ||y||)
    exact_tol: Optional[float] = None  # default 1e-12 * (1 + ||y||)
    max_stage_iters: int = 2000
    max_terminal_iters: int = 20000
    rate_window: int = 20
    extra_stages: int = 0
    inner_tol_factor: float = 1e-2
    inner_tol_floor: float = 1e-12
    scale_by_rho: bool = True


@dataclass(frozen=True)
class StageReport:
    k: int
    rho: float
    iterations: int
    final_theta: float
    final_step: float
    rate_estimate: float
    aposteriori_bound: float
    exact: bool
    converged: bool = True


@dataclass
class SequentialResult:
    u: np.ndarray
    state: object
    stages: List[StageReport]
    trace: SolverTrace
    exact: bool
    rho: float
    converged: bool = False
    tail_iterates: List[np.ndarray] = field(default_factory=list)
    tail_steps: List[float] = field(default_factory=list)


def estimate_rate(step_norms):
    """Geometric-mean contraction factor of a tail of step norms.

    Returns ``(c, spread)`` where ``c`` is the geometric mean of successive
    ratios ``s[k+1] / s[k]`` and ``spread`` their standard deviation.  A zero
    step in the tail means exact convergence and gives ``c = 0``.
    """
    s = np.asarray(step_norms, dtype=float)
    if s.size < 10:
        raise InvalidInputError("need at least 10 step norms")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise InvalidInputError("step norms must be finite and nonnegative")
    if np.any(s == 0):
        return 0.0, 0.0
    ratios = s[1:] / s[:-1]
    c = float(np.exp(np.mean(np.log(ratios))))
    return c, float(np.std(ratios))


def aposteriori_bound(c, last_step):
    """``c / (1 - c) * last_step``; infinite when ``c >= 1``."""
    if c < 0 or last_step < 0:
        raise InvalidInputError("rate and step must be nonnegative")
    if c >= 1:
        logger.warning("rate estimate %g >= 1: no a-posteriori bound", c)
        return math.inf
    return c / (1.0 - c) * last_step


def lions_mercier_rate(mu, beta_ism, eta):
    """``K = (1 - 2 eta beta mu^2 / (mu + eta)^2) ** 0.5``.

    Rate for ``H`` strongly convex (modulus ``mu``) with ``beta``-inverse
    strongly monotone subdifferential.
    """
    if not (mu > 0 and beta_ism > 0 and eta > 0):
        raise ParameterDomainError("mu, beta_ism and eta must be positive")
    arg = 1.0 - 2.0 * eta * beta_ism * mu**2 / (mu + eta) ** 2
    if not 0.0 <= arg <= 1.0:
        raise ParameterDomainError(f"rate argument {arg} outside [0, 1]")
    return math.sqrt(arg)


def _stage_rate(steps, window):
    tail = steps[-window:]
    if len(tail) < 10:
        return math.nan, math.nan
    c, _ = estimate_rate(tail)
    return c, aposteriori_bound(c, tail[-1]) if c < 1 else math.inf


def run_sequential(problem, schedule=None, config=None, callback=None):
    """Exactly penalized sequential ADMM.

    Initializes ``b = 0``, ``v = y``, ``u0 = A^T y`` and takes the first
    u-step with the extra proximal term ``1/2 ||u - u0||^2``.  Each stage
    iterates ADMM at ``rho_k`` until the primal step is at most ``gamma_k``.
    When the penalty at the end of a stage is below the exactness tolerance,
    the following stage (at ``growth * rho_k``) runs to the terminal
    tolerance and the run ends there, after ``config.extra_stages`` further
    diagnostic stages.  Hitting ``schedule.rho_cap`` first ends the run with
    ``exact=False``.

    ``callback(stage_index, rho, state)`` is called after every iteration.
    """
    schedule = schedule or PenaltySchedule()
    config = config or DriverConfig()
    eta = config.eta
    if not 0 < eta < 2:
        warnings.warn(f"eta={eta} outside (0, 2)", stacklevel=2)
    y = problem.y
    ynorm = float(np.linalg.norm(y))
    exact_tol = config.exact_tol if config.exact_tol is not None else 1e-12 * (1 + ynorm)
    terminal = config.terminal_tol if config.terminal_tol is not None else 1e-9 * (1 + ynorm)
    rhs_scale = 1.0 + eta * ynorm
    smin = problem.A.singular_value_bounds()[0]
    lam_min = min(1.0, eta * smin**2)

    state = initial_state(problem, eta)
    center = state.u
    trace = SolverTrace()
    stages = []
    t0 = time.perf_counter()
    rho = schedule.rho0
    k = 0
    it = 0
    last_step = math.inf
    run_to_terminal = False
    extra_left = config.extra_stages
    exact_done = False
    tail = deque(maxlen=config.rate_window + 1)
    steps = []

    while True:
        gamma = terminal if run_to_terminal else schedule.gamma(k, ynorm)
        cap = config.max_terminal_iters if run_to_terminal else config.max_stage_iters
        steps = []
        tail = deque([state.u], maxlen=config.rate_window + 1)
        ev = None
        for _ in range(cap):
            ref = last_step if math.isfinite(last_step) else gamma
            # residual tolerance scaled by the smallest eigenvalue so the
            # solution error stays below factor * step
            atol = max(config.inner_tol_floor, config.inner_tol_factor * ref * lam_min)
            new = admm_iterate(
                state, problem, rho, center=center, u_tol=atol / rhs_scale, scale_by_rho=config.scale_by_rho
            )
            center = None
            step = float(np.linalg.norm(new.u - state.u))
            steps.append(step)
            last_step = step
            ev = eval_penalty(problem.ws, new.v, y)
            it += 1
            rate = estimate_rate(steps[-config.rate_window:])[0] if len(steps) >= 10 and min(steps[-config.rate_window:]) > 0 else math.nan
            trace.append(
                TraceRecord(
                    iter=it,
                    step_norm=step,
                    theta=ev.theta,
                    objective=problem.J(new.u) + rho * ev.theta,
                    active_set_size=int(ev.active_windows.size),
                    rate_estimate=rate,
                    seconds=time.perf_counter() - t0,
                )
            )
            state = new
            tail.append(state.u)
            if callback is not None:
                callback(k, rho, state)
            if step <= gamma:
                break
        theta = ev.theta
        c, bound = _stage_rate(steps, config.rate_window)
        exact = theta <= exact_tol
        converged = steps[-1] <= gamma
        stages.append(
            StageReport(
                k=k,
                rho=rho,
                iterations=len(steps),
                final_theta=theta,
                final_step=steps[-1],
                rate_estimate=c,
                aposteriori_bound=bound,
                exact=exact,
                converged=converged,
            )
        )
        if not converged:
            logger.warning("stage %d hit its iteration cap (step %.3e > %.3e)", k, steps[-1], gamma)
        logger.info("stage %d rho=%g iters=%d theta=%.3e step=%.3e", k, rho, len(steps), theta, steps[-1])
        if run_to_terminal and exact:
            exact_done = True
            if extra_left <= 0:
                break
            extra_left -= 1
        elif run_to_terminal and not exact:
            run_to_terminal = False
        if schedule.growth * rho > schedule.rho_cap:
            break
        rho = schedule.growth * rho
        k += 1
        if exact:
            run_to_terminal = True

    return SequentialResult(
        u=state.u,
        state=state,
        stages=stages,
        trace=trace,
        exact=exact_done,
        rho=rho,
        converged=stages[-1].converged and stages[-1].exact,
        tail_iterates=list(tail),
        tail_steps=steps[-config.rate_window:],
    )


def continue_stage(problem, state, rho, iterations, u_tol=1e-14, scale_by_rho=True):
    """Run ``iterations`` further ADMM steps at fixed ``rho``; returns the u iterates."""
    us = []
    for _ in range(iterations):
        state = admm_iterate(state, problem, rho, u_tol=u_tol, scale_by_rho=scale_by_rho)
        us.append(state.u)
    return state, us


@dataclass
class ViolationReport:
    rhos: np.ndarray
    thetas: np.ndarray
    slope: Optional[float]
    exactness_stage: Optional[int]

    def rows(self):
        return list(zip(self.rhos.tolist(), self.thetas.tolist()))


def violation_vs_rho_report(stage_reports, floor=1e-12):
    """Penalty value against ``rho`` across stages.

    ``slope`` is the least-squares slope of ``log theta`` against
    ``log rho`` over stages with ``theta > floor`` (``None`` with fewer than
    two such stages).  ``exactness_stage`` is the first stage with
    ``theta <= floor``.
    """
    if len(stage_reports) < 2:
        raise InvalidInputError("need at least two stages")
    rhos = np.array([s.rho for s in stage_reports], dtype=float)
    thetas = np.array([s.final_theta for s in stage_reports], dtype=float)
    live = thetas > floor
    slope = None
    if live.sum() >= 2:
        slope = float(np.polyfit(np.log(rhos[live]), np.log(thetas[live]), 1)[0])
    hits = np.flatnonzero(~live)
    return ViolationReport(
        rhos=rhos,
        thetas=thetas,
        slope=slope,
        exactness_stage=int(hits[0]) if hits.size else None,
    )


_STAGE_COLUMNS = ["stage", "rho", "iters", "theta", "step", "rate", "bound", "exact"]


def stages_to_csv(stage_reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_STAGE_COLUMNS)
    for s in stage_reports:
        w.writerow(
            [
                s.k,
                repr(float(s.rho)),
                s.iterations,
                repr(float(s.final_theta)),
                repr(float(s.final_step)),
                repr(float(s.rate_estimate)),
                repr(float(s.aposteriori_bound)),
                int(s.exact),
            ]
        )
    return buf.getvalue()


def stages_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != _STAGE_COLUMNS:
        raise InvalidInputError("not a stage-report CSV")
    return [
        StageReport(
            k=int(r[0]),
            rho=float(r[1]),
            iterations=int(r[2]),
            final_theta=float(r[3]),
            final_step=float(r[4]),
            rate_estimate=float(r[5]),
            aposteriori_bound=float(r[6]),
            exact=bool(int(r[7])),
        )
        for r in rows[1:]
    ]
