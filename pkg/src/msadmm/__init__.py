"""Exactly penalized ADMM with statistical multiscale constraints.

The main entry points are :func:`run_sequential` for the penalty driver,
:func:`admm_iterate` and :func:`dr_iterate` for single steps, and the
window-system builders for the constraint family.
"""

__version__ = "0.1.0"

from .core import (
    LinearMap,
    apply,
    apply_adjoint,
    as_signal,
    convolution,
    gaussian_noise,
    identity,
)
from .driver import (
    DriverConfig,
    PenaltySchedule,
    StageReport,
    aposteriori_bound,
    estimate_rate,
    lions_mercier_rate,
    run_sequential,
    violation_vs_rho_report,
)
from .errors import InvalidInputError, InvariantViolation, ParameterDomainError, SolverFailure
from .multiscale import (
    PenaltyEval,
    WindowSystem,
    active_gradients,
    build_window_system_1d,
    build_window_system_2d,
    eval_penalty,
)
from .prox import QuadraticRegularizer, eval_objective, min_norm_projection, solve_u_step, solve_v_step
from .solver import (
    AdmmState,
    DrState,
    Problem,
    SolverTrace,
    admm_iterate,
    dr_iterate,
    run_fixed_point,
)
