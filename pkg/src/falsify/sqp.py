"""Line-search SQP driver for the multiple-shooting minimization problems.

Each iteration linearizes the constraints, solves the saddle-point system
for a primal-dual step, backtracks on an augmented-Lagrangian merit
function until the sufficient-decrease test holds, then applies the common
step length to both the shooting vector and the multipliers and refreshes
the quasi-Newton Hessian.  Termination causes mirror the stopping criteria
S1 (converged), S2 (iteration budget), S3 (step length underflow), plus an
integration failure at the incumbent point.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .formulation import (
    Multipliers,
    constraint_dim,
    constraint_jacobian,
    constraint_value,
    lagrangian_gradient,
    objective_gradient,
    objective_value,
)
from .hessian import VARIANTS, init_identity
from .integrate import DEFAULT_CONFIG, IntegrationFailure, IntegratorConfig
from .kkt import (
    Breakdown,
    KktSolution,
    PreconditionerSingular,
    SaddleSystem,
    SingularSystem,
    solve_direct,
    solve_ppcg,
)
from .shooting import evaluate_segments, pack, unpack

__all__ = [
    "KKT_METHODS",
    "Termination",
    "SqpConfig",
    "TraceRecord",
    "RunReport",
    "StepTooSmall",
    "merit",
    "merit_derivative_at_zero",
    "line_search",
    "run",
]

KKT_METHODS = ("ppcg", "direct")


class StepTooSmall(Exception):
    """Backtracking drove the step length below the minimum (criterion S3)."""


class Termination(enum.Enum):
    S1_CONVERGED = "S1_converged"
    S2_MAXIT = "S2_maxit"
    S3_STEP_TOO_SMALL = "S3_step_too_small"
    INTEGRATION_FAILURE = "IntegrationFailure"


@dataclass(frozen=True)
class SqpConfig:
    """Solver constants; defaults follow the reference setup."""

    omega: float = 1.0
    delta: float = 1e-4
    eps1: float = 1e-3
    eps2: float = 1e-8
    eps3: float = 1e-8
    max_iter: int = 400
    backtrack_factor: float = 0.5
    hessian_variant: str = "full"
    kkt_method: str = "ppcg"
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        for name in ("omega", "eps1", "eps2", "eps3"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.hessian_variant not in VARIANTS:
            raise ValueError(f"unknown hessian variant {self.hessian_variant!r}")
        if self.kkt_method not in KKT_METHODS:
            raise ValueError(f"unknown kkt method {self.kkt_method!r}")


@dataclass(frozen=True)
class TraceRecord:
    """Incumbent statistics at the top of an iteration plus the step taken.

    ``merit_zero`` and ``merit_slope`` are m(0) and m'(0) for the direction
    actually used, so the sufficient-decrease inequality of every accepted
    step can be re-checked after the run.
    """

    iteration: int
    objective: float
    constraint_norm: float
    gradient_norm: float
    alpha: float
    merit: float
    merit_zero: float
    merit_slope: float
    cg_iterations: int


@dataclass(frozen=True)
class RunReport:
    nit: int
    termination: Termination
    final_X: object
    final_objective: float
    final_constraint_norm: float
    trace: tuple = ()
    #: multipliers at the final iterate, for diagnostics and warm restarts
    final_multipliers: Optional[Multipliers] = None


def _trial_merit(formulation, instance, base_flat, lam_new_flat, d_x, omega, cfg):
    """Returns a callable alpha -> (merit value, trial vector, trial flows).

    Integration failure at a trial point yields +inf (the step is simply
    rejected); the incumbent is never touched here.
    """
    n = instance.system.dim
    n_seg = instance.n_segments
    kind_dim = lam_new_flat.shape[0]

    def evaluate(alpha):
        vec = unpack(base_flat + alpha * d_x, n, n_seg)
        try:
            flows = evaluate_segments(instance, vec, cfg)
        except IntegrationFailure:
            return math.inf, vec, None
        value = objective_value(formulation, instance, vec, flows)
        if kind_dim:
            c_trial = constraint_value(formulation.constraints, instance, vec, flows)
            value += float(lam_new_flat @ c_trial)
            value += 0.5 * omega * float(c_trial @ c_trial)
        return value, vec, flows

    return evaluate


def merit(formulation, instance, vec, lam, d_x, d_lam, alpha, omega, cfg=None):
    """Merit value m(alpha) = F + (lam+d_lam)^T c + (omega/2)||c||^2 at the trial point.

    Returns +inf when the trial point fails to integrate.
    """
    cfg = cfg or DEFAULT_CONFIG
    lam_new = lam.flat + d_lam
    evaluate = _trial_merit(
        formulation, instance, pack(vec), lam_new, d_x, omega, cfg
    )
    value, _, _ = evaluate(alpha)
    return value


def merit_derivative_at_zero(
    formulation, instance, vec, lam, d_x, d_lam, omega, flows=None, cfg=None
):
    """Directional derivative m'(0) = d_x^T (grad F + B(lam+d_lam)) + omega d_x^T B c."""
    cfg = cfg or DEFAULT_CONFIG
    if flows is None:
        flows = evaluate_segments(instance, vec, cfg)
    grad_f = objective_gradient(formulation, instance, vec, flows)
    slope = float(d_x @ grad_f)
    kind = formulation.constraints
    if kind != "none":
        jac = constraint_jacobian(kind, instance, vec, flows)
        c_val = constraint_value(kind, instance, vec, flows)
        slope += float(d_x @ (jac @ (lam.flat + d_lam)))
        slope += omega * float(d_x @ (jac @ c_val))
    return slope


def line_search(
    evaluate: Callable[[float], float],
    merit_zero: float,
    slope: float,
    delta: float,
    backtrack_factor: float,
    eps3: float,
    alpha_start: float = 1.0,
):
    """Backtracking search for the largest alpha passing sufficient decrease.

    ``evaluate`` maps alpha to the merit value (or +inf).  Accepts the first
    alpha in {alpha_start, alpha_start*beta, ...} with
    m(alpha) - m(0) <= delta * alpha * m'(0); raises :class:`StepTooSmall`
    when the slope is nonnegative or alpha falls below ``eps3``.
    """
    if slope >= 0.0:
        raise StepTooSmall(f"search direction is not a descent direction (m'(0)={slope:.3e})")
    alpha = alpha_start
    while alpha >= eps3:
        value = evaluate(alpha)
        if value - merit_zero <= delta * alpha * slope:
            return alpha, value
        alpha *= backtrack_factor
    raise StepTooSmall(f"step length fell below {eps3:.1e}")


def _solve_step(system, method):
    """KKT solve with the documented fallback ladder.

    PPCG breakdowns fall back to the dense direct solve; a singular direct
    solve falls back to the minimum-norm least-squares direction with the
    line search started at alpha = 1/2 instead of 1.
    """
    if method == "ppcg":
        try:
            return solve_ppcg(system), 1.0
        except (Breakdown, PreconditionerSingular):
            pass
    try:
        return solve_direct(system), 1.0
    except (SingularSystem, ValueError):
        dense = system.dense_matrix()
        rhs = system.rhs()
        sol, *_ = np.linalg.lstsq(dense, rhs, rcond=None)
        m1 = system.m1
        d_x, d_lam = sol[:m1], sol[m1:]
        residual = float(np.linalg.norm(dense @ sol - rhs))
        return KktSolution(d_x, d_lam, residual, 0), 0.5


def run(formulation, instance, X_init, cfg=None, *, kkt_observer=None):
    """Run the SQP iteration from ``X_init`` until S1, S2, S3, or failure.

    ``kkt_observer``, when given, receives each assembled
    :class:`~falsify.kkt.SaddleSystem` before it is solved (used by the
    solver cross-check suites).  Two runs with identical inputs produce
    identical traces.
    """
    cfg = cfg or SqpConfig()
    n = instance.system.dim
    n_seg = instance.n_segments
    kind = formulation.constraints
    m2 = constraint_dim(kind, n, n_seg)

    vec = X_init
    lam = Multipliers.zeros(kind, n, n_seg)
    hess = init_identity(cfg.hessian_variant, n, n_seg)
    trace = []

    def report(nit, cause, objective, cnorm):
        return RunReport(nit, cause, vec, objective, cnorm, tuple(trace), lam)

    try:
        flows = evaluate_segments(instance, vec, cfg.integrator)
    except IntegrationFailure:
        return report(0, Termination.INTEGRATION_FAILURE, math.nan, math.nan)

    it = 0
    while True:
        grad_l = lagrangian_gradient(formulation, instance, vec, lam, flows)
        c_val = (
            constraint_value(kind, instance, vec, flows)
            if m2
            else np.zeros(0)
        )
        objective = objective_value(formulation, instance, vec, flows)
        gnorm = float(np.linalg.norm(grad_l))
        cnorm = float(np.linalg.norm(c_val))
        if gnorm < cfg.eps1 and cnorm < cfg.eps2:
            return report(it, Termination.S1_CONVERGED, objective, cnorm)
        if it >= cfg.max_iter:
            return report(it, Termination.S2_MAXIT, objective, cnorm)

        jac = constraint_jacobian(kind, instance, vec, flows) if m2 else None
        system = SaddleSystem(hess, jac, -grad_l, -c_val)
        if kkt_observer is not None:
            kkt_observer(system)
        solution, alpha_start = _solve_step(system, cfg.kkt_method)
        d_x, d_lam = solution.d_x, solution.d_lambda

        lam_new_flat = lam.flat + d_lam
        flat = pack(vec)
        merit_zero = objective
        if m2:
            merit_zero += float(lam_new_flat @ c_val)
            merit_zero += 0.5 * cfg.omega * float(c_val @ c_val)
        slope = merit_derivative_at_zero(
            formulation, instance, vec, lam, d_x, d_lam, cfg.omega, flows=flows
        )

        evaluate = _trial_merit(
            formulation, instance, flat, lam_new_flat, d_x, cfg.omega, cfg.integrator
        )
        cache = {}

        def cached(alpha, _evaluate=evaluate, _cache=cache):
            value, trial_vec, trial_flows = _evaluate(alpha)
            _cache[alpha] = (trial_vec, trial_flows)
            return value

        try:
            alpha, merit_value = line_search(
                cached,
                merit_zero,
                slope,
                cfg.delta,
                cfg.backtrack_factor,
                cfg.eps3,
                alpha_start,
            )
        except StepTooSmall:
            return report(it, Termination.S3_STEP_TOO_SMALL, objective, cnorm)

        trace.append(
            TraceRecord(
                it,
                objective,
                cnorm,
                gnorm,
                alpha,
                merit_value,
                merit_zero,
                slope,
                solution.cg_iterations,
            )
        )

        vec_new, flows_new = cache[alpha]
        lam_new = lam.replace(lam.flat + alpha * d_lam)
        # quasi-Newton data: both gradients at the updated multipliers
        grad_new = lagrangian_gradient(formulation, instance, vec_new, lam_new, flows_new)
        grad_old = lagrangian_gradient(formulation, instance, vec, lam_new, flows)
        hess.update(alpha * d_x, grad_new - grad_old)

        vec, lam, flows = vec_new, lam_new, flows_new
        it += 1
