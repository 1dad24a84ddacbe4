"""Adaptive ODE integration of flows and variational (sensitivity) equations.

The integrator is an embedded Dormand-Prince 5(4) pair with a PI step-size
controller (Hairer, Norsett & Wanner, vol. I, sec. II.4).  Negative durations
are first class: the solver simply steps backward in time.  Sensitivities are
obtained by integrating the augmented system of dimension n + n**2,

    dx/dt = f(t, x),    dS/dt = (df/dx)(t, x) S,    S(0) = I,

rather than by finite differences, because downstream Jacobian accuracy is
what drives the outer optimizer's convergence.

Built-in benchmark systems carry a ``kernel_id`` and run through the
jit-compiled loop in :mod:`falsify._kernels` unless the environment variable
``FALSIFY_NUMBA`` is set to 0/false/off; arbitrary Python-callable systems
always use the numpy path below (same algorithm, same constants).
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "IntegratorConfig",
    "FlowResult",
    "IntegrationFailure",
    "flow",
    "flow_with_sensitivity",
    "numba_path_enabled",
]

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# PI controller exponents for an order-5 error estimate.
_EXP_ERR = -0.7 / 5.0
_EXP_PREV = 0.4 / 5.0


class IntegrationFailure(Exception):
    """The adaptive stepper could not reach the requested end time."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and step budget of the adaptive integrator.

    Defaults are two orders of magnitude tighter than the optimizer's
    constraint tolerance so integration error never masquerades as
    constraint violation.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-9
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


DEFAULT_CONFIG = IntegratorConfig()


@dataclass(frozen=True)
class FlowResult:
    """End state, sensitivity matrix and end-point derivative of one segment."""

    end_state: np.ndarray     # x(t0 + duration), length n
    sensitivity: np.ndarray   # d end_state / d x0, shape (n, n)
    end_derivative: np.ndarray  # f(t0 + duration, end_state), length n


def numba_path_enabled():
    """True when jit kernels exist and FALSIFY_NUMBA does not disable them."""
    flag = os.environ.get("FALSIFY_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    return _kernels.NUMBA_AVAILABLE


# ---------------------------------------------------------------------------
# numpy fallback path

# Dormand-Prince coefficients.  C/A: stage nodes and weights, B: 5th order
# solution, E: difference between the 5th and embedded 4th order weights.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)


def _error_norm(err_vec, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err_vec / scale) ** 2)))


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    f1 = fun(t0 + direction * h0, y0 + direction * h0 * f0)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


def _rk45_numpy(fun, t0, y0, duration, rtol, atol, max_steps):
    """Pure-numpy twin of :func:`falsify._kernels.rk45`."""
    y = np.array(y0, dtype=float)
    if duration == 0.0:
        return y, _kernels.OK
    direction = 1.0 if duration > 0.0 else -1.0
    t_end = t0 + duration
    t = t0

    k = np.empty((7, y.size))
    k[0] = fun(t, y)
    h = direction * min(
        _initial_step(fun, t, y, k[0], direction, rtol, atol), abs(duration)
    )

    err_prev = 1e-4
    steps = 0
    while (t_end - t) * direction > 0.0:
        if steps >= max_steps:
            return y, _kernels.TOO_MANY_STEPS
        steps += 1
        if abs(h) > abs(t_end - t):
            h = t_end - t
        if abs(h) < 1e-15 * max(abs(t), 1.0):
            return y, _kernels.STEP_UNDERFLOW

        for s in range(1, 6):
            k[s] = fun(t + _C[s] * h, y + h * (_A[s] @ k[:s]))
        y_new = y + h * (_B @ k[:6])
        k[6] = fun(t + h, y_new)
        err = _error_norm(h * (_E @ k), y, y_new, rtol, atol)

        if np.isfinite(err) and err <= 1.0:
            t = t + h
            y = y_new
            k[0] = k[6]  # first-same-as-last
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** _EXP_ERR * err_prev ** _EXP_PREV
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h = h * factor
        elif np.isfinite(err):
            h = h * min(_SAFETY, max(_MIN_FACTOR, _SAFETY * err ** -0.2))
        else:
            h = h * _MIN_FACTOR
    return y, _kernels.OK


_STATUS_MESSAGES = {
    _kernels.TOO_MANY_STEPS: "step budget exhausted (max_steps={max_steps})",
    _kernels.STEP_UNDERFLOW: "step size underflow (state likely left the finite range)",
}


def _integrate(system, y0, duration, cfg, augmented):
    n = system.dim
    if numba_path_enabled() and system.kernel_id is not None:
        y_end, status = _kernels.rk45(
            system.kernel_id,
            augmented,
            n,
            0.0,
            np.asarray(y0, dtype=float),
            float(duration),
            cfg.rel_tol,
            cfg.abs_tol,
            cfg.max_steps,
        )
    else:
        if augmented:

            def fun(t, z):
                x = z[:n]
                jac = system.state_jacobian(t, x)
                sens = z[n:].reshape(n, n)
                return np.concatenate(
                    [np.asarray(system.rhs(t, x), dtype=float), (jac @ sens).ravel()]
                )

        else:

            def fun(t, z):
                return np.asarray(system.rhs(t, z), dtype=float)

        y_end, status = _rk45_numpy(
            fun, 0.0, y0, float(duration), cfg.rel_tol, cfg.abs_tol, cfg.max_steps
        )
    if status != _kernels.OK:
        raise IntegrationFailure(
            _STATUS_MESSAGES[status].format(max_steps=cfg.max_steps)
            + f" while integrating '{system.label}' over duration {duration!r}"
        )
    if not np.all(np.isfinite(y_end)):
        raise IntegrationFailure(
            f"non-finite state while integrating '{system.label}'"
        )
    return y_end


def flow(system, x0, duration, cfg=None):
    """Solution of dx/dt = f(t, x) after ``duration`` time units from ``x0``.

    Negative durations integrate backward in time.  Raises
    :class:`IntegrationFailure` when the stepper exceeds its budget or the
    state blows up.
    """
    cfg = cfg or DEFAULT_CONFIG
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have shape ({system.dim},), got {x0.shape}")
    if not np.all(np.isfinite(x0)) or not np.isfinite(duration):
        raise ValueError("x0 and duration must be finite")
    return _integrate(system, x0, duration, cfg, augmented=False)


def flow_with_sensitivity(system, x0, duration, cfg=None):
    """Flow plus the sensitivity matrix S = d(end state)/d(x0).

    Integrates the augmented state/variational system in one pass and
    returns a :class:`FlowResult`; ``end_derivative`` is the right-hand side
    evaluated at the end point.
    """
    cfg = cfg or DEFAULT_CONFIG
    n = system.dim
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},), got {x0.shape}")
    if not np.all(np.isfinite(x0)) or not np.isfinite(duration):
        raise ValueError("x0 and duration must be finite")
    z0 = np.concatenate([x0, np.eye(n).ravel()])
    z_end = _integrate(system, z0, duration, cfg, augmented=True)
    end_state = z_end[:n]
    sensitivity = z_end[n:].reshape(n, n)
    end_derivative = np.asarray(
        system.rhs(duration, end_state), dtype=float
    )
    return FlowResult(end_state, sensitivity, end_derivative)
