"""Jit-compiled integration kernels for the built-in benchmark systems.

The three benchmark right-hand sides are small enough to dispatch on an
integer ``kernel_id`` inside nopython code, which lets the whole adaptive
Runge-Kutta loop (including the variational equations) run without touching
the Python interpreter.  When numba is not installed, or the FALSIFY_NUMBA
environment flag disables it, callers fall back to the pure-numpy
implementation in :mod:`falsify.integrate` -- same algorithm, same constants.
"""

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


_JIT_OPTS = dict(cache=True, nogil=True)

# Kernel ids of the built-in systems.
ROTATION_SINE = 1  # block rotation + reversed-argument sine
THREE_STATE = 2    # three-state polynomial system
ROTATION = 3       # pure block rotation (linear)

# Integration outcome codes shared with the numpy path.
OK = 0
TOO_MANY_STEPS = 1
STEP_UNDERFLOW = 2


@njit(**_JIT_OPTS)
def _rhs(kid, t, x, out):
    n = x.shape[0]
    if kid == 1:
        for i in range(0, n - 1, 2):
            out[i] = x[i + 1] + np.sin(x[n - 1 - i])
            out[i + 1] = -x[i] + np.sin(x[n - 2 - i])
    elif kid == 2:
        out[0] = -x[1] + x[0] * x[2]
        out[1] = x[0] + x[1] * x[2]
        out[2] = -x[2] - x[0] * x[0] - x[1] * x[1] + x[2] * x[2]
    else:
        for i in range(0, n - 1, 2):
            out[i] = x[i + 1]
            out[i + 1] = -x[i]


@njit(**_JIT_OPTS)
def _jac(kid, t, x, out):
    n = x.shape[0]
    out[:, :] = 0.0
    if kid == 1 or kid == 3:
        for i in range(0, n - 1, 2):
            out[i, i + 1] = 1.0
            out[i + 1, i] = -1.0
    if kid == 1:
        for i in range(n):
            out[i, n - 1 - i] += np.cos(x[n - 1 - i])
    elif kid == 2:
        out[0, 0] = x[2]
        out[0, 1] = -1.0
        out[0, 2] = x[0]
        out[1, 0] = 1.0
        out[1, 1] = x[2]
        out[1, 2] = x[1]
        out[2, 0] = -2.0 * x[0]
        out[2, 1] = -2.0 * x[1]
        out[2, 2] = -1.0 + 2.0 * x[2]


@njit(**_JIT_OPTS)
def _eval(kid, aug, n, t, y, out):
    """State derivative, optionally augmented with dS/dt = J(t,x) S."""
    if not aug:
        _rhs(kid, t, y, out)
        return
    x = y[:n]
    _rhs(kid, t, x, out[:n])
    jac = np.empty((n, n))
    _jac(kid, t, x, jac)
    # sensitivity entries stored row-major: S[i, j] = y[n + i*n + j]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += jac[i, k] * y[n + k * n + j]
            out[n + i * n + j] = acc


@njit(**_JIT_OPTS)
def _error_norm(err_vec, y0, y1, rtol, atol):
    m = err_vec.shape[0]
    acc = 0.0
    for i in range(m):
        scale = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        r = err_vec[i] / scale
        acc += r * r
    return np.sqrt(acc / m)


@njit(**_JIT_OPTS)
def _initial_step(kid, aug, n, t0, y0, f0, direction, rtol, atol):
    m = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(m):
        scale = atol + rtol * abs(y0[i])
        d0 += (y0[i] / scale) ** 2
        d1 += (f0[i] / scale) ** 2
    d0 = np.sqrt(d0 / m)
    d1 = np.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = np.empty(m)
    _eval(kid, aug, n, t0 + direction * h0, y1, f1)
    d2 = 0.0
    for i in range(m):
        scale = atol + rtol * abs(y0[i])
        d2 += ((f1[i] - f0[i]) / scale) ** 2
    d2 = np.sqrt(d2 / m) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


@njit(**_JIT_OPTS)
def rk45(kid, aug, n, t0, y0, duration, rtol, atol, max_steps):
    """Adaptive Dormand-Prince 5(4) with a PI step controller.

    Returns ``(y_end, status)`` with status one of OK / TOO_MANY_STEPS /
    STEP_UNDERFLOW.  Mirrors ``integrate._rk45_numpy`` exactly.
    """
    m = y0.shape[0]
    y = y0.copy()
    if duration == 0.0:
        return y, OK
    direction = 1.0 if duration > 0.0 else -1.0
    t_end = t0 + duration
    t = t0

    k1 = np.empty(m)
    _eval(kid, aug, n, t, y, k1)
    h = direction * min(
        _initial_step(kid, aug, n, t, y, k1, direction, rtol, atol),
        abs(duration),
    )

    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    k5 = np.empty(m)
    k6 = np.empty(m)
    k7 = np.empty(m)

    err_prev = 1e-4
    steps = 0
    while (t_end - t) * direction > 0.0:
        if steps >= max_steps:
            return y, TOO_MANY_STEPS
        steps += 1
        if abs(h) > abs(t_end - t):
            h = t_end - t
        if abs(h) < 1e-15 * max(abs(t), 1.0):
            return y, STEP_UNDERFLOW

        _eval(kid, aug, n, t + 0.2 * h, y + h * 0.2 * k1, k2)
        _eval(kid, aug, n, t + 0.3 * h,
              y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2), k3)
        _eval(kid, aug, n, t + 0.8 * h,
              y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3),
              k4)
        _eval(kid, aug, n, t + 8.0 / 9.0 * h,
              y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2
                       + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4), k5)
        _eval(kid, aug, n, t + h,
              y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2
                       + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4
                       - 5103.0 / 18656.0 * k5), k6)
        y_new = y + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3
                         + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5
                         + 11.0 / 84.0 * k6)
        _eval(kid, aug, n, t + h, y_new, k7)
        err_vec = h * (71.0 / 57600.0 * k1 - 71.0 / 16695.0 * k3
                       + 71.0 / 1920.0 * k4 - 17253.0 / 339200.0 * k5
                       + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7)
        err = _error_norm(err_vec, y, y_new, rtol, atol)

        if np.isfinite(err) and err <= 1.0:
            t = t + h
            y = y_new
            k1, k7 = k7, k1  # first-same-as-last
            if err == 0.0:
                factor = 10.0
            else:
                factor = 0.9 * err ** -0.14 * err_prev ** 0.08
                factor = min(10.0, max(0.2, factor))
            err_prev = max(err, 1e-4)
            h = h * factor
        elif np.isfinite(err):
            h = h * min(0.9, max(0.2, 0.9 * err ** -0.2))
        else:
            h = h * 0.2
    return y, OK
