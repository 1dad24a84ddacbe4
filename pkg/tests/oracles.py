"""Shared independent oracles for the test suite.

Everything here is deliberately written without reusing the library's own
derivative or assembly code: finite differences drive the gradient checks,
scipy's integrators provide reference flows, and the rotation benchmark has
an explicit matrix-exponential solution.  Tolerance constants match the
acceptance thresholds.
"""

import numpy as np
from scipy.integrate import solve_ivp

from falsify.integrate import IntegratorConfig
from falsify.shooting import Ellipsoid, ProblemInstance, ShootingVector, unpack
from falsify.systems import benchmark2, benchmark3

# finite differences need flows far more accurate than the default solver
# tolerances, otherwise integrator noise dominates the h^2 truncation error
TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
FD_STEP = 1e-4


def fd_gradient(func, x, h=FD_STEP):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        grad[k] = (func(x + step) - func(x - step)) / (2.0 * h)
    return grad


def fd_jacobian(func, x, m, h=FD_STEP):
    """Central-difference Jacobian (x.size rows, m columns) of a vector map."""
    x = np.asarray(x, dtype=float)
    jac = np.zeros((x.size, m))
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        jac[k] = (func(x + step) - func(x - step)) / (2.0 * h)
    return jac


def relative_error(approx, exact):
    """||approx - exact|| / max(1, ||exact||), the acceptance normalization."""
    return float(np.linalg.norm(approx - exact)) / max(1.0, float(np.linalg.norm(exact)))


def scipy_flow(system, x0, duration, rtol=1e-12, atol=1e-12):
    """Reference end state from scipy's DOP853 (independent stepper family)."""
    sol = solve_ivp(
        system.rhs,
        (0.0, duration),
        np.asarray(x0, dtype=float),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    assert sol.success, sol.message
    return sol.y[:, -1]


def rotation_flow_matrix(n, t):
    """Closed form exp(A t) for the block rotation generator [[0,1],[-1,0]]."""
    mat = np.zeros((n, n))
    c, s = np.cos(t), np.sin(t)
    for i in range(0, n, 2):
        mat[i, i] = c
        mat[i, i + 1] = s
        mat[i + 1, i] = -s
        mat[i + 1, i + 1] = c
    return mat


def two_ball_instance(system, horizon=5.0, radius=0.25, n_segments=5, center=None):
    """Instance in the benchmark style: unsafe ball at the flow image of c_I."""
    if center is None:
        center = np.ones(system.dim)
    center = np.asarray(center, dtype=float)
    end = scipy_flow(system, center, horizon)
    return ProblemInstance(
        system,
        Ellipsoid.ball(center, radius),
        Ellipsoid.ball(end, radius),
        n_segments,
    )


def benchmark2_instance(n_segments=5):
    return two_ball_instance(benchmark2(), n_segments=n_segments)


def benchmark3_instance(n=4, n_segments=5):
    return two_ball_instance(benchmark3(n), n_segments=n_segments)


def random_vector_near_guess(instance, rng, scale=0.3, horizon=5.0):
    """Random shooting vector: perturbed equal split of the center trajectory.

    Durations stay positive and states stay near the reference trajectory so
    every segment integrates comfortably.
    """
    n = instance.system.dim
    n_seg = instance.n_segments
    states = np.empty((n_seg, n))
    point = instance.init.center.astype(float)
    dt = horizon / n_seg
    for i in range(n_seg):
        states[i] = point + scale * rng.standard_normal(n)
        point = scipy_flow(instance.system, point, dt, rtol=1e-10, atol=1e-10)
    times = dt * (1.0 + 0.2 * rng.uniform(-1.0, 1.0, size=n_seg))
    return ShootingVector(states, times)


def random_flat_near_guess(instance, rng, scale=0.3, horizon=5.0):
    vec = random_vector_near_guess(instance, rng, scale, horizon)
    return np.column_stack([vec.states, vec.times]).ravel()


def unpack_flat(instance, flat):
    return unpack(np.asarray(flat, dtype=float), instance.system.dim, instance.n_segments)
