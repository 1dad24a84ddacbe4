"""ODE system definitions: right-hand side, state Jacobian, benchmarks.

The state Jacobian df/dx is carried explicitly because it is the coefficient
matrix of the variational equations; all built-in constructors supply the
analytic form.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels

__all__ = ["OdeSystem", "benchmark1", "benchmark2", "benchmark3", "rotation_matrix"]


@dataclass(frozen=True)
class OdeSystem:
    """Dynamics dx/dt = f(t, x) together with its state Jacobian.

    ``rhs`` and ``state_jacobian`` must be defined for all finite t
    (including t < 0) and all finite states.  ``kernel_id`` is set on the
    built-in benchmarks so integration can run through the jit kernels;
    user-defined systems leave it None and use the numpy path.
    """

    dim: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    state_jacobian: Callable[[float, np.ndarray], np.ndarray]
    label: str
    kernel_id: Optional[int] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("state dimension must be positive")


def rotation_matrix(n):
    """Block-diagonal matrix of 2x2 rotation generators [[0, 1], [-1, 0]]."""
    if n % 2 != 0 or n < 2:
        raise ValueError(f"dimension must be even and positive, got {n}")
    mat = np.zeros((n, n))
    for i in range(0, n, 2):
        mat[i, i + 1] = 1.0
        mat[i + 1, i] = -1.0
    return mat


def benchmark1(n):
    """Block rotation driven by a reversed-argument sine coupling.

    dx/dt = A x + sin(x reversed), with A the block rotation generator; the
    sine acts componentwise on the state read back-to-front, so the Jacobian
    is A plus cos terms on the anti-diagonal.
    """
    a_mat = rotation_matrix(n)

    def rhs(t, x):
        return a_mat @ x + np.sin(x[::-1])

    def jac(t, x):
        out = a_mat.copy()
        idx = np.arange(n)
        out[idx, n - 1 - idx] += np.cos(x[n - 1 - idx])
        return out

    return OdeSystem(n, rhs, jac, f"benchmark1(n={n})", _kernels.ROTATION_SINE)


def benchmark2():
    """Three-state polynomial system with a spiral/unstable interplay.

    dx1/dt = -x2 + x1 x3
    dx2/dt =  x1 + x2 x3
    dx3/dt = -x3 - x1^2 - x2^2 + x3^2
    """

    def rhs(t, x):
        x1, x2, x3 = x
        return np.array(
            [
                -x2 + x1 * x3,
                x1 + x2 * x3,
                -x3 - x1 * x1 - x2 * x2 + x3 * x3,
            ]
        )

    def jac(t, x):
        x1, x2, x3 = x
        return np.array(
            [
                [x3, -1.0, x1],
                [1.0, x3, x2],
                [-2.0 * x1, -2.0 * x2, -1.0 + 2.0 * x3],
            ]
        )

    return OdeSystem(3, rhs, jac, "benchmark2", _kernels.THREE_STATE)


def benchmark3(n):
    """Pure block rotation dx/dt = A x (linear, norm-preserving per 2-block)."""
    a_mat = rotation_matrix(n)

    def rhs(t, x):
        return a_mat @ x

    def jac(t, x):
        return a_mat.copy()

    return OdeSystem(n, rhs, jac, f"benchmark3(n={n})", _kernels.ROTATION)
