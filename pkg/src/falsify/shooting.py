"""Shooting parameterization: ellipsoid sets, segment vectors, per-segment flows.

A candidate trajectory is N segments, each a start state x0_i and a signed
duration t_i.  The packed parameter vector interleaves them as

    [x0_1, t_1, x0_2, t_2, ..., x0_N, t_N]   (length N*(n+1))

and every derivative in the optimizer is laid out in this order.
"""

import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.optimize import brentq

from .integrate import FlowResult, IntegrationFailure, flow_with_sensitivity

__all__ = [
    "Ellipsoid",
    "ShootingVector",
    "ProblemInstance",
    "SegmentFlows",
    "pack",
    "unpack",
    "evaluate_segments",
]

#: Per-segment flow results, entry i computed from (x0_i, t_i).
SegmentFlows = List[FlowResult]


@dataclass(frozen=True)
class Ellipsoid:
    """Set { v : (v - center)^T shape (v - center) <= 1 }.

    ``shape`` must be symmetric positive definite.  ``Ellipsoid.ball(c, r)``
    builds the round special case with shape (1/r^2) I.
    """

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        shape = np.asarray(self.shape, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        n = center.shape[0]
        if shape.shape != (n, n):
            raise ValueError("shape matrix does not match center dimension")
        if np.abs(shape - shape.T).max() > 1e-12:
            raise ValueError("shape matrix must be symmetric (tol 1e-12)")
        if np.linalg.eigvalsh(shape).min() <= 0:
            raise ValueError("shape matrix must be positive definite")

    @classmethod
    def ball(cls, center, radius):
        if radius <= 0:
            raise ValueError("radius must be positive")
        center = np.asarray(center, dtype=float)
        return cls(center, np.eye(center.size) / radius**2)

    @property
    def dim(self):
        return self.center.shape[0]

    def quadratic(self, v):
        """(v - center)^T shape (v - center)."""
        d = np.asarray(v, dtype=float) - self.center
        return float(d @ self.shape @ d)

    def distance(self, v):
        """Norm induced by the shape matrix; <= 1 means membership."""
        return float(np.sqrt(max(self.quadratic(v), 0.0)))


@dataclass(frozen=True)
class ShootingVector:
    """N segment start states (rows of ``states``) and durations ``times``."""

    states: np.ndarray  # (N, n)
    times: np.ndarray   # (N,)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        if states.shape[0] != times.shape[0] or times.shape[0] < 1:
            raise ValueError("need one duration per segment, N >= 1")

    @property
    def n_segments(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    def segments(self):
        """Iterate (x0_i, t_i) pairs in order."""
        return zip(self.states, self.times)


def pack(vec):
    """Flatten a ShootingVector into the interleaved parameter layout."""
    return np.column_stack([vec.states, vec.times]).ravel()


def unpack(flat, n, n_segments):
    """Inverse of :func:`pack`; validates the flat length N*(n+1)."""
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (n_segments * (n + 1),):
        raise ValueError(
            f"flat vector must have length {n_segments * (n + 1)}, got {flat.shape}"
        )
    grid = flat.reshape(n_segments, n + 1)
    return ShootingVector(grid[:, :n].copy(), grid[:, n].copy())


def _min_quadratic_over_ellipsoid(inner, quad):
    """Exact min of quad.quadratic(v) over v in the ``inner`` ellipsoid.

    Cholesky-transform the inner set to the unit ball and solve the
    resulting trust-region subproblem through its secular equation.
    """
    chol = np.linalg.cholesky(inner.shape)
    basis = np.linalg.inv(chol.T)  # v = inner.center + basis @ w, |w| <= 1
    mat = basis.T @ quad.shape @ basis
    g = basis.T @ quad.shape @ (inner.center - quad.center)
    q0 = quad.quadratic(inner.center)

    def value(w):
        return float(w @ mat @ w + 2.0 * g @ w + q0)

    try:
        w_free = np.linalg.solve(mat, -g)
    except np.linalg.LinAlgError:
        w_free = None
    if w_free is not None and w_free @ w_free <= 1.0:
        return value(w_free)

    # boundary solution: w(mu) = -(mat + mu I)^{-1} g with |w(mu)| = 1
    eigval, eigvec = np.linalg.eigh(mat)
    gt = eigvec.T @ g
    if float(g @ g) < 1e-30:
        # gradient vanishes at the inner center: boundary minimum is the
        # smallest curvature direction
        return float(eigval.min()) + q0

    def radius_excess(mu):
        w = gt / (eigval + mu)
        return float(w @ w) - 1.0

    lo = max(0.0, -eigval.min()) + 1e-14
    hi = max(lo * 2, 1.0)
    while radius_excess(hi) > 0:
        hi *= 2.0
    mu = brentq(radius_excess, lo, hi, xtol=1e-14)
    w = eigvec @ (-gt / (eigval + mu))
    return value(w)


@dataclass(frozen=True)
class ProblemInstance:
    """System dynamics plus the initial / unsafe ellipsoids and segment count."""

    system: object
    init: Ellipsoid
    unsafe_set: Ellipsoid
    n_segments: int

    def __post_init__(self):
        n = self.system.dim
        if self.init.dim != n or self.unsafe_set.dim != n:
            raise ValueError("ellipsoid dimensions must match the system")
        if self.n_segments < 1:
            raise ValueError("need at least one segment")
        if np.array_equal(self.init.center, self.unsafe_set.center):
            raise ValueError("initial and unsafe centers must be distinct")
        if _min_quadratic_over_ellipsoid(self.init, self.unsafe_set) <= 1.0:
            warnings.warn(
                "initial and unsafe sets overlap; the problem assumes they are disjoint",
                stacklevel=2,
            )

    @property
    def dim(self):
        return self.system.dim


def evaluate_segments(instance, vec, cfg=None):
    """One flow-with-sensitivity solve per segment of ``vec``.

    Raises :class:`IntegrationFailure` carrying the 1-based index of the
    failing segment in its ``segment`` attribute.
    """
    if vec.dim != instance.dim or vec.n_segments != instance.n_segments:
        raise ValueError("shooting vector does not match the problem instance")
    flows = []
    for i, (x0, t_i) in enumerate(vec.segments(), start=1):
        try:
            flows.append(flow_with_sensitivity(instance.system, x0, t_i, cfg))
        except IntegrationFailure as exc:
            failure = IntegrationFailure(f"segment {i}: {exc}")
            failure.segment = i
            raise failure from exc
    return flows
