"""Saddle-point (KKT) systems and their solvers.

Each SQP iteration solves

    [ H  B ] [ d_x   ]   [ rhs_top    ]
    [ B^T 0 ] [ d_lam ] = [ rhs_bottom ]

for the primal-dual step.  The workhorse is a projected preconditioned
conjugate gradient (PPCG) with the constraint preconditioner
C = [[I, B], [B^T, 0]]: applying C^{-1} reduces to solves with the sparse
symmetric positive definite (and banded, for shooting Jacobians) matrix
B^T B, and keeps every CG iterate exactly on the linearized constraint
manifold.  A dense symmetric-indefinite direct solve serves as oracle and
fallback, and a QR null-space basis provides conditioning diagnostics.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "SaddleSystem",
    "KktSolution",
    "SingularSystem",
    "Breakdown",
    "PreconditionerSingular",
    "RankDeficient",
    "solve_direct",
    "solve_ppcg",
    "nullspace_basis",
    "condition_report",
    "dump_system",
]


class SingularSystem(Exception):
    """Direct factorization detected rank deficiency beyond tolerance."""


class Breakdown(Exception):
    """PPCG met non-positive curvature: the projected Hessian is indefinite."""


class PreconditionerSingular(Exception):
    """The constraint preconditioner (via B^T B) could not be factorized."""


class RankDeficient(Exception):
    """QR detected that B has rank < m2."""


@dataclass(frozen=True)
class SaddleSystem:
    """Assembled KKT system: Hessian approximation, constraint Jacobian, rhs."""

    hess: object               # HessianApprox (dimension m1)
    jac: Optional[sp.spmatrix]  # B, m1 x m2 (None or empty when unconstrained)
    rhs_top: np.ndarray        # -grad_x L, length m1
    rhs_bottom: np.ndarray     # -c(X), length m2

    def __post_init__(self):
        m1 = self.hess.dim
        if self.rhs_top.shape != (m1,):
            raise ValueError("rhs_top length must match the Hessian dimension")
        m2 = self.rhs_bottom.shape[0]
        if m2 and (self.jac is None or self.jac.shape != (m1, m2)):
            raise ValueError("jac must have shape (m1, m2)")

    @property
    def m1(self):
        return self.hess.dim

    @property
    def m2(self):
        return self.rhs_bottom.shape[0]

    def dense_matrix(self):
        m1, m2 = self.m1, self.m2
        mat = np.zeros((m1 + m2, m1 + m2))
        mat[:m1, :m1] = self.hess.dense_copy()
        if m2:
            b_dense = self.jac.toarray()
            mat[:m1, m1:] = b_dense
            mat[m1:, :m1] = b_dense.T
        return mat

    def rhs(self):
        return np.concatenate([self.rhs_top, self.rhs_bottom])

    def residual(self, d_x, d_lam):
        """True 2-norm residual of the full system at (d_x, d_lam)."""
        top = self.hess.matvec(d_x) - self.rhs_top
        if self.m2:
            top = top + self.jac @ d_lam
            bottom = self.jac.T @ d_x - self.rhs_bottom
            return float(np.sqrt(top @ top + bottom @ bottom))
        return float(np.linalg.norm(top))


@dataclass(frozen=True)
class KktSolution:
    d_x: np.ndarray
    d_lambda: np.ndarray
    residual_norm: float
    cg_iterations: int
    #: bottom-block residual norms per CG iteration (PPCG only)
    constraint_residuals: Optional[tuple] = None


def solve_direct(system):
    """Dense symmetric-indefinite factorization solve (oracle scale).

    Raises :class:`SingularSystem` when the LDL^T factors reveal rank
    deficiency (relative tolerance 1e-12) or the residual check fails.
    """
    mat = system.dense_matrix()
    rhs = system.rhs()
    if mat.shape[0] > 2000:
        raise ValueError("direct oracle limited to m1 + m2 <= 2000")

    _, d_factor, _ = scipy.linalg.ldl(mat)
    eigs = np.abs(scipy.linalg.eigvalsh(d_factor))
    if eigs.max() == 0.0 or eigs.min() <= 1e-12 * eigs.max():
        raise SingularSystem(
            f"saddle matrix numerically singular (pivot ratio {eigs.min():.2e}/{eigs.max():.2e})"
        )
    sol = scipy.linalg.solve(mat, rhs, assume_a="sym")
    m1 = system.m1
    d_x, d_lam = sol[:m1], sol[m1:]
    residual = system.residual(d_x, d_lam)
    if residual >= 1e-10 * (1.0 + np.linalg.norm(rhs)):
        raise SingularSystem(
            f"direct solve residual {residual:.2e} exceeds tolerance; system near-singular"
        )
    return KktSolution(d_x, d_lam, residual, 0)


class _ConstraintProjector:
    """Applies the constraint preconditioner C = [[I, B], [B^T, 0]].

    A C-solve with bottom block zero reduces to v = (B^T B)^{-1} B^T r,
    g = r - B v; one refinement pass keeps B^T g at machine precision.
    """

    def __init__(self, jac):
        self.jac = jac.tocsc()
        gram = (self.jac.T @ self.jac).tocsc()
        try:
            self.gram_solve = splu(gram).solve
        except RuntimeError as exc:
            raise PreconditionerSingular(f"B^T B factorization failed: {exc}") from exc
        probe = self.gram_solve(np.ones(gram.shape[0]))
        if not np.all(np.isfinite(probe)):
            raise PreconditionerSingular("B^T B factorization produced non-finite solve")

    def project(self, r):
        """(g, v) with g + B v = r and B^T g = 0."""
        v = self.gram_solve(self.jac.T @ r)
        g = r - self.jac @ v
        dv = self.gram_solve(self.jac.T @ g)
        g -= self.jac @ dv
        return g, v + dv

    def constraint_point(self, c):
        """Minimum-norm x with B^T x = c, with one refinement pass."""
        x = self.jac @ self.gram_solve(c)
        x += self.jac @ self.gram_solve(c - self.jac.T @ x)
        return x


def solve_ppcg(system, tol=1e-10, max_iter=None):
    """Projected preconditioned CG with the constraint preconditioner.

    Requires the Hessian approximation to be positive definite on the null
    space of B^T; a non-positive curvature pivot raises :class:`Breakdown`
    (callers fall back to :func:`solve_direct`).  With m2 = 0 this is plain
    CG on H d_x = rhs_top.  ``tol`` is relative to the initial projected
    residual.
    """
    m1, m2 = system.m1, system.m2
    if max_iter is None:
        max_iter = 2 * m1

    if m2 == 0:
        projector = None
        x = np.zeros(m1)
    else:
        projector = _ConstraintProjector(system.jac)
        x = projector.constraint_point(system.rhs_bottom)

    constraint_history = []

    def bottom_residual(vec):
        if m2 == 0:
            return 0.0
        return float(np.linalg.norm(system.jac.T @ vec - system.rhs_bottom))

    r = system.hess.matvec(x) - system.rhs_top
    if projector is None:
        g, v = r.copy(), np.zeros(0)
    else:
        g, v = projector.project(r)
    rg = float(r @ g)
    target = tol * max(1.0, np.sqrt(abs(rg)))
    p = -g
    iterations = 0
    while np.sqrt(abs(rg)) > target and iterations < max_iter:
        hp = system.hess.matvec(p)
        curvature = float(p @ hp)
        if curvature <= 0.0:
            raise Breakdown(
                f"non-positive curvature {curvature:.3e} at iteration {iterations}"
            )
        alpha = rg / curvature
        x = x + alpha * p
        r = r + alpha * hp
        if projector is None:
            g_new, v = r.copy(), v
        else:
            g_new, v = projector.project(r)
        rg_new = float(r @ g_new)
        p = -g_new + (rg_new / rg) * p
        g, rg = g_new, rg_new
        iterations += 1
        constraint_history.append(bottom_residual(x))

    d_lam = -v if m2 else np.zeros(0)
    return KktSolution(
        x,
        d_lam,
        system.residual(x, d_lam),
        iterations,
        tuple(constraint_history),
    )


def nullspace_basis(jac):
    """Orthonormal basis of the null space of B^T via dense QR.

    Raises :class:`RankDeficient` when a diagonal entry of R collapses
    (relative tolerance 1e-12), i.e. rank(B) < m2.
    """
    b_dense = jac.toarray() if sp.issparse(jac) else np.asarray(jac, dtype=float)
    m1, m2 = b_dense.shape
    q_mat, r_mat = scipy.linalg.qr(b_dense, mode="full")
    diag = np.abs(np.diag(r_mat[:m2, :m2])) if m2 else np.zeros(0)
    if m2 and (diag.min() <= 1e-12 * max(diag.max(), 1e-300)):
        raise RankDeficient(
            f"constraint Jacobian rank deficient (diagonal ratio {diag.min():.2e})"
        )
    return q_mat[:, m2:]


def condition_report(hess, jac):
    """(cond(H), cond(N^T H N), cond(B^T B)) with N the null-space basis."""
    h_dense = hess.dense_copy()
    basis = nullspace_basis(jac)
    projected = basis.T @ h_dense @ basis
    b_dense = jac.toarray() if sp.issparse(jac) else np.asarray(jac, dtype=float)
    gram = b_dense.T @ b_dense
    return (
        float(np.linalg.cond(h_dense)),
        float(np.linalg.cond(projected)) if projected.size else 1.0,
        float(np.linalg.cond(gram)) if gram.size else 1.0,
    )


def dump_system(system, path):
    """Debug dump of (H, B, rhs) as plain-text triplets, 17 significant digits.

    Sections are separated by '#' comment lines; vectors use column 0.
    """
    with open(path, "w") as sink:
        sink.write("# hessian\n")
        h_dense = system.hess.dense_copy()
        for i, j in zip(*np.nonzero(h_dense)):
            sink.write(f"{i} {j} {h_dense[i, j]:.17g}\n")
        sink.write("# jacobian\n")
        if system.m2:
            coo = system.jac.tocoo()
            for i, j, val in zip(coo.row, coo.col, coo.data):
                sink.write(f"{i} {j} {val:.17g}\n")
        sink.write("# rhs_top\n")
        for i, val in enumerate(system.rhs_top):
            sink.write(f"{i} 0 {val:.17g}\n")
        sink.write("# rhs_bottom\n")
        for i, val in enumerate(system.rhs_bottom):
            sink.write(f"{i} 0 {val:.17g}\n")
