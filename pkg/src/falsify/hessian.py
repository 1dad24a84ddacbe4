"""Quasi-Newton approximations of the Lagrangian Hessian.

Three variants on the same rank-two update

    H_new = H - (H s s^T H) / (s^T H s) + (y y^T) / (y^T s),

skipped (and counted) whenever the curvature condition y^T s > 0 fails:

* ``full``      -- dense update on the whole packed vector;
* ``blockdiag`` -- independent updates on the N diagonal blocks of size
                   (n+1), matching the per-segment separability of the
                   matching/boundary constrained formulations;
* ``banded``    -- updates on overlapping 2(n+1) windows that slide one
                   segment at a time (consecutive segment pairs, the
                   coupling pattern of the successive-difference
                   regularizer), averaged on the overlap and projected
                   back to the band.

Storage is a dense symmetric matrix with exact zeros outside the variant's
pattern; the structured variants never touch entries outside their pattern.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["HessianApprox", "init_identity", "VARIANTS"]

VARIANTS = ("full", "blockdiag", "banded")


def _bfgs_inplace(mat, s, y):
    """Apply the rank-two update to ``mat`` in place; True when applied.

    Skips on y^T s <= 0 (curvature condition) and on the degenerate
    s^T H s <= 0, which cannot occur while H stays positive definite but
    guards zero steps.
    """
    ys = float(y @ s)
    if ys <= 0.0:
        return False
    hs = mat @ s
    shs = float(s @ hs)
    if shs <= 0.0:
        return False
    mat -= np.outer(hs, hs) / shs
    mat += np.outer(y, y) / ys
    return True


@dataclass
class HessianApprox:
    """Symmetric approximation of the Lagrangian Hessian, one SQP run's state."""

    variant: str
    n: int
    n_segments: int
    mat: np.ndarray
    skip_count: int = 0

    @property
    def dim(self):
        return self.n_segments * (self.n + 1)

    def matvec(self, v):
        return self.mat @ v

    def dense_copy(self):
        """Dense export for oracles and the direct KKT solver."""
        return self.mat.copy()

    def _windows(self):
        """Index ranges the structured updates operate on."""
        width = self.n + 1
        if self.variant == "blockdiag":
            return [slice(i * width, (i + 1) * width) for i in range(self.n_segments)]
        if self.n_segments == 1:
            return [slice(0, width)]
        return [
            slice(i * width, (i + 2) * width) for i in range(self.n_segments - 1)
        ]

    def update(self, s, y):
        """BFGS update with step s = X_new - X and gradient difference y.

        Returns self; increments ``skip_count`` once per skipped update
        (per block/window for the structured variants).
        """
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if s.shape != (self.dim,) or y.shape != (self.dim,):
            raise ValueError(f"s and y must have packed length {self.dim}")

        if self.variant == "full":
            if not _bfgs_inplace(self.mat, s, y):
                self.skip_count += 1
            return self

        if self.variant == "blockdiag":
            for window in self._windows():
                # two-slice indexing is a view, so the update lands in place
                if not _bfgs_inplace(self.mat[window, window], s[window], y[window]):
                    self.skip_count += 1
            return self

        # banded: update each overlapping window of the *current* matrix,
        # average the overlapped entries, then project onto the band.
        acc = np.zeros_like(self.mat)
        count = np.zeros_like(self.mat)
        for window in self._windows():
            block = self.mat[window, window].copy()
            if not _bfgs_inplace(block, s[window], y[window]):
                self.skip_count += 1
            acc[window, window] += block
            count[window, window] += 1.0
        covered = count > 0
        self.mat[covered] = acc[covered] / count[covered]
        return self


def init_identity(variant, n, n_segments):
    """Identity in the given structure (the standard initial approximation)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if n < 1 or n_segments < 1:
        raise ValueError("need n >= 1 and n_segments >= 1")
    dim = n_segments * (n + 1)
    return HessianApprox(variant, n, n_segments, np.eye(dim))
