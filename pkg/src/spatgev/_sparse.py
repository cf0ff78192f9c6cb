"""Sparse symmetric positive-definite factorization utilities.

Wraps scipy's SuperLU in symmetric mode, which for an SPD matrix produces an
LDLt-style factorization with a single fill-reducing permutation (row and
column permutations coincide).  That gives log-determinants, linear solves,
and sampling from N(0, Q^-1) without any extra dependency.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import NumericalError

__all__ = ["SymmetricFactor"]


class SymmetricFactor:
    """Factorization of a sparse SPD matrix Q.

    Internally Q[p, :][:, p] = L U with U = D L^T, so Q factors as
    (L sqrt(D)) (L sqrt(D))^T in the permuted ordering.
    """

    def __init__(self, Q: sparse.spmatrix):
        Q = sparse.csc_matrix(Q)
        if Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        self.n = Q.shape[0]
        try:
            self._lu = splu(
                Q,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # singular factor
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NumericalError("symmetric factorization produced unequal permutations")
        d = self._lu.U.diagonal()
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
            raise NumericalError("matrix is not positive definite")
        self._diag_u = d
        # solving M^T y = z with M = L sqrt(D) draws y ~ N(0, Q_perm^-1)
        self._perm = np.asarray(self._lu.perm_c)

    @property
    def logdet(self) -> float:
        """log det Q."""
        return float(np.sum(np.log(self._diag_u)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b (b may be a matrix of stacked right-hand sides)."""
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            return self._lu.solve(b)
        return np.column_stack([self._lu.solve(b[:, j]) for j in range(b.shape[1])])

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw from N(0, Q^-1); returns shape (n,) or (size, n)."""
        m = 1 if size is None else size
        M_t = (self._lu.L @ sparse.diags(np.sqrt(self._diag_u))).T.tocsr()
        z = rng.standard_normal((self.n, m))
        y = spsolve_triangular(M_t, z, lower=False)
        # permuted row i is original row inv_perm[i], so gather at perm
        out = y[self._perm].T
        return out[0] if size is None else out
