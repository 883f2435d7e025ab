"""Cholesky helpers shared by the covariance-heavy modules.

All dense solves in this package go through a Cholesky factorization with a
relative jitter ladder: starting at 1e-8 times the mean diagonal, the jitter
is escalated by factors of 10 up to 1e-4 times the mean diagonal before the
factorization is declared failed.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class CholeskyError(np.linalg.LinAlgError):
    """Factorization failed after exhausting the jitter ladder.

    Attributes:
        attempted: absolute jitter values tried, in order.
    """

    def __init__(self, attempted):
        self.attempted = tuple(attempted)
        super().__init__(
            "Cholesky factorization failed; attempted jitters: "
            + ", ".join(f"{j:.3e}" for j in self.attempted)
        )


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose (cheap float-drift cleanup)."""
    return 0.5 * (a + a.T)


def chol_jitter(a: np.ndarray, ladder=JITTER_LADDER) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a PSD matrix, adding jitter as needed.

    Returns (L, jitter) with L @ L.T = a + jitter * I.  The all-zero matrix is
    accepted as-is (L = 0), which keeps degenerate covariances (e.g. a
    vanishing diffusion) exact instead of inflating them with jitter.

    Raises:
        CholeskyError: if the ladder is exhausted.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.mean(np.diag(a)))
    if scale == 0.0 and not a.any():
        return np.zeros_like(a), 0.0
    if scale <= 0.0:
        scale = 1.0
    attempted = []
    eye = np.eye(n)
    for rel in ladder:
        jitter = rel * scale
        attempted.append(jitter)
        try:
            L = cholesky(a + jitter * eye, lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise CholeskyError(attempted)


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b for a lower factor L."""
    return cho_solve((L, True), b)


def chol_logdet(L: np.ndarray) -> float:
    """log det of the factored matrix L L^T."""
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_psd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b with a symmetric PSD via the jitter ladder."""
    L, _ = chol_jitter(a)
    if not L.any():
        raise CholeskyError(attempted=(0.0,))
    return chol_solve(L, b)


def tri_solve(L: np.ndarray, b: np.ndarray, trans=0) -> np.ndarray:
    return solve_triangular(L, b, lower=True, trans=trans)
