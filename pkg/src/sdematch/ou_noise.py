"""Auxiliary mean-reverting noise covariance and diffusion plumbing.

The stochastic part of every observed path is modeled by a unit-rate
Ornstein-Uhlenbeck process started at zero, per state, scaled by a constant
lower-triangular diffusion matrix G.  For the unit-diffusion scalar process
do = -o dt + dw with o(0) = 0,

    cov[o(t_i), o(t_j)] = exp(-|t_i - t_j|)/2 - exp(-(t_i + t_j))/2,

which fills Omega_one.  Under the state-major vectorization the K-state
process with diffusion G has covariance

    OmegaTilde = B Omega B^T = (G G^T) kron Omega_one,

with B = G kron I_N and Omega = I_K kron Omega_one.  The Kronecker form is
the production path; B is only materialized on request (tests compare the
two).

The identifiable diffusion quantity reported everywhere is the increment
covariance H = G^T G of the lower-triangular representative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import symmetrize


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) written stably for large y.
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-300))))


@dataclass(frozen=True)
class DiffusionMatrix:
    """Lower-triangular diffusion with an unconstrained parameterization.

    The K(K+1)/2 free parameters follow np.tril_indices order; diagonal
    entries go through a softplus so they stay non-negative, sub-diagonal
    entries are unconstrained.
    """

    G: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        object.__setattr__(self, "G", G)
        if G.shape[0] != G.shape[1]:
            raise ValueError("G must be square")
        if np.any(np.triu(G, 1) != 0):
            raise ValueError("G must be lower triangular")
        if np.any(np.diag(G) < 0):
            raise ValueError("G must have a non-negative diagonal")

    @property
    def K(self) -> int:
        return self.G.shape[0]

    def unconstrained(self) -> np.ndarray:
        rows, cols = np.tril_indices(self.K)
        raw = self.G[rows, cols].copy()
        diag = rows == cols
        raw[diag] = inv_softplus(raw[diag])
        return raw

    @classmethod
    def from_unconstrained(cls, raw, K: int) -> "DiffusionMatrix":
        raw = np.asarray(raw, dtype=float)
        rows, cols = np.tril_indices(K)
        if raw.shape != rows.shape:
            raise ValueError(f"expected {len(rows)} parameters for K={K}")
        vals = raw.copy()
        diag = rows == cols
        vals[diag] = softplus(vals[diag])
        G = np.zeros((K, K))
        G[rows, cols] = vals
        return cls(G=G)

    @classmethod
    def from_increments(cls, H) -> "DiffusionMatrix":
        """Lower-triangular representative with G^T G = H."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        return cls(G=_lower_from_increments(H))


def _lower_from_increments(H):
    # With P the index-reversal permutation, P H P = U^T U for an upper
    # Cholesky factor U, and G = P U P is lower triangular with G^T G = H.
    from scipy.linalg import cholesky as _chol

    K = H.shape[0]
    P = np.eye(K)[::-1]
    U = _chol(P @ H @ P, lower=False)
    return P @ U @ P


def ou_cov(t_i, t_j):
    """Covariance of the unit-rate, unit-diffusion OU bridge-from-zero."""
    t_i = np.asarray(t_i, dtype=float)
    t_j = np.asarray(t_j, dtype=float)
    return 0.5 * np.exp(-np.abs(t_i - t_j)) - 0.5 * np.exp(-(t_i + t_j))


def omega_one(t) -> np.ndarray:
    """N x N covariance of the scalar auxiliary process on the grid t."""
    t = np.asarray(t, dtype=float)
    return ou_cov(t[:, None], t[None, :])


@dataclass(frozen=True)
class OuBlocks:
    """Omega_one (N x N), Omega (NK x NK) and OmegaTilde = B Omega B^T."""

    Omega_one: np.ndarray
    Omega: np.ndarray
    OmegaTilde: np.ndarray


def build_B(G, N: int) -> np.ndarray:
    """The NK x NK transform applying G to each time slice, state-major."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return np.kron(G, np.eye(N))


def omega_tilde(G, Omega_one) -> np.ndarray:
    """Covariance of the scaled auxiliary noise via the Kronecker identity."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return np.kron(symmetrize(G @ G.T), Omega_one)


def ou_blocks(t, G) -> OuBlocks:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    one = omega_one(t)
    K = G.shape[0]
    return OuBlocks(
        Omega_one=one,
        Omega=np.kron(np.eye(K), one),
        OmegaTilde=omega_tilde(G, one),
    )


def assemble_sigma(C_full, T_diag, OmegaTilde) -> np.ndarray:
    """Total observation covariance C + T + OmegaTilde (symmetrized sum).

    T_diag may be a diagonal vector of length NK or a full matrix.
    """
    C_full = np.asarray(C_full, dtype=float)
    T = np.asarray(T_diag, dtype=float)
    if T.ndim == 1:
        T = np.diag(T)
    return symmetrize(C_full + T + OmegaTilde)


def increments_variance(G) -> np.ndarray:
    """H = G^T G, the diffusion quantity that is identifiable from paths."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return G.T @ G
