"""Closed-form posteriors and ancestral sampling of derivative batches.

Everything lives in standardized units.  Writing C for the block-diagonal GP
covariance, T for the diagonal noise covariance and Om for the auxiliary
noise covariance (G G^T kron Omega_one), the conditionals given the observed
vector y are Gaussian with

    m_o  = Om (Om + C + T)^{-1} y          (auxiliary noise given y)
    C_o  = Om (Om + C + T)^{-1} (C + T)
    m_z(o) = C (C + T)^{-1} (y - o)        (latent state given y and o)
    C_z  = C (C + T)^{-1} T
    mu_z = Sigma_z (Om + T)^{-1} y         (latent state given y alone)
    Sigma_z = C (Om + T + C)^{-1} (Om + T)

The dynamics-based derivative of a latent sample is deterministic given
(z, o): in standardized units, zdot = f(x) / sigma_y + o with x the
de-standardized value of z + o.  The data-based derivative is Gaussian,
zdot | z ~ N(D z, A), with per-state D and A from the kernel module.

Product-form covariances (C_o, C_z, Sigma_z) are symmetrized before
factorization; analytically symmetric, they drift in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import chol_jitter, chol_solve, symmetrize
from .gpfit import GpFitResult, noise_cov_diag
from .kernels import build_kernel_matrices
from .ou_noise import omega_one, omega_tilde
from .systems import ObservationSet, SdeSystem


@dataclass(frozen=True)
class DerivativeBatch:
    """M sampled derivative vectors, standardized state units per time."""

    samples: np.ndarray  # (M, NK)
    source: str  # "sde" | "data"


@dataclass(frozen=True)
class SdeBatch:
    """Dynamics-side batch plus the state points needed for theta gradients."""

    samples: np.ndarray  # (M, NK)
    x_points: np.ndarray  # (M, N, K), original units
    o_samples: np.ndarray  # (M, NK)

    @property
    def batch(self) -> DerivativeBatch:
        return DerivativeBatch(samples=self.samples, source="sde")


class Posteriors:
    """All posterior factors derived from one fitted observation model."""

    def __init__(self, y_std, t, phi, sigma, G_std):
        y = np.asarray(y_std, dtype=float)
        t = np.asarray(t, dtype=float)
        N, K = len(t), len(phi)
        self.y, self.t, self.N, self.K = y, t, N, K

        kms = [build_kernel_matrices(p, t) for p in phi]
        C = np.zeros((N * K, N * K))
        for k, km in enumerate(kms):
            C[k * N : (k + 1) * N, k * N : (k + 1) * N] = km.C
        t_diag = noise_cov_diag(sigma, N)
        Om = omega_tilde(G_std.G, omega_one(t))

        S1 = symmetrize(C + np.diag(t_diag))
        L1, _ = chol_jitter(S1)
        self.M_z = chol_solve(L1, C).T  # C (C+T)^{-1}
        self.C_z = symmetrize(self.M_z * t_diag[None, :])

        S2 = symmetrize(Om + S1)
        L2, _ = chol_jitter(S2)
        self.m_o = Om @ chol_solve(L2, y)
        self.C_o = symmetrize(Om @ chol_solve(L2, S1))

        S3 = symmetrize(Om + np.diag(t_diag))
        L4, _ = chol_jitter(symmetrize(S3 + C))
        self.Sigma_z_d = symmetrize(C @ chol_solve(L4, S3))
        self.mu_z_d = C @ chol_solve(L4, y)

        self.L_o, _ = chol_jitter(self.C_o)
        self.L_z, _ = chol_jitter(self.C_z)
        self.L_zd, _ = chol_jitter(self.Sigma_z_d)
        self.D_blocks = [km.D for km in kms]
        self.L_A_blocks = [chol_jitter(km.A)[0] for km in kms]

    @classmethod
    def from_fit(cls, obs: ObservationSet, fit: GpFitResult) -> "Posteriors":
        y_std = fit.standardizer.standardize(obs.y)
        return cls(y_std, fit.times, fit.phi, fit.sigma, fit.G_std)


def sde_posteriors(y_std, fit: GpFitResult):
    """(m_o, C_o, C_z, m_z_fn) for the dynamics-side ancestral chain."""
    post = Posteriors(y_std, fit.times, fit.phi, fit.sigma, fit.G_std)

    def m_z_fn(o):
        return post.M_z @ (post.y - o)

    return post.m_o, post.C_o, post.C_z, m_z_fn


def data_posteriors(y_std, fit: GpFitResult):
    """(mu_z, Sigma_z) of the latent state given observations alone."""
    post = Posteriors(y_std, fit.times, fit.phi, fit.sigma, fit.G_std)
    return post.mu_z_d, post.Sigma_z_d


def sample_mvn(mean, cov, M: int, rng) -> np.ndarray:
    """M Gaussian samples (rows) via a jittered Cholesky factor.

    A fully zero covariance yields exact copies of the mean.
    """
    mean = np.asarray(mean, dtype=float)
    L, _ = chol_jitter(symmetrize(np.asarray(cov, dtype=float)))
    xi = rng.standard_normal((M, len(mean)))
    return mean[None, :] + xi @ L.T


class DerivativeSampler:
    """Draws matched derivative batches from a fitted observation model."""

    def __init__(self, obs: ObservationSet, fit: GpFitResult, system: SdeSystem):
        if system.K != obs.K:
            raise ValueError("system state dimension does not match observations")
        self.post = Posteriors.from_fit(obs, fit)
        self.system = system
        self.std = fit.standardizer
        self._scale = self.std.scale_vec  # (NK,)
        self._mu = self.std.mu_y

    def _to_points(self, flat):
        """(M, NK) state-major -> (M, N, K) original-unit state points."""
        M = flat.shape[0]
        x = flat * self._scale[None, :] + self._mu[None, :]
        return x.reshape(M, self.post.K, self.post.N).transpose(0, 2, 1)

    def drift_std(self, x_points, theta) -> np.ndarray:
        """Drift at original-unit points, restandardized, (M, NK)."""
        M = x_points.shape[0]
        f = self.system.drift(x_points, np.asarray(theta, dtype=float))
        flat = f.transpose(0, 2, 1).reshape(M, self.post.N * self.post.K)
        return flat / self._scale[None, :]

    def sample_sde(self, theta, M: int, rng) -> SdeBatch:
        post = self.post
        d = post.N * post.K
        o = post.m_o[None, :] + rng.standard_normal((M, d)) @ post.L_o.T
        mz = (post.y[None, :] - o) @ post.M_z.T
        z = mz + rng.standard_normal((M, d)) @ post.L_z.T
        x_points = self._to_points(z + o)
        zdot = self.drift_std(x_points, theta) + o
        return SdeBatch(samples=zdot, x_points=x_points, o_samples=o)

    def sample_data(self, M: int, rng) -> DerivativeBatch:
        post = self.post
        d = post.N * post.K
        z = post.mu_z_d[None, :] + rng.standard_normal((M, d)) @ post.L_zd.T
        zdot = np.empty((M, d))
        xi = rng.standard_normal((M, d))
        for k in range(post.K):
            sl = slice(k * post.N, (k + 1) * post.N)
            zdot[:, sl] = z[:, sl] @ post.D_blocks[k].T + xi[:, sl] @ post.L_A_blocks[k].T
        return DerivativeBatch(samples=zdot, source="data")

    def grad_theta(self, batch: SdeBatch, theta) -> np.ndarray:
        """Per-sample Jacobians d zdot / d theta, shape (M, NK, P)."""
        return sde_batch_grad_theta(self.system, self.std, batch.x_points, theta)


def sde_batch_grad_theta(system: SdeSystem, std, x_points, theta) -> np.ndarray:
    """Jacobian of the dynamics-side derivatives with respect to theta.

    theta enters only through the drift, so each row's Jacobian is the drift
    theta-gradient at the sampled state, restandardized per state.
    """
    M, N, K = x_points.shape
    g = system.drift_grad_theta(x_points, np.asarray(theta, dtype=float))
    J = g.transpose(0, 2, 1, 3).reshape(M, N * K, system.P)
    return J / std.scale_vec[None, :, None]


def ancestral_sample(
    obs: ObservationSet,
    fit: GpFitResult,
    system: SdeSystem,
    theta,
    M: int,
    rng,
) -> tuple[DerivativeBatch, DerivativeBatch]:
    """Matched dynamics-side and data-side derivative batches of size M."""
    sampler = DerivativeSampler(obs, fit, system)
    sde = sampler.sample_sde(theta, M, rng)
    data = sampler.sample_data(M, rng)
    return sde.batch, data
