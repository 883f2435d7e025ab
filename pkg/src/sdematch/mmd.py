"""Unbiased squared maximum mean discrepancy and the MMD-minimizing
parameter search.

The kernel is a mixture of rational quadratics sharing one lengthscale,

    k(u, v) = mean_over_alpha (1 + ||u - v||^2 / (2 alpha l^2))^(-alpha),

with the lengthscale set once by the median heuristic on the first data-side
batch and then frozen, so the objective stays fixed during optimization.

For equal batch sizes M the unbiased estimator excludes the diagonal from
all three terms:

    MMD2_u = c * sum_{i != j} [k(x_i, x_j) + k(y_i, y_j) - 2 k(x_i, y_j)],
    c = 1 / (M (M - 1)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gpfit import GpFitResult
from .optim import AdamState, adam_step
from .sampling import DerivativeSampler
from .systems import ObservationSet, SdeSystem

DEFAULT_ALPHAS = (0.2, 0.5, 1.0, 2.0, 5.0)


class InferenceDivergence(RuntimeError):
    """Parameter iterates blew up; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class RqKernelSpec:
    """Scale-mixture exponents and shared lengthscale."""

    alphas: tuple = DEFAULT_ALPHAS
    lengthscale: float = 1.0

    def __post_init__(self):
        if len(self.alphas) == 0 or any(a <= 0 for a in self.alphas):
            raise ValueError("alphas must be non-empty and positive")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")


def median_heuristic(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance (off-diagonal) of the rows of X."""
    d2 = _sqdists(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def _sqdists(X, Y):
    xx = np.sum(X * X, axis=1)
    yy = np.sum(Y * Y, axis=1)
    d2 = xx[:, None] + yy[None, :] - 2.0 * (X @ Y.T)
    return np.maximum(d2, 0.0)


def _rq_gram(d2, spec: RqKernelSpec):
    acc = np.zeros_like(d2)
    for a in spec.alphas:
        acc += (1.0 + d2 / (2.0 * a * spec.lengthscale**2)) ** (-a)
    return acc / len(spec.alphas)


def _rq_weight(d2, spec: RqKernelSpec):
    """mean_alpha (1 + d2/(2 alpha l^2))^(-alpha-1) / l^2, the factor in dk/du."""
    acc = np.zeros_like(d2)
    for a in spec.alphas:
        acc += (1.0 + d2 / (2.0 * a * spec.lengthscale**2)) ** (-a - 1.0)
    return acc / (len(spec.alphas) * spec.lengthscale**2)


def rq_kernel(u, v, spec: RqKernelSpec) -> float:
    """Kernel value between two vectors."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return float(_rq_gram(_sqdists(u, v), spec)[0, 0])


def mmd2_unbiased(X, Y, spec: RqKernelSpec) -> float:
    """Unbiased MMD^2 between equal-size sample sets (rows)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    M = X.shape[0]
    if Y.shape[0] != M:
        raise ValueError(f"batch sizes differ: {M} vs {Y.shape[0]}")
    if M < 2:
        raise ValueError("unbiased MMD^2 needs at least two samples per set")
    Kxx = _rq_gram(_sqdists(X, X), spec)
    Kyy = _rq_gram(_sqdists(Y, Y), spec)
    Kxy = _rq_gram(_sqdists(X, Y), spec)
    np.fill_diagonal(Kxx, 0.0)
    np.fill_diagonal(Kyy, 0.0)
    np.fill_diagonal(Kxy, 0.0)
    c = 1.0 / (M * (M - 1))
    return c * (Kxx.sum() + Kyy.sum() - 2.0 * Kxy.sum())


def mmd2_grad_X(X, Y, spec: RqKernelSpec) -> np.ndarray:
    """Gradient of mmd2_unbiased with respect to the rows of X, shape like X."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    M = X.shape[0]
    if Y.shape[0] != M:
        raise ValueError(f"batch sizes differ: {M} vs {Y.shape[0]}")
    Wxx = _rq_weight(_sqdists(X, X), spec)
    Wxy = _rq_weight(_sqdists(X, Y), spec)
    np.fill_diagonal(Wxx, 0.0)
    np.fill_diagonal(Wxy, 0.0)
    c = 1.0 / (M * (M - 1))
    rs_xx = Wxx.sum(axis=1)[:, None]
    rs_xy = Wxy.sum(axis=1)[:, None]
    return 2.0 * c * (Wxx @ X - rs_xx * X + rs_xy * X - Wxy @ Y)


# ---------------------------------------------------------------------------
# Inference loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarsConfig:
    """Schedule for the MMD-minimizing parameter search."""

    learning_rate: float = 0.01
    n_iters: int = 2000
    batch_size: int = 256
    seed: int = 0
    alphas: tuple = DEFAULT_ALPHAS
    lengthscale: Optional[float] = None  # None: median heuristic, then frozen
    theta_init_low: Optional[tuple] = None
    theta_init_high: Optional[tuple] = None
    theta0: Optional[tuple] = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


@dataclass(frozen=True)
class InferenceResult:
    theta: np.ndarray
    theta_trace: np.ndarray  # (n_iters + 1, P)
    objective_trace: np.ndarray  # (n_iters,)
    objective_name: str


def _init_theta(config, system, rng):
    if config.theta0 is not None:
        return np.asarray(config.theta0, dtype=float)
    if config.theta_init_low is None or config.theta_init_high is None:
        raise ValueError("need theta0 or a theta init box")
    lo = np.asarray(config.theta_init_low, dtype=float)
    hi = np.asarray(config.theta_init_high, dtype=float)
    if lo.shape != (system.P,) or hi.shape != (system.P,):
        raise ValueError("theta init box has wrong dimension")
    return rng.uniform(lo, hi)


def mars_infer(
    obs: ObservationSet,
    fit: GpFitResult,
    system: SdeSystem,
    config: MarsConfig,
) -> InferenceResult:
    """Minimize the unbiased MMD^2 between the two derivative batches over theta.

    Fresh batches are drawn every iteration; deterministic given config.seed.

    Raises:
        InferenceDivergence: if |theta| exceeds 1e6 (partial trace attached).
    """
    rng = np.random.default_rng(config.seed)
    sampler = DerivativeSampler(obs, fit, system)
    theta = _init_theta(config, system, rng)

    # Freeze the kernel scale from a pre-pass data batch.
    if config.lengthscale is None:
        first = sampler.sample_data(config.batch_size, rng)
        spec = RqKernelSpec(
            alphas=tuple(config.alphas),
            lengthscale=median_heuristic(first.samples),
        )
    else:
        spec = RqKernelSpec(alphas=tuple(config.alphas), lengthscale=config.lengthscale)

    state = AdamState.zeros(system.P)
    theta_trace = np.empty((config.n_iters + 1, system.P))
    theta_trace[0] = theta
    obj_trace = np.empty(config.n_iters)
    for it in range(config.n_iters):
        sde = sampler.sample_sde(theta, config.batch_size, rng)
        data = sampler.sample_data(config.batch_size, rng)
        obj_trace[it] = mmd2_unbiased(sde.samples, data.samples, spec)
        gX = mmd2_grad_X(sde.samples, data.samples, spec)
        J = sampler.grad_theta(sde, theta)
        g_theta = np.einsum("md,mdp->p", gX, J)
        state, theta = adam_step(state, theta, g_theta, config.learning_rate)
        theta_trace[it + 1] = theta
        if np.any(np.abs(theta) > 1e6):
            raise InferenceDivergence(
                f"theta diverged at iteration {it}",
                trace=(theta_trace[: it + 2], obj_trace[: it + 1]),
            )
    return InferenceResult(
        theta=theta,
        theta_trace=theta_trace,
        objective_trace=obj_trace,
        objective_name="mmd2",
    )
