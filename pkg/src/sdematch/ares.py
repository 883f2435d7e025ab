"""Adversarial derivative matching with a weight-clipped critic.

The critic is a 2-layer fully connected network (256 and 128 hidden units,
leaky-rectifier slope 0.2) scoring derivative vectors; all weights are kept
inside [-c, c] by elementwise clipping after every update, which bounds the
network's Lipschitz constant so the score-mean difference between the two
batches behaves like a Wasserstein surrogate.

Forward/backward passes are written out explicitly: the inference loop needs
gradients with respect to the inputs as well as the weights (the input
gradients chain into d zdot / d theta), and keeping the arithmetic local
makes both directions cheap to verify against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gpfit import GpFitResult
from .mmd import InferenceDivergence, InferenceResult, _init_theta
from .optim import AdamState, adam_step
from .sampling import DerivativeSampler
from .systems import ObservationSet, SdeSystem

HIDDEN1 = 256
HIDDEN2 = 128
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class CriticNet:
    """Weights of the scoring network; immutable, replaced on every update."""

    W1: np.ndarray  # (H1, d)
    b1: np.ndarray  # (H1,)
    W2: np.ndarray  # (H2, H1)
    b2: np.ndarray  # (H2,)
    w3: np.ndarray  # (H2,)
    b3: float

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> np.ndarray:
        return np.concatenate(
            [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2, self.w3, [self.b3]]
        )

    @classmethod
    def from_params(cls, vec: np.ndarray, d: int) -> "CriticNet":
        sizes = [HIDDEN1 * d, HIDDEN1, HIDDEN2 * HIDDEN1, HIDDEN2, HIDDEN2, 1]
        if vec.shape != (sum(sizes),):
            raise ValueError("parameter vector has wrong length")
        chunks = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(
            W1=chunks[0].reshape(HIDDEN1, d),
            b1=chunks[1],
            W2=chunks[2].reshape(HIDDEN2, HIDDEN1),
            b2=chunks[3],
            w3=chunks[4],
            b3=float(chunks[5][0]),
        )


def init_critic(d: int, rng, scale: float = 0.05) -> CriticNet:
    """Uniform [-scale, scale] weights (clip to c before first use)."""
    return CriticNet(
        W1=rng.uniform(-scale, scale, size=(HIDDEN1, d)),
        b1=rng.uniform(-scale, scale, size=HIDDEN1),
        W2=rng.uniform(-scale, scale, size=(HIDDEN2, HIDDEN1)),
        b2=rng.uniform(-scale, scale, size=HIDDEN2),
        w3=rng.uniform(-scale, scale, size=HIDDEN2),
        b3=float(rng.uniform(-scale, scale)),
    )


def _leaky(a):
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _leaky_grad(a):
    return np.where(a > 0, 1.0, LEAKY_SLOPE)


@dataclass(frozen=True)
class CriticCache:
    """Activations retained by critic_forward for the backward pass."""

    net: CriticNet
    X: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray


def critic_forward(net: CriticNet, X: np.ndarray) -> tuple[np.ndarray, CriticCache]:
    """Scores (M,) for a batch of rows, plus the cache for critic_backward."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(
            f"batch width {X.shape[-1] if X.ndim == 2 else X.shape} "
            f"does not match critic input dim {net.input_dim}"
        )
    a1 = X @ net.W1.T + net.b1
    h1 = _leaky(a1)
    a2 = h1 @ net.W2.T + net.b2
    h2 = _leaky(a2)
    scores = h2 @ net.w3 + net.b3
    return scores, CriticCache(net=net, X=X, a1=a1, h1=h1, a2=a2, h2=h2)


def critic_backward(
    net: CriticNet, cache: CriticCache, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode gradients of sum_i upstream_i * score_i.

    Returns (weight gradient as a flat vector in CriticNet.params order,
    input gradients of shape (M, d)).

    Raises:
        ValueError: if the cache was produced by a different net (stale).
    """
    if cache.net is not net:
        raise ValueError("stale cache: forward pass came from a different critic")
    u = np.asarray(upstream, dtype=float)
    if u.shape != (cache.X.shape[0],):
        raise ValueError("upstream must be one scalar per batch row")
    dw3 = cache.h2.T @ u
    db3 = float(u.sum())
    dh2 = u[:, None] * net.w3[None, :]
    da2 = dh2 * _leaky_grad(cache.a2)
    dW2 = da2.T @ cache.h1
    db2 = da2.sum(axis=0)
    dh1 = da2 @ net.W2
    da1 = dh1 * _leaky_grad(cache.a1)
    dW1 = da1.T @ cache.X
    db1 = da1.sum(axis=0)
    dX = da1 @ net.W1
    grads = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2, dw3, [db3]])
    return grads, dX


def clip_weights(net: CriticNet, c: float) -> CriticNet:
    """Elementwise clamp of every weight and bias to [-c, c]; idempotent."""
    if not c > 0:
        raise ValueError("clip parameter must be positive")
    return CriticNet.from_params(np.clip(net.params(), -c, c), net.input_dim)


def critic_lipschitz_bound(net: CriticNet) -> float:
    """Upper bound on the critic's Lipschitz constant (product of spectral
    norms; the leaky rectifier is 1-Lipschitz)."""
    s1 = np.linalg.norm(net.W1, 2)
    s2 = np.linalg.norm(net.W2, 2)
    return float(s1 * s2 * np.linalg.norm(net.w3))


# ---------------------------------------------------------------------------
# Inference loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AresConfig:
    """Schedule for the adversarial parameter search.

    The critic keeps its own learning rate: with clipping at c the useful
    weight range is tiny, so the critic moves on a much finer scale than
    theta.
    """

    learning_rate: float = 2e-3
    critic_learning_rate: float = 1e-4
    n_iters: int = 2000
    clip: float = 0.01
    batch_size: int = 256
    n_critic: int = 5
    seed: int = 0
    init_scale: float = 0.05
    theta_init_low: Optional[tuple] = None
    theta_init_high: Optional[tuple] = None
    theta0: Optional[tuple] = None

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.n_critic < 0:
            raise ValueError("n_critic must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def ares_infer(
    obs: ObservationSet,
    fit: GpFitResult,
    system: SdeSystem,
    config: AresConfig,
) -> InferenceResult:
    """Adversarial loop: n_critic clipped critic ascent steps per theta step.

    Per outer iteration the critic maximizes mean scores on data-side batches
    minus mean scores on dynamics-side batches (fresh batches every inner
    step), then theta takes one Adam step against the critic's score of a
    fresh dynamics-side batch.  Deterministic given config.seed.
    """
    rng = np.random.default_rng(config.seed)
    sampler = DerivativeSampler(obs, fit, system)
    theta = _init_theta(config, system, rng)
    d = obs.N * obs.K
    M = config.batch_size

    net = clip_weights(init_critic(d, rng, config.init_scale), config.clip)
    critic_state = AdamState.zeros(net.params().size)
    theta_state = AdamState.zeros(system.P)

    theta_trace = np.empty((config.n_iters + 1, system.P))
    theta_trace[0] = theta
    obj_trace = np.empty(config.n_iters)
    u_mean = np.full(M, 1.0 / M)

    for it in range(config.n_iters):
        objective = np.nan
        for _ in range(config.n_critic):
            sde = sampler.sample_sde(theta, M, rng)
            data = sampler.sample_data(M, rng)
            scores_d, cache_d = critic_forward(net, data.samples)
            scores_s, cache_s = critic_forward(net, sde.samples)
            objective = float(scores_d.mean() - scores_s.mean())
            g_d, _ = critic_backward(net, cache_d, u_mean)
            g_s, _ = critic_backward(net, cache_s, u_mean)
            g_w = g_d - g_s
            critic_state, params = adam_step(
                critic_state, net.params(), -g_w, config.critic_learning_rate
            )
            net = clip_weights(CriticNet.from_params(params, d), config.clip)

        sde = sampler.sample_sde(theta, M, rng)
        scores_s, cache_s = critic_forward(net, sde.samples)
        if config.n_critic == 0:
            objective = float(-scores_s.mean())
        # g_theta = -grad_theta mean score of dynamics-side samples.
        _, input_grads = critic_backward(net, cache_s, -u_mean)
        J = sampler.grad_theta(sde, theta)
        g_theta = np.einsum("md,mdp->p", input_grads, J)
        theta_state, theta = adam_step(
            theta_state, theta, g_theta, config.learning_rate
        )
        theta_trace[it + 1] = theta
        obj_trace[it] = objective
        if np.any(np.abs(theta) > 1e6):
            raise InferenceDivergence(
                f"theta diverged at iteration {it}",
                trace=(theta_trace[: it + 2], obj_trace[: it + 1]),
            )
    return InferenceResult(
        theta=theta,
        theta_trace=theta_trace,
        objective_trace=obj_trace,
        objective_name="critic_objective",
    )
