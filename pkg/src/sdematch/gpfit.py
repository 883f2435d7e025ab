"""Observation-model fitting by marginal-evidence maximization.

The standardized observation vector y (state-major, NK entries) is modeled as
the sum of three independent zero-mean Gaussians: a per-state GP over time
(block-diagonal covariance C), i.i.d. observation noise (diagonal T with
sigma_k^2 per state block) and the scaled auxiliary OU noise (covariance
OmegaTilde = (G G^T) kron Omega_one).  The marginal evidence

    log p(y) = -y^T Sigma^{-1} y / 2 - log|Sigma| / 2 - NK log(2 pi) / 2,
    Sigma = C + T + OmegaTilde,

is maximized jointly over the kernel hyperparameters (per state), the noise
scales and the diffusion G with Adam under an unconstrained
reparameterization: logs for kernel parameters and noise scales, softplus on
the diagonal of G.

Fitting happens entirely in standardized space; the returned diffusion is
reported both there (``G_std``) and rescaled to original units via
G = diag(sigma_y) @ G_std, which is the lower-triangular representative of
the original-scale increment covariance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import CholeskyError, chol_jitter, chol_logdet, chol_solve, symmetrize
from .kernels import PARAM_NAMES, KernelSpec, gram_matrix, kernel_param_grads
from .optim import AdamState, adam_step
from .ou_noise import DiffusionMatrix, inv_softplus, omega_one, omega_tilde
from .systems import ObservationSet

LOG_2PI = math.log(2.0 * math.pi)

# Upper bound on standardized diffusion entries (see ParamPack.clip_bounds).
G_STD_MAX = 0.6


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """State-wise affine map to zero mean, unit standard deviation."""

    mu: np.ndarray
    sigma_y: np.ndarray
    N: int

    @classmethod
    def from_observations(cls, Y: np.ndarray) -> "Standardizer":
        Y = np.asarray(Y, dtype=float)
        sd = Y.std(axis=1)
        if np.any(sd == 0):
            raise ValueError("cannot standardize a constant state")
        return cls(mu=Y.mean(axis=1), sigma_y=sd, N=Y.shape[1])

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def mu_y(self) -> np.ndarray:
        """NK-vector of state means, each repeated N times."""
        return np.repeat(self.mu, self.N)

    @property
    def scale_vec(self) -> np.ndarray:
        """NK-vector of state standard deviations, each repeated N times."""
        return np.repeat(self.sigma_y, self.N)

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mu_y) / self.scale_vec

    def destandardize(self, y_std: np.ndarray) -> np.ndarray:
        return y_std * self.scale_vec + self.mu_y


# ---------------------------------------------------------------------------
# Unconstrained parameter packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamPack:
    """Layout of the flat unconstrained optimization vector.

    Per state: log kernel params (omitted when the kernel is frozen), then
    log sigma_k; finally the K(K+1)/2 unconstrained diffusion parameters.
    """

    kind: str
    K: int
    fix_phi: bool

    @property
    def n_kernel(self) -> int:
        return 0 if self.fix_phi else len(PARAM_NAMES[self.kind])

    @property
    def n_per_state(self) -> int:
        return self.n_kernel + 1

    @property
    def n_diffusion(self) -> int:
        return self.K * (self.K + 1) // 2

    @property
    def size(self) -> int:
        return self.K * self.n_per_state + self.n_diffusion

    def pack(self, phi: list[KernelSpec], sigma, G_std: DiffusionMatrix) -> np.ndarray:
        parts = []
        for k in range(self.K):
            if not self.fix_phi:
                parts.append(np.log(phi[k].param_vector()))
            parts.append(np.log([float(sigma[k])]))
        parts.append(G_std.unconstrained())
        return np.concatenate(parts)

    def unpack(self, vec, fixed_phi=None):
        phi, sigma = [], np.empty(self.K)
        off = 0
        for k in range(self.K):
            if self.fix_phi:
                phi.append(fixed_phi[k])
            else:
                vals = np.exp(vec[off : off + self.n_kernel])
                phi.append(KernelSpec.from_vector(self.kind, vals))
                off += self.n_kernel
            sigma[k] = np.exp(vec[off])
            off += 1
        G_std = DiffusionMatrix.from_unconstrained(vec[off:], self.K)
        return phi, sigma, G_std

    def clip_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box constraints on the unconstrained parameters.

        Kernel parameters and noise scales get wide numerical-safety bounds.
        The standardized diffusion entries are bounded by G_STD_MAX: the
        auxiliary noise component models noise, whose scale must stay below
        the (unit) signal scale; without the bound, sparsely observed
        oscillatory paths admit degenerate optima where the noise block
        swallows entire states.
        """
        lo = np.empty(self.size)
        hi = np.empty(self.size)
        off = 0
        for _ in range(self.K):
            if not self.fix_phi:
                lo[off : off + self.n_kernel] = -10.0
                hi[off : off + self.n_kernel] = 5.0
                off += self.n_kernel
            lo[off], hi[off] = -10.0, 2.0  # log sigma
            off += 1
        rows, cols = np.tril_indices(self.K)
        diag = rows == cols
        g_cap = float(inv_softplus(G_STD_MAX))
        lo[off:][diag], hi[off:][diag] = -12.0, g_cap
        lo[off:][~diag], hi[off:][~diag] = -G_STD_MAX, G_STD_MAX
        return lo, hi


# ---------------------------------------------------------------------------
# Evidence and gradient
# ---------------------------------------------------------------------------


def noise_cov_diag(sigma, N: int) -> np.ndarray:
    """Diagonal of T: sigma_k^2 repeated N times, state-major."""
    sigma = np.asarray(sigma, dtype=float)
    return np.repeat(sigma**2, N)


def _assemble(y, t, phi, sigma, G_std, Omega_one=None):
    N = len(t)
    K = len(phi)
    if Omega_one is None:
        Omega_one = omega_one(t)
    C_blocks = [gram_matrix(phi[k], t) for k in range(K)]
    Sigma = omega_tilde(G_std.G, Omega_one)
    for k in range(K):
        sl = slice(k * N, (k + 1) * N)
        Sigma[sl, sl] += C_blocks[k]
    Sigma[np.arange(K * N), np.arange(K * N)] += noise_cov_diag(sigma, N)
    return symmetrize(Sigma), C_blocks, Omega_one


def _evidence_core(y, Sigma):
    L, jitter = chol_jitter(Sigma)
    alpha = chol_solve(L, y)
    value = -0.5 * float(y @ alpha) - 0.5 * chol_logdet(L) - 0.5 * len(y) * LOG_2PI
    return value, L, alpha


def log_evidence(y_std, t, phi, sigma, G_std: DiffusionMatrix) -> float:
    """Marginal log evidence of the standardized observations."""
    y_std = np.asarray(y_std, dtype=float)
    Sigma, _, _ = _assemble(y_std, t, phi, sigma, G_std)
    value, _, _ = _evidence_core(y_std, Sigma)
    return value


def evidence_grad_G_matrix(y_std, t, phi, sigma, G_std: DiffusionMatrix):
    """Gradient of the evidence with respect to the raw entries of G.

    Returns a K x K lower-triangular array of dL/dG[i, j]; useful on its own
    because it vanishes identically at G = 0 (the increment covariance
    G G^T is quadratic in G).
    """
    y_std = np.asarray(y_std, dtype=float)
    N = len(t)
    K = len(phi)
    Sigma, _, Omega_one = _assemble(y_std, t, phi, sigma, G_std)
    _, L, alpha = _evidence_core(y_std, Sigma)
    W = np.outer(alpha, alpha) - chol_solve(L, np.eye(K * N))
    P = _block_traces(W, Omega_one, K, N)
    return np.tril(P @ G_std.G)


def _block_traces(W, Omega_one, K, N):
    """P[k, l] = sum(W[k-block, l-block] * Omega_one)."""
    P = np.empty((K, K))
    for k in range(K):
        for l in range(K):
            P[k, l] = np.sum(
                W[k * N : (k + 1) * N, l * N : (l + 1) * N] * Omega_one
            )
    return symmetrize(P)


def _evidence_and_grad(y, t, pack: ParamPack, vec, fixed_phi, Omega_one):
    """Evidence and its gradient with respect to the packed unconstrained vector."""
    N = len(t)
    K = pack.K
    phi, sigma, G_std = pack.unpack(vec, fixed_phi)
    Sigma, C_blocks, Omega_one = _assemble(y, t, phi, sigma, G_std, Omega_one)
    value, L, alpha = _evidence_core(y, Sigma)

    W = np.outer(alpha, alpha) - chol_solve(L, np.eye(K * N))
    grad = np.empty(pack.size)
    off = 0
    for k in range(K):
        Wkk = W[k * N : (k + 1) * N, k * N : (k + 1) * N]
        if not pack.fix_phi:
            dC = kernel_param_grads(phi[k], t)
            raw = 0.5 * np.einsum("ij,pij->p", Wkk, dC)
            grad[off : off + pack.n_kernel] = raw * phi[k].param_vector()
            off += pack.n_kernel
        grad[off] = sigma[k] ** 2 * np.trace(Wkk)
        off += 1

    P = _block_traces(W, Omega_one, K, N)
    dL_dG = P @ G_std.G
    rows, cols = np.tril_indices(K)
    g_diff = dL_dG[rows, cols]
    diag = rows == cols
    # softplus chain rule on the diagonal of G.
    raw_diag = vec[off:][diag]
    g_diff[diag] *= 1.0 / (1.0 + np.exp(-raw_diag))
    grad[off:] = g_diff
    return value, grad


def evidence_grad(y_std, t, phi, sigma, G_std: DiffusionMatrix):
    """(log evidence, gradient) over the unconstrained parameter vector.

    The vector layout is ParamPack's: per state the log kernel parameters and
    log sigma_k, then the unconstrained diffusion parameters.
    """
    y_std = np.asarray(y_std, dtype=float)
    pack = ParamPack(kind=phi[0].kind, K=len(phi), fix_phi=False)
    vec = pack.pack(phi, sigma, G_std)
    return _evidence_and_grad(y_std, t, pack, vec, None, None)


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    """Evidence-maximization schedule (Adam, multi-restart).

    freeze_g_iters holds the diffusion at its (small) initialization for the
    first iterations of every restart so the kernel and noise scales settle
    on the stationary structure first; without this, spiky low-resolution
    paths can push the non-stationary noise block into absorbing signal.
    """

    kernel: str = "rbf"
    lr: float = 0.05
    g_lr_scale: float = 0.25
    n_iters: int = 2000
    n_restarts: int = 5
    seed: int = 0
    freeze_g_iters: int = 800
    fixed_phi: Optional[tuple] = None  # per-state KernelSpec, freezes kernels


@dataclass(frozen=True)
class GpFitResult:
    """Fitted observation model in standardized and original units."""

    phi: list
    sigma: np.ndarray
    G_std: DiffusionMatrix
    standardizer: Standardizer
    times: np.ndarray
    log_evidence: float
    seed: int
    trace: dict = field(repr=False, default_factory=dict)

    @property
    def G(self) -> DiffusionMatrix:
        """Diffusion in original units: diag(sigma_y) @ G_std."""
        return DiffusionMatrix(G=np.diag(self.standardizer.sigma_y) @ self.G_std.G)

    @property
    def H(self) -> np.ndarray:
        """Original-units increment covariance G^T G."""
        g = self.G.G
        return g.T @ g

    def to_json(self) -> str:
        doc = {
            "kernel": self.phi[0].kind,
            "phi": [[float(v) for v in p.param_vector()] for p in self.phi],
            "sigma": [float(s) for s in self.sigma],
            "G": [[float(v) for v in row] for row in self.G.G],
            "H": [[float(v) for v in row] for row in self.H],
            "log_evidence": float(self.log_evidence),
            "seed": int(self.seed),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, obs: ObservationSet) -> "GpFitResult":
        doc = json.loads(text)
        std = Standardizer.from_observations(obs.Y)
        phi = [KernelSpec.from_vector(doc["kernel"], row) for row in doc["phi"]]
        G = np.asarray(doc["G"], dtype=float)
        return cls(
            phi=phi,
            sigma=np.asarray(doc["sigma"], dtype=float),
            G_std=DiffusionMatrix(G=np.diag(1.0 / std.sigma_y) @ G),
            standardizer=std,
            times=np.asarray(obs.times, dtype=float),
            log_evidence=float(doc["log_evidence"]),
            seed=int(doc["seed"]),
        )


def _random_init(pack: ParamPack, rng, t_span: float, t_spacing: float) -> np.ndarray:
    def log_uniform(lo, hi, size=None):
        return rng.uniform(np.log(lo), np.log(hi), size=size)

    parts = []
    ls_lo = max(2.0 * t_spacing, t_span / 50.0)
    ls_hi = max(t_span / 4.0, 2.0 * ls_lo)
    for _ in range(pack.K):
        if not pack.fix_phi:
            if pack.kind == "rbf":
                parts.append([log_uniform(0.3, 3.0), log_uniform(ls_lo, ls_hi)])
            else:
                parts.append(
                    [log_uniform(0.3, 3.0), log_uniform(0.01, 1.0), log_uniform(0.1, 10.0)]
                )
        parts.append([log_uniform(0.01, 0.5)])  # log sigma
    rows, cols = np.tril_indices(pack.K)
    diag = rows == cols
    g0 = rng.normal(0.0, 0.02, size=len(rows))
    g0[diag] = inv_softplus(np.exp(log_uniform(0.01, 0.1, int(diag.sum()))))
    parts.append(g0)
    return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])


def _run_restart(y, t, pack, vec0, opts, Omega_one, fixed_phi):
    lo, hi = pack.clip_bounds()
    vec = np.clip(vec0, lo, hi)
    state = AdamState.zeros(pack.size)
    best_value, best_vec = -np.inf, vec.copy()
    history = np.empty(opts.n_iters)
    # Per-parameter learning rates: the diffusion block moves slower (and not
    # at all for the first freeze_g_iters iterations).
    lr_vec = np.full(pack.size, opts.lr)
    lr_vec[pack.size - pack.n_diffusion :] = opts.lr * opts.g_lr_scale
    g_mask = np.ones(pack.size)
    g_mask[pack.size - pack.n_diffusion :] = 0.0
    unfreeze = min(opts.freeze_g_iters, max(opts.n_iters - 1, 0))
    for i in range(opts.n_iters):
        try:
            value, grad = _evidence_and_grad(y, t, pack, vec, fixed_phi, Omega_one)
        except CholeskyError:
            history = history[:i]
            break
        history[i] = value
        # Only iterates with the diffusion unfrozen are candidates.
        if value > best_value and i >= unfreeze:
            best_value, best_vec = value, vec.copy()
        if i < unfreeze:
            grad = grad * g_mask
        state, step = adam_step(state, np.zeros_like(vec), -grad, 1.0)
        vec = np.clip(vec + lr_vec * step, lo, hi)
    return best_value, best_vec, history


def fit(obs: ObservationSet, kernel_kind: Optional[str] = None, opts: Optional[FitOptions] = None) -> GpFitResult:
    """Fit kernel hyperparameters, noise scales and diffusion to observations.

    Runs ``opts.n_restarts`` independent Adam ascents of the log evidence from
    random initializations and keeps the best iterate seen.  Deterministic
    given ``opts.seed``.

    Raises:
        CholeskyError: if every restart fails to factorize the covariance.
    """
    opts = opts or FitOptions()
    if kernel_kind is None:
        kernel_kind = opts.kernel
    if obs.N < 5:
        raise ValueError("need at least 5 observations per state")
    std = Standardizer.from_observations(obs.Y)
    y = std.standardize(obs.y)
    t = np.asarray(obs.times, dtype=float)
    Omega_one = omega_one(t)
    fixed_phi = tuple(opts.fixed_phi) if opts.fixed_phi is not None else None
    pack = ParamPack(kind=kernel_kind, K=obs.K, fix_phi=fixed_phi is not None)
    t_span = float(t[-1] - t[0])

    t_spacing = float(np.median(np.diff(t)))
    results = []
    for r in range(opts.n_restarts):
        rng = np.random.default_rng([opts.seed, r])
        vec0 = _random_init(pack, rng, t_span, t_spacing)
        results.append(_run_restart(y, t, pack, vec0, opts, Omega_one, fixed_phi))

    values = [r[0] for r in results]
    best = int(np.argmax(values))
    if not np.isfinite(values[best]):
        raise CholeskyError(attempted=())
    _, best_vec, history = results[best]
    phi, sigma, G_std = pack.unpack(best_vec, fixed_phi)
    return GpFitResult(
        phi=list(phi),
        sigma=sigma,
        G_std=G_std,
        standardizer=std,
        times=t,
        log_evidence=float(values[best]),
        seed=opts.seed,
        trace={
            "log_evidence": history,
            "restart_evidences": [float(v) for v in values],
            "best_restart": best,
        },
    )
