"""Kernel functions over time with analytic derivatives, and the matrices of
the induced derivative process.

Two kernel families are supported:

* ``rbf``: k(a, b) = v * exp(-(a - b)^2 / (2 l^2)) with params
  ``variance`` (v) and ``lengthscale`` (l).
* ``sigmoid``: the arcsine "neural network" kernel
  k(a, b) = v * asin((s*a*b + o) / sqrt((s*a^2 + o + 1) * (s*b^2 + o + 1)))
  with params ``variance`` (v), ``slope`` (s) and ``offset`` (o).  This is
  the canonical smooth sigmoid-shaped GP kernel with tractable time
  derivatives; the +1 terms keep the arcsine argument strictly inside
  (-1, 1).

Given a Gram matrix C over a time grid and the cross-derivative matrices

    dCda[i, j]    = d/da k(a, b)      at (t_i, t_j),
    dCdb[i, j]    = d/db k(a, b)      at (t_i, t_j),
    d2Cdadb[i, j] = d^2/(da db) k     at (t_i, t_j),

a GP prior on a function z induces a conditional Gaussian on its derivative,
dz | z ~ N(D z, A) with D = dCda C^{-1} and A = d2Cdadb - dCda C^{-1} dCdb.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import chol_jitter, chol_solve, symmetrize

PARAM_NAMES = {
    "rbf": ("variance", "lengthscale"),
    "sigmoid": ("variance", "slope", "offset"),
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its positive hyperparameters."""

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in PARAM_NAMES:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        names = PARAM_NAMES[self.kind]
        missing = set(names) - set(self.params)
        if missing:
            raise ValueError(f"missing {self.kind} kernel params: {sorted(missing)}")
        for name in names:
            if not self.params[name] > 0:
                raise ValueError(f"kernel param {name} must be positive")

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.kind]

    def param_vector(self) -> np.ndarray:
        return np.array([self.params[n] for n in self.param_names])

    @classmethod
    def from_vector(cls, kind: str, values) -> "KernelSpec":
        names = PARAM_NAMES[kind]
        return cls(kind=kind, params=dict(zip(names, map(float, values))))


@dataclass(frozen=True)
class KernelMatrices:
    """Per-state Gram and derivative matrices over one time grid."""

    C: np.ndarray
    dCda: np.ndarray
    dCdb: np.ndarray
    d2Cdadb: np.ndarray
    D: np.ndarray
    A: np.ndarray
    jitter: float


# ---------------------------------------------------------------------------
# RBF
# ---------------------------------------------------------------------------


def _rbf_eval(v, l, a, b):
    r = a - b
    return v * np.exp(-(r**2) / (2.0 * l**2))


def _rbf_time_derivs(v, l, a, b):
    r = a - b
    k = _rbf_eval(v, l, a, b)
    dka = -(r / l**2) * k
    dkb = (r / l**2) * k
    dkab = (1.0 / l**2 - r**2 / l**4) * k
    return dka, dkb, dkab


def _rbf_param_grads(v, l, a, b):
    r = a - b
    k = _rbf_eval(v, l, a, b)
    return np.stack([k / v, k * r**2 / l**3])


# ---------------------------------------------------------------------------
# Sigmoid (arcsine network kernel)
# ---------------------------------------------------------------------------


def _sig_parts(s, o, a, b):
    u = s * a * b + o
    pa = s * a**2 + o + 1.0
    pb = s * b**2 + o + 1.0
    arg = u / np.sqrt(pa * pb)
    return u, pa, pb, arg


def _sig_eval(v, s, o, a, b):
    _, _, _, arg = _sig_parts(s, o, a, b)
    return v * np.arcsin(arg)


def _sig_time_derivs(v, s, o, a, b):
    u, pa, pb, arg = _sig_parts(s, o, a, b)
    # d(arg)/da and d(arg)/db simplify to the forms below; the mixed
    # derivative collapses to s*((o+1)^2 + s*o*a*b) / (pa*pb)^{3/2}.
    darg_da = s * ((o + 1.0) * b - o * a) / (pa**1.5 * np.sqrt(pb))
    darg_db = s * ((o + 1.0) * a - o * b) / (pb**1.5 * np.sqrt(pa))
    darg_dab = s * ((o + 1.0) ** 2 + s * o * a * b) / (pa * pb) ** 1.5
    f1 = 1.0 / np.sqrt(1.0 - arg**2)
    f2 = arg * f1**3
    dka = v * f1 * darg_da
    dkb = v * f1 * darg_db
    dkab = v * (f2 * darg_da * darg_db + f1 * darg_dab)
    return dka, dkb, dkab


def _sig_param_grads(v, s, o, a, b):
    u, pa, pb, arg = _sig_parts(s, o, a, b)
    root = np.sqrt(pa * pb)
    f1 = 1.0 / np.sqrt(1.0 - arg**2)
    darg_ds = (a * b - 0.5 * u * (a**2 / pa + b**2 / pb)) / root
    darg_do = (1.0 - 0.5 * u * (1.0 / pa + 1.0 / pb)) / root
    return np.stack([np.arcsin(arg), v * f1 * darg_ds, v * f1 * darg_do])


_EVAL = {"rbf": _rbf_eval, "sigmoid": _sig_eval}
_TIME = {"rbf": _rbf_time_derivs, "sigmoid": _sig_time_derivs}
_PARAM = {"rbf": _rbf_param_grads, "sigmoid": _sig_param_grads}


def kernel_eval(spec: KernelSpec, a, b):
    """k(a, b); broadcasts over array-shaped time inputs."""
    return _EVAL[spec.kind](*spec.param_vector(), np.asarray(a), np.asarray(b))


def kernel_time_derivs(spec: KernelSpec, a, b):
    """(dk/da, dk/db, d2k/dadb) at (a, b); broadcasts like kernel_eval."""
    return _TIME[spec.kind](*spec.param_vector(), np.asarray(a), np.asarray(b))


def gram_matrix(spec: KernelSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return kernel_eval(spec, t[:, None], t[None, :])


def kernel_param_grads(spec: KernelSpec, t) -> np.ndarray:
    """Stack of dC/dp over the kernel's parameters, shape (n_params, N, N)."""
    t = np.asarray(t, dtype=float)
    return _PARAM[spec.kind](*spec.param_vector(), t[:, None], t[None, :])


def build_kernel_matrices(spec: KernelSpec, t, jitter_ladder=None) -> KernelMatrices:
    """Gram matrix plus derivative-process matrices D and A for one state.

    All solves against C go through a single Cholesky factor of C + jitter*I;
    no explicit inverse is formed.  A is symmetrized before being returned.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or (len(t) > 1 and np.any(np.diff(t) <= 0)):
        raise ValueError("time grid must be 1-D and strictly increasing")
    C = gram_matrix(spec, t)
    dCda, dCdb, d2Cdadb = kernel_time_derivs(spec, t[:, None], t[None, :])
    if jitter_ladder is None:
        L, jitter = chol_jitter(C)
    else:
        L, jitter = chol_jitter(C, ladder=jitter_ladder)
    # D = dCda C^{-1}  (solve on the transpose), A = d2Cdadb - D dCdb.
    D = chol_solve(L, dCda.T).T
    A = symmetrize(d2Cdadb - D @ dCdb)
    return KernelMatrices(
        C=C, dCda=dCda, dCdb=dCdb, d2Cdadb=d2Cdadb, D=D, A=A, jitter=jitter
    )
