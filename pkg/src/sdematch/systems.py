"""Benchmark SDE systems, path simulation and noisy observation sets.

Systems are Ito SDEs with parametric drift and a constant lower-triangular
diffusion matrix,

    dx(t) = f(x(t), theta) dt + G dw(t).

Drift callables are vectorized: they accept arrays of shape (..., K) and
return the same shape; their theta-Jacobians return (..., K, P).

Observation vectors follow a state-major layout throughout the package: with
Y of shape (K, N), the flat vector y = Y.reshape(K * N) holds all N values of
state 0 first, then state 1, and so on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class SimulationError(RuntimeError):
    """Raised when the integrator produces a non-finite state."""


class CsvFormatError(ValueError):
    """Malformed CSV input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class SdeSystem:
    """A parametric SDE benchmark: drift, its theta-Jacobian and ground truth."""

    name: str
    K: int
    P: int
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drift_grad_theta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_true: np.ndarray
    G_true: np.ndarray
    x0: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Dense simulated path: times (N,), states (K, N)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")


@dataclass(frozen=True)
class ObservationSet:
    """Observation times (N,) and noisy state values Y (K, N)."""

    times: np.ndarray
    Y: np.ndarray

    @property
    def y(self) -> np.ndarray:
        """State-major vectorization: rows of Y concatenated."""
        return self.Y.reshape(-1)

    @property
    def K(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]


def _simulate(system, theta, G, x0, t_end, dt, rng, n_paths, keep_path):
    """Euler-Maruyama core, vectorized over paths.

    Returns (times, paths) where paths has shape (n_paths, K, n_steps + 1)
    when keep_path, else the final states (n_paths, K).
    """
    theta = np.asarray(theta, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    x0 = np.asarray(x0, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > dt / 2:
        raise ValueError(f"dt={dt} does not divide t_end={t_end} to within one step")
    times = np.arange(n_steps + 1) * dt

    x = np.tile(x0, (n_paths, 1))
    sqrt_dt = np.sqrt(dt)
    out = np.empty((n_paths, system.K, n_steps + 1)) if keep_path else None
    if keep_path:
        out[:, :, 0] = x
    for i in range(n_steps):
        xi = rng.standard_normal((n_paths, system.K))
        x = x + system.drift(x, theta) * dt + sqrt_dt * (xi @ G.T)
        if not np.all(np.isfinite(x)):
            raise SimulationError(
                f"non-finite state at step {i + 1} (t={times[i + 1]:.6g})"
            )
        if keep_path:
            out[:, :, i + 1] = x
    return times, (out if keep_path else x)


def euler_maruyama(
    system: SdeSystem,
    theta,
    G,
    x0,
    t_end: float,
    dt: float,
    rng_seed: int,
) -> Trajectory:
    """Simulate one path of dx = f(x, theta) dt + G dw from x(0) = x0.

    The update is x_{n+1} = x_n + f(x_n, theta) dt + sqrt(dt) G xi_n with
    standard normal xi_n; deterministic given rng_seed.
    """
    rng = np.random.default_rng(rng_seed)
    times, paths = _simulate(system, theta, G, x0, t_end, dt, rng, 1, True)
    return Trajectory(times=times, states=paths[0])


def simulate_ensemble(
    system: SdeSystem,
    theta,
    G,
    x0,
    t_end: float,
    dt: float,
    n_paths: int,
    rng_seed: int,
) -> np.ndarray:
    """Final states x(t_end) of n_paths independent realizations, (n_paths, K)."""
    rng = np.random.default_rng(rng_seed)
    _, final = _simulate(system, theta, G, x0, t_end, dt, rng, n_paths, False)
    return final


def observe(
    traj: Trajectory,
    obs_times,
    sigma,
    rng_seed: int,
) -> ObservationSet:
    """Subsample a trajectory at obs_times and add state-wise Gaussian noise.

    Each requested time is matched to the nearest trajectory grid point and
    must land within half a grid step; sigma is a per-state noise standard
    deviation (scalar allowed).
    """
    obs_times = np.asarray(obs_times, dtype=float)
    K = traj.states.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (K,))
    dt = float(np.min(np.diff(traj.times)))
    idx = np.searchsorted(traj.times, obs_times)
    idx = np.clip(idx, 0, len(traj.times) - 1)
    left = np.clip(idx - 1, 0, None)
    idx = np.where(
        np.abs(traj.times[left] - obs_times) < np.abs(traj.times[idx] - obs_times),
        left,
        idx,
    )
    err = np.abs(traj.times[idx] - obs_times)
    if np.any(err > dt / 2 + 1e-12):
        bad = float(obs_times[np.argmax(err)])
        raise ValueError(f"observation time {bad:g} is outside the simulated grid")
    rng = np.random.default_rng(rng_seed)
    Y = traj.states[:, idx] + sigma[:, None] * rng.standard_normal((K, len(obs_times)))
    return ObservationSet(times=traj.times[idx], Y=Y)


# ---------------------------------------------------------------------------
# Benchmark systems
# ---------------------------------------------------------------------------


def _ou_drift(x, theta):
    return theta[0] * (theta[1] - x)


def _ou_grad(x, theta):
    g = np.empty(x.shape[:-1] + (1, 2))
    g[..., 0, 0] = theta[1] - x[..., 0]
    g[..., 0, 1] = theta[0]
    return g


def _lorenz_drift(x, theta):
    f = np.empty_like(x)
    f[..., 0] = theta[0] * (x[..., 1] - x[..., 0])
    f[..., 1] = theta[1] * x[..., 0] - x[..., 1] - x[..., 0] * x[..., 2]
    f[..., 2] = x[..., 0] * x[..., 1] - theta[2] * x[..., 2]
    return f


def _lorenz_grad(x, theta):
    g = np.zeros(x.shape[:-1] + (3, 3))
    g[..., 0, 0] = x[..., 1] - x[..., 0]
    g[..., 1, 1] = x[..., 0]
    g[..., 2, 2] = -x[..., 2]
    return g


def _lv_drift(x, theta):
    f = np.empty_like(x)
    f[..., 0] = theta[0] * x[..., 0] - theta[1] * x[..., 0] * x[..., 1]
    f[..., 1] = -theta[2] * x[..., 1] + theta[3] * x[..., 0] * x[..., 1]
    return f


def _lv_grad(x, theta):
    g = np.zeros(x.shape[:-1] + (2, 4))
    g[..., 0, 0] = x[..., 0]
    g[..., 0, 1] = -x[..., 0] * x[..., 1]
    g[..., 1, 2] = -x[..., 1]
    g[..., 1, 3] = x[..., 0] * x[..., 1]
    return g


def _dw_drift(x, theta):
    return theta[0] * x * (theta[1] - x**2)


def _dw_grad(x, theta):
    g = np.empty(x.shape[:-1] + (1, 2))
    u = x[..., 0]
    g[..., 0, 0] = u * (theta[1] - u**2)
    g[..., 0, 1] = theta[0] * u
    return g


def builtin_systems() -> list[SdeSystem]:
    """The four benchmark systems with their ground-truth configurations."""
    return [
        SdeSystem(
            name="ou",
            K=1,
            P=2,
            drift=_ou_drift,
            drift_grad_theta=_ou_grad,
            theta_true=np.array([0.5, 1.0]),
            G_true=np.array([[0.5]]),
            x0=np.array([10.0]),
        ),
        SdeSystem(
            name="lorenz63",
            K=3,
            P=3,
            drift=_lorenz_drift,
            drift_grad_theta=_lorenz_grad,
            theta_true=np.array([10.0, 28.0, 2.667]),
            G_true=np.sqrt(10.0) * np.eye(3),
            x0=np.array([1.0, 1.0, 1.0]),
        ),
        SdeSystem(
            name="lotka_volterra",
            K=2,
            P=4,
            drift=_lv_drift,
            drift_grad_theta=_lv_grad,
            theta_true=np.array([2.0, 1.0, 4.0, 1.0]),
            G_true=np.array([[0.2, 0.0], [0.1, 0.3]]),
            x0=np.array([3.0, 5.0]),
        ),
        SdeSystem(
            name="double_well",
            K=1,
            P=2,
            drift=_dw_drift,
            drift_grad_theta=_dw_grad,
            theta_true=np.array([0.1, 4.0]),
            G_true=np.array([[0.5]]),
            x0=np.array([0.0]),
        ),
    ]


def get_system(name: str) -> SdeSystem:
    for system in builtin_systems():
        if system.name == name:
            return system
    known = ", ".join(s.name for s in builtin_systems())
    raise KeyError(f"unknown system {name!r} (known: {known})")


# ---------------------------------------------------------------------------
# CSV serialization (header t,x1..xK; 17 significant digits)
# ---------------------------------------------------------------------------


def _write_csv(path, times, states):
    K = states.shape[0]
    header = "t," + ",".join(f"x{k + 1}" for k in range(K))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for n in range(len(times)):
            row = [f"{times[n]:.17g}"] + [f"{states[k, n]:.17g}" for k in range(K)]
            fh.write(",".join(row) + "\n")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    _write_csv(path, traj.times, traj.states)


def write_observations_csv(path, obs: ObservationSet) -> None:
    _write_csv(path, obs.times, obs.Y)


def _read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CsvFormatError(1, "empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "t" or len(header) < 2:
        raise CsvFormatError(1, f"expected header 't,x1,...', got {lines[0]!r}")
    n_cols = len(header)
    times, rows = [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            raise CsvFormatError(i, f"expected {n_cols} columns, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise CsvFormatError(i, f"non-numeric value in {line!r}") from None
        times.append(values[0])
        rows.append(values[1:])
    if not rows:
        raise CsvFormatError(2, "no data rows")
    return np.asarray(times), np.asarray(rows).T


def read_trajectory_csv(path) -> Trajectory:
    times, states = _read_csv(path)
    return Trajectory(times=times, states=states)


def read_observations_csv(path) -> ObservationSet:
    times, Y = _read_csv(path)
    return ObservationSet(times=times, Y=Y)
