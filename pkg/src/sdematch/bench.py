"""Multi-realization benchmark runner and report aggregation.

A benchmark runs R independent simulate -> fit -> infer pipelines with seeds
base_seed + i and reports per-quantity medians and standard deviations over
the successful realizations.  Each realization derives sub-seeds for its
phases from its own seed, so results do not depend on scheduling; worker
threads share nothing.

Wall-clock numbers are kept out of the report dictionary (they go into a
separate timing dictionary) so that a report is byte-for-byte reproducible.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ares import AresConfig, ares_infer
from .config import ExperimentConfig
from .gpfit import FitOptions, GpFitResult, fit
from .mmd import MarsConfig, mars_infer
from .systems import SdeSystem, SimulationError, euler_maruyama, get_system, observe

PHASE_SIMULATE, PHASE_OBSERVE, PHASE_FIT, PHASE_INFER = 0, 1, 2, 3
MAX_SIMULATION_ATTEMPTS = 64


def derive_seed(*parts) -> int:
    """Stable 64-bit sub-seed from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass
class BenchmarkReport:
    """Aggregated medians/stds plus per-phase wall-clock totals."""

    report: dict
    timing: dict

    def to_json(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True)


def simulate_observations(config: ExperimentConfig, system: SdeSystem, seed: int):
    """Simulate one benchmark path and observe it.

    Paths that blow up (possible for Lotka-Volterra, where additive noise can
    push a population negative and the bilinear drift then diverges) are
    discarded and regenerated with a fresh sub-seed: benchmark data is
    conditioned on non-exploding trajectories.  Deterministic given seed.
    """
    last_error = None
    for attempt in range(MAX_SIMULATION_ATTEMPTS):
        try:
            traj = euler_maruyama(
                system,
                system.theta_true,
                system.G_true,
                system.x0,
                t_end=config.observation.t_end,
                dt=config.dt,
                rng_seed=derive_seed(seed, PHASE_SIMULATE, attempt),
            )
            break
        except SimulationError as exc:
            last_error = exc
    else:
        raise SimulationError(
            f"no finite path in {MAX_SIMULATION_ATTEMPTS} attempts: {last_error}"
        )
    obs = observe(
        traj,
        config.observation.times,
        np.asarray(config.observation.noise),
        rng_seed=derive_seed(seed, PHASE_OBSERVE),
    )
    return traj, obs


def fit_options(config: ExperimentConfig, seed: int) -> FitOptions:
    g = config.gpfit
    return FitOptions(
        kernel=g.kernel,
        lr=g.learning_rate,
        n_iters=g.n_iters,
        n_restarts=g.n_restarts,
        seed=derive_seed(seed, PHASE_FIT),
    )


def infer_config(config: ExperimentConfig, seed: int):
    box = dict(
        theta_init_low=tuple(config.theta_init_low),
        theta_init_high=tuple(config.theta_init_high),
    )
    if config.method == "mars":
        m = config.mars
        return MarsConfig(
            learning_rate=m.learning_rate,
            n_iters=m.n_iters,
            batch_size=m.batch_size,
            alphas=tuple(m.alphas),
            seed=derive_seed(seed, PHASE_INFER),
            **box,
        )
    if config.method == "ares":
        a = config.ares
        return AresConfig(
            learning_rate=a.learning_rate,
            critic_learning_rate=a.critic_learning_rate,
            n_iters=a.n_iters,
            clip=a.clip,
            batch_size=a.batch_size,
            n_critic=a.n_critic,
            init_scale=a.init_scale,
            seed=derive_seed(seed, PHASE_INFER),
            **box,
        )
    raise ValueError(f"unknown method {config.method!r}")


def run_inference(obs, fitted: GpFitResult, system, config: ExperimentConfig, seed: int):
    cfg = infer_config(config, seed)
    if config.method == "mars":
        return mars_infer(obs, fitted, system, cfg)
    return ares_infer(obs, fitted, system, cfg)


def run_realization(config: ExperimentConfig, index: int) -> dict:
    """One simulate -> fit -> infer pipeline; returns result and timings."""
    system = get_system(config.system)
    seed = config.base_seed + index
    t0 = time.perf_counter()
    _, obs = simulate_observations(config, system, seed)
    t1 = time.perf_counter()
    fitted = fit(obs, opts=fit_options(config, seed))
    t2 = time.perf_counter()
    result = run_inference(obs, fitted, system, config, seed)
    t3 = time.perf_counter()
    return {
        "index": index,
        "seed": seed,
        "ok": True,
        "theta": [float(v) for v in result.theta],
        "H": [[float(v) for v in row] for row in fitted.H],
        "log_evidence": float(fitted.log_evidence),
        "_timing": {"simulate": t1 - t0, "fit": t2 - t1, "infer": t3 - t2},
    }


def _aggregate(values):
    """(median, std) with population std; (None, None) when empty."""
    if len(values) == 0:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(np.median(arr)), float(np.std(arr))


def run_benchmark(
    config: ExperimentConfig,
    threads: int = 1,
    experimental: bool = False,
) -> BenchmarkReport:
    system = get_system(config.system)
    R = config.realizations

    outcomes: list = [None] * R

    def work(i):
        try:
            return run_realization(config, i)
        except Exception as exc:  # noqa: BLE001 - reported per realization
            return {
                "index": i,
                "seed": config.base_seed + i,
                "ok": False,
                "error": f"{type(exc).__name__}: {exc}",
            }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, res in enumerate(pool.map(work, range(R))):
                outcomes[i] = res
    else:
        for i in range(R):
            outcomes[i] = work(i)

    successes = [o for o in outcomes if o["ok"]]
    failures = [
        {"index": o["index"], "seed": o["seed"], "error": o["error"]}
        for o in outcomes
        if not o["ok"]
    ]

    thetas = np.array([o["theta"] for o in successes]) if successes else np.empty((0, system.P))
    Hs = (
        np.array([o["H"] for o in successes])
        if successes
        else np.empty((0, system.K, system.K))
    )
    H_true = system.G_true.T @ system.G_true

    parameters = []
    for p in range(system.P):
        med, std = _aggregate(thetas[:, p])
        parameters.append(
            {
                "name": f"theta{p}",
                "true": float(system.theta_true[p]),
                "median": med,
                "std": std,
            }
        )
    H_entries = []
    for i in range(system.K):
        for j in range(system.K):
            med, std = _aggregate(Hs[:, i, j])
            H_entries.append(
                {
                    "name": f"H{i + 1}{j + 1}",
                    "true": float(H_true[i, j]),
                    "median": med,
                    "std": std,
                }
            )

    timing = {"simulate": 0.0, "fit": 0.0, "infer": 0.0}
    per_realization = []
    for o in outcomes:
        entry = {k: v for k, v in o.items() if not k.startswith("_")}
        if o["ok"]:
            for phase, secs in o["_timing"].items():
                timing[phase] += secs
        per_realization.append(entry)

    report = {
        "system": config.system,
        "method": config.method,
        "kernel": config.gpfit.kernel,
        "base_seed": config.base_seed,
        "experimental": bool(experimental),
        "realizations_requested": R,
        "realizations_succeeded": len(successes),
        "theta_true": [float(v) for v in system.theta_true],
        "H_true": [[float(v) for v in row] for row in H_true],
        "parameters": parameters,
        "H": H_entries,
        "failures": failures,
        "per_realization": per_realization,
    }
    validate_report(report)
    return BenchmarkReport(report=report, timing=timing)


def validate_report(report: dict) -> None:
    import jsonschema

    schema = json.loads(
        resources.files("sdematch").joinpath("schemas/report_schema.json").read_text()
    )
    jsonschema.validate(report, schema)


def render_table(report: dict) -> str:
    """Human-readable summary, one row per parameter and H entry."""
    lines = [
        f"system: {report['system']}   method: {report['method']}   "
        f"kernel: {report['kernel']}",
        f"realizations: {report['realizations_succeeded']}/"
        f"{report['realizations_requested']} ok   base seed: {report['base_seed']}",
        "",
        f"{'quantity':<10}{'truth':>10}    {'median ± std':<24}",
    ]

    def fmt(row):
        if row["median"] is None:
            return f"{row['name']:<10}{row['true']:>10.4g}    (no successful runs)"
        return (
            f"{row['name']:<10}{row['true']:>10.4g}    "
            f"{row['median']:.3f} ± {row['std']:.3f}"
        )

    lines += [fmt(r) for r in report["parameters"]]
    lines += [fmt(r) for r in report["H"]]
    if report["failures"]:
        lines.append("")
        lines.append(f"failures: {len(report['failures'])}")
        for f in report["failures"]:
            lines.append(f"  realization {f['index']} (seed {f['seed']}): {f['error']}")
    return "\n".join(lines)
