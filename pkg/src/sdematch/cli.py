"""Command-line harness: simulate, fit, infer, benchmark, report.

Exit codes: 0 on success, 1 when inference fails (divergence, factorization
failure, or more than 25% of benchmark realizations failing), 2 for usage
and I/O errors.

``--config`` accepts either a path to a TOML experiment file or the name of
a built-in system (ou, lotka_volterra, double_well, lorenz63), in which case
the recorded defaults are used and the resolved config is written next to
the outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, config as configmod
from ._linalg import CholeskyError
from .bench import derive_seed
from .gpfit import GpFitResult, fit
from .mmd import InferenceDivergence
from .systems import (
    CsvFormatError,
    get_system,
    read_observations_csv,
    write_observations_csv,
    write_trajectory_csv,
)


class UsageError(Exception):
    pass


def _resolve_config(value: str) -> configmod.ExperimentConfig:
    if value is None:
        raise UsageError("--config is required (path or built-in system name)")
    path = Path(value)
    if path.exists():
        try:
            return configmod.load_file(path)
        except Exception as exc:
            raise UsageError(f"cannot parse config {value}: {exc}") from exc
    try:
        return configmod.default_config(value)
    except KeyError:
        raise UsageError(
            f"config {value!r} is neither a file nor a built-in system name"
        ) from None


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "method", None) is not None:
        changes["method"] = args.method
    if getattr(args, "realizations", None) is not None:
        changes["realizations"] = args.realizations
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_resolve_config(args.config), args)
    system = get_system(cfg.system)
    out = _out_dir(args)
    traj, obs = bench.simulate_observations(cfg, system, cfg.base_seed)
    write_trajectory_csv(out / "trajectory.csv", traj)
    write_observations_csv(out / "observations.csv", obs)
    meta = {
        "system": cfg.system,
        "theta_true": [float(v) for v in system.theta_true],
        "G_true": [[float(v) for v in row] for row in system.G_true],
        "x0": [float(v) for v in system.x0],
        "seed": cfg.base_seed,
        "dt": cfg.dt,
        "n_observations": cfg.observation.n,
        "noise": list(cfg.observation.noise),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    configmod.write_file(out / "config.toml", cfg)
    print(f"wrote {out / 'trajectory.csv'}, {out / 'observations.csv'}")
    return 0


def cmd_fit(args) -> int:
    cfg = _apply_overrides(_resolve_config(args.config), args)
    obs = read_observations_csv(args.observations)
    out = _out_dir(args)
    fitted = fit(obs, opts=bench.fit_options(cfg, cfg.base_seed))
    (out / "fit.json").write_text(fitted.to_json() + "\n")
    print(f"log evidence {fitted.log_evidence:.4f}; wrote {out / 'fit.json'}")
    return 0


def _write_trace(path, result):
    with open(path, "w") as fh:
        for i in range(len(result.objective_trace)):
            fh.write(
                json.dumps(
                    {
                        "iter": i,
                        "theta": [float(v) for v in result.theta_trace[i + 1]],
                        result.objective_name: float(result.objective_trace[i]),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def cmd_infer(args) -> int:
    cfg = _apply_overrides(_resolve_config(args.config), args)
    obs = read_observations_csv(args.observations)
    fitted = GpFitResult.from_json(Path(args.fit).read_text(), obs)
    system = get_system(cfg.system)
    out = _out_dir(args)
    t0 = time.perf_counter()
    try:
        result = bench.run_inference(obs, fitted, system, cfg, cfg.base_seed)
    except InferenceDivergence as exc:
        if exc.trace is not None:
            theta_trace, obj_trace = exc.trace
            with open(out / "trace.jsonl", "w") as fh:
                for i in range(len(obj_trace)):
                    fh.write(
                        json.dumps(
                            {
                                "iter": i,
                                "theta": [float(v) for v in theta_trace[i + 1]],
                                "objective": float(obj_trace[i]),
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
        print(f"inference diverged: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    _write_trace(out / "trace.jsonl", result)
    doc = {
        "method": cfg.method,
        "theta": [float(v) for v in result.theta],
        "H": [[float(v) for v in row] for row in fitted.H],
        "wall_clock_s": wall,
        "seed": cfg.base_seed,
    }
    (out / "result.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"theta = {np.array2string(result.theta, precision=4)}; wrote {out / 'result.json'}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _apply_overrides(_resolve_config(args.config), args)
    if cfg.system == "lorenz63" and not args.experimental:
        raise UsageError(
            "the lorenz63 benchmark is costly and reporting-only; rerun with --experimental"
        )
    threads = cfg.threads if cfg.threads > 0 else (os.cpu_count() or 1)
    out = _out_dir(args)
    result = bench.run_benchmark(cfg, threads=threads, experimental=args.experimental)
    (out / "report.json").write_text(result.to_json() + "\n")
    (out / "timing.json").write_text(
        json.dumps(result.timing, indent=2, sort_keys=True) + "\n"
    )
    configmod.write_file(out / "config.toml", cfg)
    table = bench.render_table(result.report)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    failed = len(result.report["failures"])
    if failed > 0.25 * cfg.realizations:
        print(f"{failed}/{cfg.realizations} realizations failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text())
    bench.validate_report(report)
    print(bench.render_table(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdematch",
        description="Drift/diffusion estimation for SDEs by derivative sample matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, obs=False, fit_file=False):
        p.add_argument("--config", required=True, help="TOML path or built-in system name")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", help="output directory (default: cwd)")
        if obs:
            p.add_argument("observations", help="observations CSV")
        if fit_file:
            p.add_argument("fit", help="fit JSON from the fit command")

    p = sub.add_parser("simulate", help="simulate a path and write observation CSVs")
    common(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="fit the observation model to a CSV")
    common(p, obs=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("infer", help="estimate drift parameters from a fit")
    common(p, obs=True, fit_file=True)
    p.add_argument("--method", choices=["mars", "ares"])
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("benchmark", help="run R independent pipelines and aggregate")
    common(p)
    p.add_argument("--method", choices=["mars", "ares"])
    p.add_argument("--realizations", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--experimental", action="store_true")
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("report", help="render a report JSON as a table")
    p.add_argument("report", help="report.json path")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, CsvFormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InferenceDivergence, CholeskyError) as exc:
        print(f"inference failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
