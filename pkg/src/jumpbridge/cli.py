"""``jumpbridge`` command line: simulate | moments | verify | calibrate.

Exit codes: 0 success, 1 verification failures, 2 configuration or input
errors, 3 runtime guard trips and calibration failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, checks
from .calibration import MONTH_SECONDS, CalibrationError, IngestError, calibrate, ingest_csv, synthetic_series
from .coefficients import LimitCoefficients
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .engine import build_plan, simulate_paths
from .levy import QuadratureError
from .moments import bridge_moments
from .montecarlo import run_ensemble

REPORT_TIMES = tuple(k / 100 for k in range(101))


class RuntimeGuard(RuntimeError):
    pass


def _provenance(command: str, cfg: RunConfig) -> dict:
    return {"command": command, "config": cfg.echo(), "version": __version__}


def _write_csv(path, header, rows, provenance):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# provenance: " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=2, default=float)
        fh.write("\n")


def cmd_simulate(cfg: RunConfig, out: str, workers: int) -> int:
    model, sim, task = cfg.model.build(), cfg.sim.build(), cfg.task.simulate
    report, paths = run_ensemble(model, sim, cfg.sim.n_paths, task.kind, F=task.F, times=REPORT_TIMES,
                                 workers=workers, return_paths=True)
    if not np.all(np.isfinite(paths["terminal"])):
        raise RuntimeGuard("non-finite terminal values; reduce dt")
    prov = _provenance("simulate", cfg)
    data = report.to_dict()
    data.pop("backend")
    data["config"] = cfg.echo()
    _write_json(os.path.join(out, "report.json"), data)
    _write_csv(os.path.join(out, "terminal.csv"), ["path_id", "x1"],
               ((j, x) for j, x in enumerate(paths["terminal"].tolist())), prov)
    n_write = min(cfg.sim.paths_written, cfg.sim.n_paths)
    n = sim.n_steps
    rec = np.unique(np.append(np.arange(0, n + 1, cfg.sim.decimation), n))
    grid = sim.grid
    rows = []
    if n_write:
        sub = simulate_paths(build_plan(model, sim, task.kind, task.F), sim.seed, np.arange(n_write), rec,
                             workers=workers)
        for j in range(n_write):
            rows.extend((grid[i], j, x) for i, x in zip(rec.tolist(), sub["rec"][j].tolist()))
    _write_csv(os.path.join(out, "paths.csv"), ["t", "path_id", "x"], rows, prov)
    return 0


def cmd_moments(cfg: RunConfig, out: str, workers: int) -> int:
    model, sim = cfg.model.build(), cfg.sim.build()
    curves = bridge_moments(model, sim.dt, sim.se_drift)
    keep = np.unique(np.append(np.arange(0, len(curves.grid), cfg.sim.decimation), len(curves.grid) - 1))
    prov = _provenance("moments", cfg)
    var = curves.variance
    _write_csv(os.path.join(out, "moments.csv"), ["t", "mean", "second", "variance"],
               ((curves.grid[k], curves.mean[k], curves.second[k], var[k]) for k in keep), prov)
    coeffs = LimitCoefficients.for_model(model)
    t = np.linspace(0.0, 1.0 - sim.dt, cfg.task.moments.coefficient_points)
    A, B = coeffs.A(t), coeffs.B(t)
    _write_csv(os.path.join(out, "coefficients.csv"), ["t", "A", "B"], zip(t, A, B), prov)
    return 0


def cmd_verify(cfg: RunConfig, out: str, workers: int) -> int:
    results = checks.run_all(cfg.task.verify, cfg.sim.seed, cfg.sim.scheme, cfg.sim.se_drift,
                             n_paths=cfg.sim.n_paths, dt=cfg.sim.dt, workers=workers)
    for r in results:
        r.pop("seconds", None)
    ok = all(r["passed"] for r in results)
    _write_json(os.path.join(out, "verify.json"), {"passed": ok, "checks": results, "config": cfg.echo()})
    for r in results:
        tag = "PASS" if r["passed"] else "FAIL"
        note = " (expected-fail control)" if r.get("expected_fail") else ""
        print(f"{tag} {r['name']}{note}")
    return 0 if ok else 1


def cmd_calibrate(cfg: RunConfig, out: str, workers: int) -> int:
    task = cfg.task.calibrate
    if task is None:
        raise ConfigError("task.calibrate block is required for the calibrate subcommand")
    model = cfg.model.build()
    if task.input is not None:
        ts = ingest_csv(task.input, task.resample_interval, task.gap_threshold)
    else:
        syn = task.synthetic
        ts = synthetic_series(model, syn.interval_seconds / MONTH_SECONDS, syn.n_samples, syn.substeps,
                              seed=cfg.sim.seed)
    result, fit = calibrate(ts, task.family, task.se, task.decay_identifies, task.max_lag, task.n_starts)
    data = result.to_dict()
    data["config"] = cfg.echo()
    if task.synthetic is not None:
        data["truth"] = {"r": model.r, "p": model.p, "driver": model.driver.to_dict()}
    _write_json(os.path.join(out, "calibration.json"), data)
    _write_csv(os.path.join(out, "acf.csv"), ["lag", "acf", "fitted"], zip(fit.lags, fit.acf, fit.fitted),
               _provenance("calibrate", cfg))
    return 0


COMMANDS = {"simulate": cmd_simulate, "moments": cmd_moments, "verify": cmd_verify, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpbridge", description="Jump OU bridge toolkit.")
    parser.add_argument("--version", action="version", version=f"jumpbridge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate an ensemble; writes paths.csv, terminal.csv, report.json",
        "moments": "moment curves and coefficients; writes moments.csv, coefficients.csv",
        "verify": "run the numerical check suite; writes verify.json",
        "calibrate": "fit r, driver and p to a series; writes calibration.json, acf.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, metavar="U64", help="override sim.seed")
        p.add_argument("--workers", type=int, default=1, metavar="N",
                       help="worker threads (outputs do not depend on it)")
        p.add_argument("--out", default=None, metavar="DIR", help="output directory (overrides output_dir)")
        p.add_argument("--paper-scale", action="store_true",
                       help="use dt = 1/200000 and n_paths = 200000")
        p.add_argument("--scheme", choices=["raw", "compensated"], default=None,
                       help="jump drift convention (override sim.scheme)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.seed, args.scheme, args.paper_scale)
        out = args.out or cfg.output_dir
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.workers)
    except (ConfigError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, RuntimeGuard, ArithmeticError, QuadratureError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
