"""Ensembles of paths and the statistics built on them.

Standard errors are batch means over 20 contiguous batches of path ids.
Reductions run over full per-path arrays in path-id order, so a report does
not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backend as _backend
from .coefficients import BridgeModel
from .engine import SimConfig, build_plan, simulate_paths
from .moments import bridge_moments

N_BATCHES = 20
DECILES = tuple(k / 10 for k in range(11))


def batch_means(values: np.ndarray, n_batches: int = N_BATCHES, stat=np.mean, min_batch: int = 1):
    """(point estimate over all values, batch-means standard error).

    Fewer batches are used when there are not ``min_batch`` samples per batch;
    with a single batch the standard error is reported as 0.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    nb = max(1, min(n_batches, values.shape[0] // min_batch))
    per = np.array([stat(b, axis=0) for b in np.array_split(values, nb)])
    se = per.std(axis=0, ddof=1) / math.sqrt(nb) if nb > 1 else np.zeros(per.shape[1:])
    return stat(values, axis=0), se


def _var(x, axis=0):
    return np.var(x, axis=axis, ddof=1)


@dataclass
class EnsembleReport:
    kind: str
    n_paths: int
    seed: int
    backend: str
    err: float
    err_se: float
    times: list
    mean_curve: list
    mean_se: list
    var_curve: list
    var_se: list
    min_over_all_paths: float
    terminal_mean: float
    realized_cost_mean: float | None = None
    realized_cost_se: float | None = None
    rejections_per_step: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def record_indices(config: SimConfig, times) -> np.ndarray:
    n = config.n_steps
    idx = np.array([round(t / config.horizon * n) for t in times], dtype=np.intp)
    if np.any(idx < 0) or np.any(idx > n):
        raise ValueError("record times outside the horizon")
    return idx


def run_ensemble(model: BridgeModel, config: SimConfig, n_paths: int, which: str = "bridge",
                 F: float | None = None, times=DECILES, workers: int = 1, backend=None,
                 return_paths: bool = False):
    """Simulate ``n_paths`` paths and reduce them to an ``EnsembleReport``.

    With ``return_paths=True`` the raw per-path arrays (terminal values and
    recorded states) are returned alongside the report.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be ≥ 2")
    backend = backend if backend is not None else _backend.DEFAULT
    plan = build_plan(model, config, which, F)
    times = sorted(set(float(t) for t in times))
    rec_idx = record_indices(config, times)
    out = simulate_paths(plan, config.seed, np.arange(n_paths), rec_idx, backend, workers)

    target = model.x_hat if which in ("bridge", "controlled") else 0.0
    err, err_se = batch_means(np.abs(out["terminal"] - target))
    mean, mean_se = batch_means(out["rec"])
    var, var_se = batch_means(out["rec"], stat=_var, min_batch=2)
    cost_mean = cost_se = None
    if which == "controlled":
        cost = out["cost"] + 0.5 * F * (out["terminal"] - model.x_hat) ** 2
        cost_mean, cost_se = batch_means(cost)
    report = EnsembleReport(
        kind=which, n_paths=int(n_paths), seed=int(config.seed), backend=backend.name,
        err=float(err), err_se=float(err_se), times=[float(config.grid[i]) for i in rec_idx],
        mean_curve=mean.tolist(), mean_se=mean_se.tolist(), var_curve=var.tolist(), var_se=var_se.tolist(),
        min_over_all_paths=float(out["min"].min()), terminal_mean=float(out["terminal"].mean()),
        realized_cost_mean=None if cost_mean is None else float(cost_mean),
        realized_cost_se=None if cost_se is None else float(cost_se),
        rejections_per_step=float(out["rejections"].sum() / (n_paths * config.n_steps)),
        config=dict(model=_model_dict(model), dt=config.dt, seed=int(config.seed), scheme=config.scheme,
                    se_drift=config.se_drift, horizon=config.horizon, F=F),
    )
    return (report, out) if return_paths else report


def _model_dict(model: BridgeModel) -> dict:
    return dict(r=model.r, p=model.p, x0=model.x0, x_hat=model.x_hat, driver=model.driver.to_dict())


def terminal_convergence_sweep(model: BridgeModel, base_config: SimConfig, n_paths: int, dts,
                               workers: int = 1, backend=None) -> list[dict]:
    """Err of the bridge for each step size (same seed per row).

    Rows carry ``dt``, ``err`` and ``err_se``.
    """
    dts = list(dts)
    if any(b > a for a, b in zip(dts, dts[1:])):
        raise ValueError("dts must be sorted in decreasing order")
    rows = []
    for dt in dts:
        cfg = SimConfig(dt, base_config.seed, base_config.scheme, base_config.se_drift)
        rep = run_ensemble(model, cfg, n_paths, "bridge", times=(1.0,), workers=workers, backend=backend)
        rows.append(dict(dt=dt, err=rep.err, err_se=rep.err_se))
    return rows


def convergence_exponent(rows) -> float:
    """Least-squares slope gamma of log err against log dt."""
    dt = np.log([r["dt"] for r in rows])
    err = np.log([r["err"] for r in rows])
    return float(np.polyfit(dt, err, 1)[0])


def variance_decay_check(model: BridgeModel, config: SimConfig, n_paths: int, deltas,
                         workers: int = 1, backend=None) -> list[dict]:
    """Var[X*_{1-delta}] from Monte Carlo and from the moment ODEs, with ratios to delta."""
    deltas = [float(d) for d in deltas]
    if any(d < 10 * config.dt for d in deltas):
        raise ValueError("each delta must be at least 10 dt")
    times = [1.0 - d for d in deltas]
    rep = run_ensemble(model, config, n_paths, "bridge", times=times, workers=workers, backend=backend)
    curves = bridge_moments(model, config.dt, config.se_drift, backend)
    rows = []
    for d in deltas:
        j = int(np.argmin(np.abs(np.asarray(rep.times) - (1.0 - d))))
        _, ode_var = curves.at(1.0 - d)
        rows.append(dict(delta=d, mc_var=rep.var_curve[j], mc_se=rep.var_se[j], ode_var=ode_var,
                         mc_ratio=rep.var_curve[j] / d, ode_ratio=ode_var / d))
    return rows
