"""Numerical checks of the closed forms and the simulator.

Each check returns a dict with ``name``, ``passed`` and the measured numbers.
They back the ``verify`` subcommand and the acceptance tests.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import coefficients as co
from .coefficients import BridgeModel
from .engine import SimConfig
from .levy import ExpCompoundPoisson, TemperedStable, moments, quadrature_moment, sample_increment
from .moments import bridge_moments, ou_bridge_moments
from .montecarlo import run_ensemble, terminal_convergence_sweep, variance_decay_check

PAPER_DRIVER = ExpCompoundPoisson(2.0, 50.0)
DECILE_TIMES = tuple(k / 10 for k in range(1, 10))


def _result(name, passed, **info):
    return dict(name=name, passed=bool(passed), **info)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out["seconds"] = round(time.perf_counter() - t0, 3)
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def rk4_riccati(r: float, m1: float, x_hat: float, F: float, h: float, times):
    """Backward RK4 of dA/dt = A^2 + 2rA, dB/dt = (r + A)B - M1 A from (F, -F x_hat) at t = 1."""
    n = round(1.0 / h)
    want = {round((1.0 - t) / h): t for t in times}
    a, b = F, -F * x_hat
    out = {}
    if 0 in want:
        out[want[0]] = (a, b)

    def f(a, b):
        return a * a + 2.0 * r * a, (r + a) * b - m1 * a

    for k in range(1, n + 1):
        k1 = f(a, b)
        k2 = f(a - 0.5 * h * k1[0], b - 0.5 * h * k1[1])
        k3 = f(a - 0.5 * h * k2[0], b - 0.5 * h * k2[1])
        k4 = f(a - h * k3[0], b - h * k3[1])
        a -= h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        b -= h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if k in want:
            out[want[k]] = (a, b)
    return out


@_timed
def riccati_consistency(r=10.0, F=100.0, x_hat=1.0, h=1e-5, tol=1e-6, corrupt=None):
    model = BridgeModel(r, PAPER_DRIVER, 0.0, x_hat)
    times = [k / 20 for k in range(20)]
    ref = rk4_riccati(r, model.m1, x_hat, F, h, times)
    worst = 0.0
    for t, (a, b) in ref.items():
        fa = co.finite_F_A(model, F, t) * (1 + 1e-3 if corrupt == "A" else 1)
        fb = co.finite_F_B(model, F, t) * (1 + 1e-3 if corrupt == "B" else 1)
        worst = max(worst, abs(fa - a) / abs(a), abs(fb - b) / abs(b))
    return _result("riccati_consistency", worst <= tol, max_rel_error=worst, tol=tol)


@_timed
def limit_consistency(r=10.0, x_hat=1.0, F=1e12, tol=1e-6):
    model = BridgeModel(r, PAPER_DRIVER, 0.0, x_hat)
    worst_a = worst_b = 0.0
    for t in (0.0, 0.25, 0.5, 0.75, 0.99):
        la = co.limit_A(model.R, t)
        lb = co.limit_B(model.R, model.m, x_hat, t)
        worst_a = max(worst_a, abs(co.finite_F_A(model, F, t) - la) / la)
        worst_b = max(worst_b, abs(co.finite_F_B(model, F, t) - lb) / abs(lb))
    return _result("limit_consistency", max(worst_a, worst_b) <= tol, max_rel_error_A=worst_a,
                   max_rel_error_B=worst_b, tol=tol)


@_timed
def kernel_limits(r=10.0, x_hat=1.0, tol=1e-4, corrupt=None):
    rows = []
    for delta in (1e-6, 1e-8):
        k = co.kernels(r, 1.0 - delta)
        i1 = k.I1 * (1 + 1e-3 if corrupt == "I1" else 1)
        rows.append(dict(delta=delta, e1=abs(2 * r * x_hat * k.K * i1 - x_hat), e2=abs(k.K * k.I2),
                         e3=abs(k.K * k.I3)))
    first, second = rows
    ok = all(first[e] <= tol for e in ("e1", "e2", "e3"))
    shrink = all(second[e] < first[e] for e in ("e1", "e2", "e3"))
    return _result("kernel_limits", ok and shrink, rows=rows, tol=tol, shrinking=shrink)


@_timed
def mean_agreement(r=10.0, dt=1e-6, tol=1e-4, end_tol=1e-3):
    sup = 0.0
    ends = []
    for x_hat in (0.0, 1.0):
        model = BridgeModel(r, PAPER_DRIVER, 0.0, x_hat)
        curves = ou_bridge_moments(model, dt)
        closed = co.closed_form_mean(model, curves.grid)
        sup = max(sup, float(np.max(np.abs(curves.mean - closed))))
        end = co.closed_form_mean(model, 1.0 - 1e-4)
        ends.append(dict(x_hat=x_hat, mean=end, error=abs(end - x_hat)))
    ok = sup <= tol and all(e["error"] <= end_tol for e in ends)
    return _result("mean_agreement", ok, sup_norm=sup, tol=tol, endpoint=ends, end_tol=end_tol)


@_timed
def sampler_moments(n=1_000_000, dt=1e-3, seed=9, tol_q=1e-10):
    rows = []
    ok = True
    for meas in (PAPER_DRIVER, TemperedStable(3.23, 0.031, 0.87)):
        rng = np.random.default_rng(seed)
        x = sample_increment(meas, dt, 1.0, rng, size=n)
        jm = moments(meas)
        mean, var = x.mean(), x.var(ddof=1)
        se_mean = x.std(ddof=1) / math.sqrt(n)
        # SE of the sample variance from the fourth central moment
        d = x - mean
        se_var = math.sqrt(max(np.mean(d**4) - var**2, 0.0) / n)
        q_err = max(abs(quadrature_moment(meas, k) - meas.moment(k)) / meas.moment(k) for k in (1, 2))
        z_mean = (mean - jm.m1 * dt) / se_mean
        z_var = (var - jm.m2 * dt) / se_var
        passed = abs(z_mean) <= 3 and abs(z_var) <= 3 and q_err <= tol_q
        ok &= passed
        rows.append(dict(driver=meas.to_dict(), mean=mean, expected_mean=jm.m1 * dt, z_mean=z_mean,
                         var=var, expected_var=jm.m2 * dt, z_var=z_var, quadrature_rel_error=q_err))
    return _result("sampler_moments", ok, rows=rows)


def _bridge_model(p=0.0):
    return BridgeModel(10.0, PAPER_DRIVER, 0.0, 0.0, p)


@_timed
def terminal_convergence(n_paths=20_000, dts=(1 / 5_000, 1 / 10_000, 1 / 20_000), seed=0, scheme="raw",
                         err_max=5e-4, slack=0.10, workers=1):
    rows = terminal_convergence_sweep(_bridge_model(), SimConfig(dts[0], seed, scheme), n_paths, dts, workers)
    mono = all(b["err"] <= a["err"] * (1 + slack) for a, b in zip(rows, rows[1:]))
    final = rows[-1]["err"]
    return _result("terminal_convergence", mono and final <= err_max, rows=rows, err=final, err_max=err_max,
                   monotone=mono)


@_timed
def se_floor_and_error(p=2.0, n_paths=20_000, dt=1 / 20_000, seed=0, scheme="raw", se_drift="reduced",
                       factor=3.0, workers=1):
    cfg = SimConfig(dt, seed, scheme, se_drift)
    ou = run_ensemble(_bridge_model(), cfg, n_paths, "bridge", times=(1.0,), workers=workers)
    se = run_ensemble(_bridge_model(p), cfg, n_paths, "bridge", times=(1.0,), workers=workers)
    ratio = se.err / ou.err if ou.err > 0 else math.inf
    floor = -1.0 / p
    ok = (1 / factor) <= ratio <= factor and se.min_over_all_paths > floor
    return _result("se_floor_and_error", ok, p=p, err_ou=ou.err, err_se=se.err, ratio=ratio,
                   min_over_all_paths=se.min_over_all_paths, floor=floor)


@_timed
def floor_violation_control(p=6.0, n_paths=20_000, dt=1 / 20_000, seed=0, scheme="raw", se_drift="reduced",
                            workers=1):
    """Negative control: paths of the p = 6 SE bridge are expected to leave (-1/p, inf)."""
    rep = run_ensemble(_bridge_model(p), SimConfig(dt, seed, scheme, se_drift), n_paths, "bridge",
                       times=(1.0,), workers=workers)
    violated = rep.min_over_all_paths <= -1.0 / p
    return _result("floor_violation_control", violated, expected_fail=True, p=p,
                   min_over_all_paths=rep.min_over_all_paths, floor=-1.0 / p)


def _finite(z):
    return z if math.isfinite(z) else None


def _z(diff, se, scale):
    """diff / se; a zero standard error counts as agreement only when diff is rounding."""
    if se > 0:
        return diff / se
    return 0.0 if abs(diff) <= 1e-12 * (1.0 + abs(scale)) else math.inf


@_timed
def mc_vs_ode_moments(p_values=(0.0, 2.0), n_paths=20_000, dt=1 / 20_000, seed=0, scheme="raw",
                      se_drift="reduced", z_max=3.0, workers=1):
    rows = []
    ok = True
    for p in p_values:
        model = _bridge_model(p)
        rep = run_ensemble(model, SimConfig(dt, seed, scheme, se_drift), n_paths, "bridge",
                           times=DECILE_TIMES, workers=workers)
        curves = bridge_moments(model, dt, se_drift)
        for j, t in enumerate(rep.times):
            mu, var = curves.at(t)
            zm = _z(rep.mean_curve[j] - mu, rep.mean_se[j], mu)
            zv = _z(rep.var_curve[j] - var, rep.var_se[j], mu * mu)
            ok &= abs(zm) <= z_max and abs(zv) <= z_max
            rows.append(dict(p=p, t=t, mc_mean=rep.mean_curve[j], ode_mean=mu, z_mean=_finite(zm),
                             mc_var=rep.var_curve[j], ode_var=var, z_var=_finite(zv)))
    zs = [math.inf if z is None else abs(z) for r in rows for z in (r["z_mean"], r["z_var"])]
    worst = _finite(max(zs))
    return _result("mc_vs_ode_moments", ok, worst_z=worst, z_max=z_max, rows=rows)


@_timed
def variance_decay(n_paths=20_000, dt=1 / 20_000, deltas=(1e-1, 1e-2), seed=0, scheme="raw", factor=3.0,
                   workers=1):
    rows = variance_decay_check(_bridge_model(), SimConfig(dt, seed, scheme), n_paths, deltas, workers)

    def stable(key):
        vals = [r[key] for r in rows]
        return all(v > 0 for v in vals) and max(vals) / min(vals) <= factor

    ok = stable("mc_ratio") and stable("ode_ratio")
    return _result("variance_decay", ok, rows=rows, factor=factor)


@_timed
def value_function_consistency(F=100.0, n_paths=20_000, dt=1 / 20_000, seed=0, scheme="raw", z_max=3.0,
                               workers=1):
    model = _bridge_model()
    phi = co.value_function(model, F, 0.0, model.x0)
    rep = run_ensemble(model, SimConfig(dt, seed, scheme), n_paths, "controlled", F=F, times=(1.0,),
                       workers=workers)
    z = _z(rep.realized_cost_mean - phi, rep.realized_cost_se, phi)
    return _result("value_function_consistency", abs(z) <= z_max, phi=phi, cost_mean=rep.realized_cost_mean,
                   cost_se=rep.realized_cost_se, z=_finite(z))


def run_all(task, seed: int, scheme: str = "raw", se_drift: str = "reduced", n_paths: int = 20_000,
            dt: float = 1 / 20_000, workers: int = 1) -> list[dict]:
    """The full suite as configured by a verify task block; ensembles use ``n_paths`` and ``dt``."""
    n = n_paths
    mc = dict(seed=seed, scheme=scheme, workers=workers)
    out = [
        riccati_consistency(corrupt=task.corrupt if task.corrupt in ("A", "B") else None),
        limit_consistency(),
        kernel_limits(corrupt=task.corrupt if task.corrupt == "I1" else None),
        mean_agreement(),
        sampler_moments(seed=seed),
        terminal_convergence(n_paths=n, dts=tuple(task.sweep_dts), **mc),
        se_floor_and_error(p=task.se_p, n_paths=n, dt=dt, se_drift=se_drift, **mc),
        mc_vs_ode_moments(p_values=(0.0, task.se_p), n_paths=n, dt=dt, se_drift=se_drift, **mc),
        variance_decay(n_paths=n, dt=dt, deltas=tuple(task.variance_deltas), **mc),
        value_function_consistency(n_paths=n, dt=dt, **mc),
    ]
    if task.floor_control_p is not None:
        out.append(floor_violation_control(p=task.floor_control_p, n_paths=n, dt=dt, se_drift=se_drift, **mc))
    return out
