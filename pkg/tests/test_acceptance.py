"""Acceptance criteria 1-12 at their stated tolerances.

Each test records its measured numbers; the terminal summary prints one
PASS/FAIL line per criterion. Monte Carlo criteria use SEED, fixed up front.
The full-size terminal-error run is opt-in: JUMPBRIDGE_PAPER_SCALE=1.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from jumpbridge import cli
from jumpbridge import coefficients as co
from jumpbridge.calibration import MONTH_SECONDS, calibrate, synthetic_series
from jumpbridge.coefficients import BridgeModel
from jumpbridge.engine import SimConfig
from jumpbridge.levy import ExpCompoundPoisson, TemperedStable, moments, quadrature_moment, sample_increment
from jumpbridge.moments import bridge_moments, ou_bridge_moments, se_bridge_moments
from jumpbridge.montecarlo import run_ensemble, terminal_convergence_sweep, variance_decay_check

SEED = 12345
EXP = ExpCompoundPoisson(2.0, 50.0)
TS = TemperedStable(3.23, 0.031, 0.87)
DESK_DT = 1 / 20_000
DESK_N = 20_000
DECILES = tuple(k / 10 for k in range(1, 10))
PAPER_SCALE = os.environ.get("JUMPBRIDGE_PAPER_SCALE") == "1"

# stated runtime budget per criterion, seconds
BUDGET = {1: 1, 2: 1, 3: 1, 4: 10, 5: 120, 6: 120, 7: 180, 8: 60, 9: 60, 10: 120, 11: 300, 12: 120}

LOG: dict = {}


def record(criterion, part, passed, t0, budget=None, **numbers):
    secs = time.perf_counter() - t0
    budget = BUDGET[criterion] if budget is None else budget
    in_time = secs <= budget
    ok = bool(passed) and in_time
    LOG.setdefault(criterion, []).append((part, ok, secs))
    status = "PASS" if ok else "FAIL"
    late = "" if in_time else f" over budget {budget} s"
    LOG[criterion][-1] += (budget,)
    print(f"criterion {criterion} [{part}]: {status} {secs:.2f} s{late} {json.dumps(numbers, default=float)}")
    return ok


def summary_lines():
    out = []
    for c in sorted(LOG):
        parts = LOG[c]
        desk = [s for _, _, s, b in parts if b == BUDGET[c]]
        total = sum(s for _, _, s, _ in parts)
        ok = all(p for _, p, _, _ in parts) and sum(desk) <= BUDGET[c]
        detail = "; ".join(f"{name}: {'pass' if p else 'fail'}" for name, p, _, _ in parts)
        out.append(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'} {total:.1f} s ({detail})")
    return out


def _z(diff, se):
    if se > 0:
        return diff / se
    return 0.0 if diff == 0 else math.inf


# -- 1. Riccati consistency -----------------------------------------------------------

def _rk4_backward(r, m1, x_hat, F, h):
    """Backward RK4 from t = 1 on the grid t_k = 1 - k h; returns {k: (A, B)}."""
    def f(a, b):
        return a * a + 2.0 * r * a, (r + a) * b - m1 * a

    n = round(1.0 / h)
    a, b = F, -F * x_hat
    out = {0: (a, b)}
    for k in range(1, n + 1):
        k1 = f(a, b)
        k2 = f(a - 0.5 * h * k1[0], b - 0.5 * h * k1[1])
        k3 = f(a - 0.5 * h * k2[0], b - 0.5 * h * k2[1])
        k4 = f(a - h * k3[0], b - h * k3[1])
        a -= h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
        b -= h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
        if k % 5_000 == 0:
            out[k] = (a, b)
    return out


def test_criterion_1_riccati_consistency():
    t0 = time.perf_counter()
    r, F, h = 10.0, 100.0, 1e-5
    m = BridgeModel(r, EXP, x_hat=1.0)
    worst = 0.0
    for k, (a, b) in _rk4_backward(r, m.m1, m.x_hat, F, h).items():
        t = 1.0 - k * h
        worst = max(worst, abs(co.finite_F_A(m, F, t) - a) / abs(a), abs(co.finite_F_B(m, F, t) - b) / abs(b))
    assert record(1, "max rel error <= 1e-6", worst <= 1e-6, t0, max_rel_error=worst)


# -- 2. limit consistency -------------------------------------------------------------

def test_criterion_2_limit_consistency():
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP, x_hat=1.0)
    worst_a = worst_b = 0.0
    for t in (0.0, 0.25, 0.5, 0.75, 0.99):
        la, lb = co.limit_A(m.R, t), co.limit_B(m.R, m.m, m.x_hat, t)
        worst_a = max(worst_a, abs(co.finite_F_A(m, 1e12, t) - la) / la)
        worst_b = max(worst_b, abs(co.finite_F_B(m, 1e12, t) - lb) / abs(lb))
    assert record(2, "A and B within 1e-6", max(worst_a, worst_b) <= 1e-6, t0, rel_A=worst_a, rel_B=worst_b)


# -- 3. kernel limits -----------------------------------------------------------------

def test_criterion_3_kernel_limits():
    t0 = time.perf_counter()
    r, x_hat = 10.0, 1.0
    errs = {}
    for delta in (1e-6, 1e-8):
        k = co.kernels(r, 1.0 - delta)
        errs[delta] = (abs(2 * r * x_hat * k.K * k.I1 - 1.0), abs(k.K * k.I2), abs(k.K * k.I3))
    within = all(e <= 1e-4 for e in errs[1e-6])
    shrink = all(b < a for a, b in zip(errs[1e-6], errs[1e-8]))
    assert record(3, "limits at 1 - 1e-6 and shrinking", within and shrink, t0,
                  errors_1e6=errs[1e-6], errors_1e8=errs[1e-8])


# -- 4. closed-form mean vs forward Euler ---------------------------------------------

def _euler_mean(m, dt):
    n = round(1.0 / dt)
    t = np.arange(n) * dt
    A = co.limit_A(m.r, t).tolist()
    B = co.limit_B(m.r, m.m1, m.x_hat, t).tolist()
    e = m.x0
    out = [e]
    r, m1 = m.r, m.m1
    for k in range(n - 1):
        e = e + dt * (-(r + A[k]) * e - B[k] + m1)
        out.append(e)
    return t, np.array(out)


def test_criterion_4_mean_agreement():
    t0 = time.perf_counter()
    sup, ends = 0.0, []
    for x_hat in (0.0, 1.0):
        m = BridgeModel(10.0, EXP, x0=0.0, x_hat=x_hat)
        t, euler = _euler_mean(m, 1e-6)
        sup = max(sup, float(np.max(np.abs(co.closed_form_mean(m, t) - euler))))
        ends.append(abs(float(co.closed_form_mean(m, 1.0 - 1e-4)) - x_hat))
    ok = sup <= 1e-4 and max(ends) <= 1e-3
    assert record(4, "sup <= 1e-4, endpoint <= 1e-3", ok, t0, sup_norm=sup, endpoint_errors=ends)


# -- 5. desk-scale terminal error -----------------------------------------------------

def test_criterion_5_desk_terminal_error():
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP, x0=0.0, x_hat=0.0)
    dts = [1 / 5_000, 1 / 10_000, 1 / 20_000]
    rows = terminal_convergence_sweep(m, SimConfig(dts[0], SEED), DESK_N, dts)
    errs = [r["err"] for r in rows]
    mono = all(b <= a * 1.10 for a, b in zip(errs, errs[1:]))
    ok = errs[-1] <= 5e-4 and mono
    assert record(5, "desk Err <= 5e-4 and monotone", ok, t0, errs=errs)


@pytest.mark.paper_scale
@pytest.mark.skipif(not PAPER_SCALE, reason="set JUMPBRIDGE_PAPER_SCALE=1")
def test_criterion_5_paper_scale_factor_three():
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP, x0=0.0, x_hat=0.0)
    rep = run_ensemble(m, SimConfig(1 / 200_000, SEED), 200_000, "bridge", times=(1.0,))
    ratio = rep.err / 1.91e-5
    assert record(5, "full size (dt 1/200000, N 200000) within factor 3 of 1.91e-5", 1 / 3 <= ratio <= 3, t0,
                  budget=math.inf, err=rep.err, ratio=ratio)


# -- 6. SE floor and terminal error ---------------------------------------------------

def test_criterion_6_se_floor_and_error():
    t0 = time.perf_counter()
    cfg = SimConfig(DESK_DT, SEED)
    ou = run_ensemble(BridgeModel(10.0, EXP), cfg, DESK_N, "bridge", times=(1.0,))
    se = run_ensemble(BridgeModel(10.0, EXP, p=2.0), cfg, DESK_N, "bridge", times=(1.0,))
    ratio = se.err / ou.err if ou.err > 0 else math.inf
    ok = 1 / 3 <= ratio <= 3 and se.min_over_all_paths > -0.5
    assert record(6, "p = 2 Err ratio and floor", ok, t0, err_ou=ou.err, err_se=se.err, ratio=ratio,
                  min_over_all_paths=se.min_over_all_paths)


def test_criterion_6_p6_floor_violation_control():
    t0 = time.perf_counter()
    # negative control: p = 6 is expected to leave (-1/p, inf)
    rep = run_ensemble(BridgeModel(10.0, EXP, p=6.0), SimConfig(DESK_DT, SEED), DESK_N, "bridge", times=(1.0,))
    violated = rep.min_over_all_paths <= -1 / 6
    assert record(6, "p = 6 violates the floor", violated, t0, min_over_all_paths=rep.min_over_all_paths,
                  floor=-1 / 6)


# -- 7. MC vs ODE moments -------------------------------------------------------------

@pytest.mark.parametrize("p", [0.0, 2.0], ids=["ou", "se"])
def test_criterion_7_mc_vs_ode_moments(p):
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP, p=p)
    rep = run_ensemble(m, SimConfig(DESK_DT, SEED), DESK_N, "bridge", times=DECILES)
    curves = ou_bridge_moments(m, DESK_DT) if p == 0 else se_bridge_moments(m, DESK_DT)
    zs = []
    for j, t in enumerate(rep.times):
        mu, var = curves.at(t)
        zs.append((_z(rep.mean_curve[j] - mu, rep.mean_se[j]), _z(rep.var_curve[j] - var, rep.var_se[j])))
    worst = max(max(abs(a), abs(b)) for a, b in zs)
    assert record(7, f"p = {p:g} within 3 SE", worst <= 3.0, t0, worst_z=worst,
                  z_mean=[round(a, 2) for a, _ in zs], z_var=[round(b, 2) for _, b in zs])


# -- 8. variance decay ----------------------------------------------------------------

def test_criterion_8_variance_decay():
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP)
    rows = variance_decay_check(m, SimConfig(DESK_DT, SEED), DESK_N, [1e-1, 1e-2])

    def stable(key):
        vals = [r[key] for r in rows]
        return all(v > 0 for v in vals) and max(vals) / min(vals) <= 3.0

    ok = stable("mc_ratio") and stable("ode_ratio")
    assert record(8, "Var/delta stable within 3", ok, t0, mc_ratio=[r["mc_ratio"] for r in rows],
                  ode_ratio=[r["ode_ratio"] for r in rows])


# -- 9. sampler correctness -----------------------------------------------------------

@pytest.mark.parametrize("driver", [EXP, TS], ids=["exp_cp", "tempered_stable"])
def test_criterion_9_sampler(driver):
    t0 = time.perf_counter()
    n, dt = 1_000_000, 1e-3
    x = sample_increment(driver, dt, 1.0, np.random.default_rng(SEED), size=n)
    mom = moments(driver)
    mean, var = x.mean(), x.var(ddof=1)
    se_mean = x.std(ddof=1) / math.sqrt(n)
    se_var = math.sqrt(max(np.mean((x - mean) ** 4) - var**2, 0.0) / n)
    z_mean, z_var = _z(mean - mom.m1 * dt, se_mean), _z(var - mom.m2 * dt, se_var)
    q_err = max(abs(quadrature_moment(driver, k) - v) / v for k, v in ((1, mom.m1), (2, mom.m2)))
    ok = abs(z_mean) <= 3 and abs(z_var) <= 3 and q_err <= 1e-10
    assert record(9, driver.kind, ok, t0, z_mean=z_mean, z_var=z_var, quadrature_rel_error=q_err)


# -- 10. value function ----------------------------------------------------------------

def test_criterion_10_value_function():
    t0 = time.perf_counter()
    m = BridgeModel(10.0, EXP, x0=0.0, x_hat=0.0)
    F = 100.0
    phi = float(co.value_function(m, F, 0.0, m.x0))
    rep = run_ensemble(m, SimConfig(DESK_DT, SEED), DESK_N, "controlled", F=F, times=(1.0,))
    z = _z(rep.realized_cost_mean - phi, rep.realized_cost_se)
    assert record(10, "realized cost within 3 SE of Phi(0, x0)", abs(z) <= 3, t0, phi=phi,
                  cost=rep.realized_cost_mean, se=rep.realized_cost_se, z=z)


# -- 11. calibration round trip ---------------------------------------------------------

def test_criterion_11_round_trip_ou():
    t0 = time.perf_counter()
    truth = BridgeModel(10.0, EXP)
    ts = synthetic_series(truth, 0.05, 10_000_000, substeps=10, seed=SEED)
    res, _ = calibrate(ts, "exp_cp")
    err_r = abs(res.r - 10.0) / 10.0
    err_l = abs(res.driver["lambda"] - 2.0) / 2.0
    err_e = abs(res.driver["eta"] - 50.0) / 50.0
    ok = err_r <= 0.10 and err_l <= 0.15 and err_e <= 0.15
    assert record(11, "OU r, lambda, eta", ok, t0, r=res.r, driver=res.driver, rel_errors=[err_r, err_l, err_e])


def test_criterion_11_round_trip_se_p():
    t0 = time.perf_counter()
    truth = BridgeModel(15.8, TS, p=0.14)
    ts = synthetic_series(truth, 3600 / MONTH_SECONDS, 1_000_000, substeps=4, seed=SEED)
    res, _ = calibrate(ts, "tempered_stable", se=True, decay_identifies="R")
    ok = abs(res.p - 0.14) <= 0.05
    assert record(11, "SE p within 0.05", ok, t0, p=res.p, r=res.r, driver=res.driver)


# -- 12. determinism -------------------------------------------------------------------

def _cli_config(tmp_path):
    data = {
        "model": {"r": 10.0, "p": 0.0, "x0": 0.0, "x_hat": 0.0,
                  "driver": {"type": "exp_cp", "lambda": 2.0, "eta": 50.0}},
        "sim": {"dt": 1e-3, "n_paths": 500, "seed": SEED, "decimation": 10, "paths_written": 5},
        "task": {
            "verify": {"sweep_dts": [2e-3, 1e-3], "variance_deltas": [0.1, 0.01]},
            "calibrate": {"synthetic": {"interval_seconds": 43200, "n_samples": 20_000, "substeps": 2},
                          "n_starts": 2},
        },
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_criterion_12_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = _cli_config(tmp_path)
    same = True
    for command in ("simulate", "moments", "verify", "calibrate"):
        dirs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 3)):
            out = tmp_path / f"{command}-{tag}"
            cli.main([command, "--config", cfg, "--out", str(out), "--workers", str(workers)])
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names
        for other in dirs[1:]:
            assert sorted(p.name for p in other.iterdir()) == names
            same &= all((dirs[0] / n).read_bytes() == (other / n).read_bytes() for n in names)
    assert record(12, "byte-identical across runs and --workers", same, t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
