import math

import numpy as np
import pytest

from jumpbridge import backend as be
from jumpbridge import engine
from jumpbridge.coefficients import BridgeModel
from jumpbridge.engine import (
    SimConfig,
    build_plan,
    simulate_bridge,
    simulate_controlled,
    simulate_ou,
    simulate_paths,
    simulate_se,
)
from jumpbridge.levy import ExpCompoundPoisson, TemperedStable
from jumpbridge.montecarlo import run_ensemble

EXP = ExpCompoundPoisson(2.0, 50.0)
TS = TemperedStable(3.23, 0.031, 0.87)
ZERO = ExpCompoundPoisson(0.0, 1.0)
needs_compiled = pytest.mark.skipif(be.COMPILED is None, reason="compiled extension not built")


# -- config -----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=0.3), dict(dt=1e-3, scheme="implicit"),
                                dict(dt=1e-3, se_drift="other"), dict(dt=1e-3, seed=-1), dict(dt=math.nan)])
def test_simconfig_invariants(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_simconfig_grid():
    cfg = SimConfig(1 / 8)
    assert cfg.n_steps == 8
    assert cfg.grid[0] == 0.0 and cfg.grid[-1] == 1.0 and len(cfg.grid) == 9


def test_horizon_only_for_uncontrolled():
    with pytest.raises(ValueError):
        build_plan(BridgeModel(10.0, EXP), SimConfig(0.01, horizon=2.0), "bridge")
    with pytest.raises(ValueError):
        build_plan(BridgeModel(10.0, EXP, p=1.0), SimConfig(0.01), "ou")
    with pytest.raises(ValueError):
        build_plan(BridgeModel(10.0, EXP), SimConfig(0.01), "controlled", F=0.0)


# -- single paths ------------------------------------------------------------------

def test_path_shape_and_start():
    m = BridgeModel(10.0, EXP, x0=0.25, x_hat=1.0)
    cfg = SimConfig(1e-3, seed=3)
    for path in (simulate_ou(m, cfg), simulate_se(m.replace(p=1.0), cfg), simulate_bridge(m, cfg),
                 simulate_controlled(m, cfg, F=10.0)):
        assert path.states[0] == 0.25
        assert len(path.states) == cfg.n_steps + 1 == len(path.grid)
        assert path.terminal_value == path.states[-1]


def test_zero_mass_ou_is_deterministic_decay():
    m = BridgeModel(10.0, ZERO, x0=1.0)
    cfg = SimConfig(1e-4)
    path = simulate_ou(m, cfg)
    exact_euler = (1.0 - 10.0 * 1e-4) ** np.arange(cfg.n_steps + 1)
    assert np.allclose(path.states, exact_euler, rtol=1e-12, atol=0)
    assert np.max(np.abs(path.states - np.exp(-10.0 * cfg.grid))) < 10 * cfg.dt


def test_zero_dynamics_bridge_is_identically_zero():
    path = simulate_bridge(BridgeModel(10.0, ZERO), SimConfig(1e-4))
    assert np.all(path.states == 0.0)


def test_se_with_p0_equals_ou_bitwise():
    for drv in (EXP, TS):
        m = BridgeModel(10.0, drv, x0=0.1)
        cfg = SimConfig(1e-3, seed=5)
        assert np.array_equal(simulate_ou(m, cfg).states, simulate_se(m, cfg).states)


def test_se_bridge_with_p0_equals_ou_bridge_bitwise():
    cfg = SimConfig(1e-3, seed=8)
    a = simulate_bridge(BridgeModel(10.0, EXP, x_hat=0.3), cfg)
    b = simulate_bridge(BridgeModel(10.0, EXP, x_hat=0.3, p=0.0), cfg)
    assert np.array_equal(a.states, b.states)


def test_determinism_and_stream_independence():
    # infinite activity, so every stream changes the path
    m = BridgeModel(10.0, TS)
    cfg = SimConfig(1e-3, seed=17)
    a, b = simulate_bridge(m, cfg, path_id=4), simulate_bridge(m, cfg, path_id=4)
    assert np.array_equal(a.states, b.states)
    c = simulate_bridge(m, cfg, path_id=5)
    d = simulate_bridge(m, SimConfig(1e-3, seed=18), path_id=4)
    assert not np.array_equal(a.states, c.states)
    assert not np.array_equal(a.states, d.states)


def test_user_rng_stream_is_used():
    m = BridgeModel(10.0, TS)
    cfg = SimConfig(1e-3)
    a = simulate_ou(m, cfg, rng=np.random.default_rng(1))
    b = simulate_ou(m, cfg, rng=np.random.default_rng(1))
    c = simulate_ou(m, cfg, rng=np.random.default_rng(2))
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_se_paths_stay_nonnegative():
    m = BridgeModel(10.0, EXP, x0=0.0, p=3.0)
    rep = run_ensemble(m, SimConfig(1e-3, seed=2), 500, "se", times=(1.0,))
    assert rep.min_over_all_paths >= 0.0


def test_last_step_uses_left_coefficients_only():
    # the plan never evaluates the limit coefficients at t = 1
    plan = build_plan(BridgeModel(10.0, EXP, x_hat=1.0), SimConfig(1e-4), "bridge")
    assert len(plan.A) == 10_000 and np.all(np.isfinite(plan.A)) and np.all(np.isfinite(plan.B))


# -- backends, chunking, workers, pool regrowth -------------------------------------

CASES = [
    ("bridge", BridgeModel(10.0, EXP, x0=0.1, x_hat=0.5), None, "raw", "reduced"),
    ("bridge", BridgeModel(10.0, EXP, p=2.0), None, "compensated", "reduced"),
    ("bridge", BridgeModel(10.0, EXP, p=2.0), None, "raw", "nominal"),
    ("se", BridgeModel(15.8, TS, x0=0.5, p=0.14), None, "raw", "reduced"),
    ("ou", BridgeModel(15.8, TS), None, "compensated", "reduced"),
    ("controlled", BridgeModel(10.0, EXP, x_hat=1.0), 100.0, "raw", "reduced"),
]


def _run(case, backend, workers=1, ids=np.arange(40)):
    kind, model, F, scheme, drift = case
    cfg = SimConfig(1 / 2000, seed=99, scheme=scheme, se_drift=drift)
    plan = build_plan(model, cfg, kind, F)
    return simulate_paths(plan, 99, ids, np.array([0, 500, 1999, 2000]), backend, workers)


@needs_compiled
@pytest.mark.parametrize("case", CASES, ids=lambda c: f"{c[0]}-{c[3]}-{c[4]}")
def test_backends_bitwise_equal(case):
    a, b = _run(case, be.COMPILED), _run(case, be.PYTHON)
    for key in ("rec", "terminal", "min", "cost", "rejections"):
        assert np.array_equal(a[key], b[key]), key


@pytest.mark.parametrize("case", CASES[:4], ids=lambda c: f"{c[0]}-{c[3]}")
def test_worker_count_does_not_change_output(case, monkeypatch):
    monkeypatch.setattr(engine, "_chunk_size", lambda plan, backend, K: 7)
    a = _run(case, be.DEFAULT, workers=1)
    b = _run(case, be.DEFAULT, workers=4)
    for key in ("rec", "terminal", "min", "cost", "rejections"):
        assert np.array_equal(a[key], b[key])


def test_subset_of_path_ids_matches_full_run():
    full = _run(CASES[0], be.DEFAULT)
    part = _run(CASES[0], be.DEFAULT, ids=np.array([3, 17, 39]))
    assert np.array_equal(part["terminal"], full["terminal"][[3, 17, 39]])


@pytest.mark.parametrize("case", [CASES[1], CASES[3]], ids=["exp_cp", "tempered"])
def test_pool_regrowth_is_transparent(case, monkeypatch):
    ref = _run(case, be.DEFAULT)
    monkeypatch.setattr(engine, "_initial_pool_size", lambda plan: 3)
    small = _run(case, be.DEFAULT)
    assert np.array_equal(ref["terminal"], small["terminal"])
    assert np.array_equal(ref["rec"], small["rec"])


def test_rec_idx_validation():
    plan = build_plan(BridgeModel(10.0, EXP), SimConfig(0.01), "bridge")
    with pytest.raises(ValueError):
        simulate_paths(plan, 0, [0], np.array([5, 2]))
    with pytest.raises(ValueError):
        simulate_paths(plan, 0, [0], np.array([101]))


# -- statistical properties ----------------------------------------------------------

def _mean_check(rep, j, want, z=3.0):
    assert abs(rep.mean_curve[j] - want) <= z * rep.mean_se[j], (rep.mean_curve[j], want, rep.mean_se[j])


def test_ou_mean_at_one():
    m = BridgeModel(10.0, EXP, x0=0.0)
    rep = run_ensemble(m, SimConfig(1e-3, seed=1), 20_000, "ou", times=(1.0,))
    _mean_check(rep, 0, m.m1 / m.r * (1 - math.exp(-10.0)))


def test_ou_long_run_mean():
    m = BridgeModel(10.0, EXP, x0=0.0)
    rep = run_ensemble(m, SimConfig(1e-3, seed=2, horizon=5.0), 20_000, "ou", times=(5.0,))
    _mean_check(rep, 0, m.m1 / m.r)


def test_se_tempered_stable_stationary_mean():
    m = BridgeModel(15.8, TS, p=0.14)
    m = m.replace(x0=m.m1 / m.R)
    rep = run_ensemble(m, SimConfig(1e-3, seed=3, horizon=1.0), 4_000, "se", times=(1.0,))
    _mean_check(rep, 0, m.m1 / m.R)


def test_controlled_small_F_tends_to_ou():
    m = BridgeModel(10.0, EXP, x0=0.2, x_hat=1.0)
    cfg = SimConfig(1e-3, seed=4)
    ou = simulate_ou(m, cfg).states
    gaps = [np.max(np.abs(simulate_controlled(m, cfg, F).states - ou)) for F in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-6


def test_controlled_err_decreases_in_F():
    m = BridgeModel(10.0, EXP, x_hat=0.5)
    errs = [run_ensemble(m, SimConfig(1e-3, seed=6), 2_000, "controlled", F=F, times=(1.0,)).err
            for F in (1e2, 1e4, 1e6)]
    assert errs[0] > errs[1] > errs[2]


def test_ou_weak_order_one():
    # Euler bias of the mean at t = 0.1 from x0 = 1 against the analytic mean
    m = BridgeModel(10.0, EXP, x0=1.0)
    t = 0.1
    want = math.exp(-10.0 * t) + m.m1 / m.r * -math.expm1(-10.0 * t)
    dts = [1e-3, 5e-4, 2.5e-4]
    bias = []
    for dt in dts:
        rep = run_ensemble(m, SimConfig(dt, seed=12), 4_000, "ou", times=(t,))
        bias.append(abs(rep.mean_curve[0] - want))
    slope = np.polyfit(np.log(dts), np.log(bias), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)
