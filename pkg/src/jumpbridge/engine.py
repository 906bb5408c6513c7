"""Euler-Maruyama simulation on a uniform grid.

Four dynamics share one kernel, X_{k+1} = X_k + (-rate X_k + u_k) dt + J_k with
u_k = -(A_k X_k + B_k):

* ``ou``          rate r, A = B = 0, unit jump intensity
* ``se``          rate r, A = B = 0, intensity max(1 + p X_k, 0)
* ``controlled``  rate r, finite-penalty feedback A_F, B_F
* ``bridge``      limit feedback; for p > 0 the drift rate is R = r - p M1
                  (``se_drift="reduced"``) or r (``se_drift="nominal"``)
                  and A, B are built from (R, m, x_hat)

Every path owns a PCG64 stream keyed by (seed, path_id). The stream is turned
into a pool of variates up front, so a path's output does not depend on how
paths are grouped into chunks or threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend as _backend
from .coefficients import BridgeModel, FiniteFCoefficients, LimitCoefficients
from .levy import ExpCompoundPoisson, TemperedStable, moments, stable_pool

KINDS = ("ou", "se", "controlled", "bridge")
SCHEMES = ("raw", "compensated")
SE_DRIFTS = ("reduced", "nominal")

# TS pools are n_steps long; keep one chunk's pools under this many bytes
_POOL_BYTES = 64 * 2**20


@dataclass(frozen=True)
class SimConfig:
    dt: float
    seed: int = 0
    scheme: str = "raw"
    se_drift: str = "reduced"
    horizon: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.se_drift not in SE_DRIFTS:
            raise ValueError(f"se_drift must be one of {SE_DRIFTS}")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError(f"dt = {self.dt} does not divide the horizon {self.horizon}")
        if int(self.seed) < 0:
            raise ValueError("seed must be >= 0")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)

    @property
    def grid(self) -> np.ndarray:
        n = self.n_steps
        return self.horizon * (np.arange(n + 1) / n)


@dataclass
class Path:
    grid: np.ndarray
    states: np.ndarray
    path_id: int
    terminal_value: float
    running_cost: float = 0.0
    rejections: int = 0


@dataclass
class Plan:
    """Everything the kernel needs apart from random input."""

    kind: str
    rate: float
    A: np.ndarray
    B: np.ndarray
    dt: float
    p: float
    m1: float
    compensated: bool
    driver: object
    x0: float
    n_steps: int
    params: dict = field(default_factory=dict)


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    """Independent stream for one path, derived from (seed, path_id)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path_id),))))


def build_plan(model: BridgeModel, config: SimConfig, kind: str, F: float | None = None) -> Plan:
    if kind not in KINDS:
        raise ValueError(f"unknown simulation kind {kind!r}")
    n = config.n_steps
    t = config.grid[:-1]
    p = model.p
    rate = model.r
    if kind == "ou":
        if p != 0:
            raise ValueError("simulate_ou needs p = 0; use the se kind")
    if kind in ("controlled", "bridge") and config.horizon != 1.0:
        raise ValueError("controlled and bridge dynamics live on the unit horizon")
    if kind in ("ou", "se"):
        A = np.zeros(n)
        B = np.zeros(n)
    elif kind == "controlled":
        if F is None or not F > 0:
            raise ValueError("controlled simulation needs F > 0")
        c = FiniteFCoefficients(model, F)
        A, B = np.asarray(c.A(t), float), np.asarray(c.B(t), float)
    else:
        c = LimitCoefficients.for_model(model)
        A, B = np.asarray(c.A(t), float), np.asarray(c.B(t), float)
        if p != 0 and config.se_drift == "reduced":
            rate = model.R
    return Plan(kind, rate, np.ascontiguousarray(A), np.ascontiguousarray(B), config.dt, p,
                moments(model.driver).m1, config.scheme == "compensated", model.driver,
                model.x0, n, dict(F=F))


def _driver_args(driver, dt):
    if isinstance(driver, ExpCompoundPoisson):
        return dict(kind=0, lam_over_eta=driver.lam / driver.eta, inv_eta=1.0 / driver.eta,
                    ss_unit=0.0, beta=0.0, inv_alpha=0.0)
    inv_alpha = 1.0 / driver.alpha
    return dict(kind=1, lam_over_eta=0.0, inv_eta=0.0,
                ss_unit=dt ** inv_alpha * driver.stable_scale, beta=driver.beta, inv_alpha=inv_alpha)


def _initial_pool_size(plan: Plan) -> int:
    driver = plan.driver
    if isinstance(driver, TemperedStable):
        return int(plan.n_steps * 1.05) + 64
    # expected arrivals with a rough allowance for state-dependent intensity
    level = abs(plan.x0) + moments(driver).m1 / max(plan.rate, 1e-12)
    mean = driver.total_mass * plan.n_steps * plan.dt * (1.0 + plan.p * level)
    return 1 + 2 * int(math.ceil(mean + 6.0 * math.sqrt(mean) + 8.0))


def _draw_pool(driver, rng: np.random.Generator, K: int):
    if isinstance(driver, ExpCompoundPoisson):
        return rng.standard_exponential(K), None
    s1, marks = stable_pool(rng.random(3 * K).reshape(K, 3), driver.alpha)
    return s1, marks


def _chunk_size(plan: Plan, backend, K: int) -> int:
    base = 256 if backend.name == "compiled" else 2048
    per_path = K * (16 if isinstance(plan.driver, TemperedStable) else 8)
    return max(1, min(base, _POOL_BYTES // max(per_path, 1)))


def _run_paths(plan: Plan, streams, rec_idx, backend, K: int):
    """Run one group of paths; ``streams`` yields a fresh generator per path."""
    m = len(streams)
    a = np.empty((m, K))
    b = np.empty((m, K)) if isinstance(plan.driver, TemperedStable) else np.empty((m, 0))
    for j, make in enumerate(streams):
        pa, pb = _draw_pool(plan.driver, make(), K)
        a[j] = pa
        if pb is not None:
            b[j] = pb
    out = dict(rec=np.empty((m, len(rec_idx))), terminal=np.empty(m), min=np.empty(m),
               cost=np.empty(m), rejections=np.zeros(m, dtype=np.int64))
    status = np.zeros(m, dtype=np.int32)
    d = _driver_args(plan.driver, plan.dt)
    backend.simulate_chunk(float(plan.x0), float(plan.rate), plan.A, plan.B, float(plan.dt), float(plan.p),
                           float(plan.m1), bool(plan.compensated), d["kind"], d["lam_over_eta"], d["inv_eta"],
                           d["ss_unit"], d["beta"], d["inv_alpha"], a, b, rec_idx,
                           out["rec"], out["terminal"], out["min"], out["cost"], out["rejections"], status)
    return out, status


def simulate_paths(plan: Plan, seed: int, path_ids, rec_idx=None, backend=None, workers: int = 1,
                   on_chunk=None) -> dict:
    """Simulate the given path ids; returns per-path arrays in ``path_ids`` order.

    ``rec_idx`` lists grid indices whose states are recorded (sorted; defaults
    to the terminal index only). ``on_chunk(start, out)`` is called in chunk
    order if given.
    """
    backend = backend if backend is not None else _backend.DEFAULT
    path_ids = np.asarray(path_ids, dtype=np.int64)
    rec_idx = np.ascontiguousarray(np.asarray([plan.n_steps] if rec_idx is None else rec_idx, dtype=np.intp))
    if rec_idx.size and (np.any(np.diff(rec_idx) < 0) or rec_idx[0] < 0 or rec_idx[-1] > plan.n_steps):
        raise ValueError("rec_idx must be sorted grid indices")
    K0 = _initial_pool_size(plan)
    size = _chunk_size(plan, backend, K0)
    starts = list(range(0, len(path_ids), size))

    def run(start):
        ids = path_ids[start:start + size]
        streams = [(lambda pid=pid: path_rng(seed, pid)) for pid in ids]
        out, status = _run_paths(plan, streams, rec_idx, backend, K0)
        for j in np.flatnonzero(status):
            K = K0
            while True:
                K *= 2
                one, st = _run_paths(plan, [streams[j]], rec_idx, backend, K)
                if st[0] == 0:
                    break
            for key in out:
                out[key][j] = one[key][0]
        return out

    n = len(path_ids)
    res = dict(rec=np.empty((n, len(rec_idx))), terminal=np.empty(n), min=np.empty(n),
               cost=np.empty(n), rejections=np.zeros(n, dtype=np.int64))

    def store(start, out):
        for key in res:
            res[key][start:start + len(out["terminal"])] = out[key]
        if on_chunk is not None:
            on_chunk(start, out)

    if workers <= 1 or len(starts) <= 1:
        for s in starts:
            store(s, run(s))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for s, out in zip(starts, pool.map(run, starts)):
                store(s, out)
    res["rec_idx"] = rec_idx
    return res


def _single(model, config, kind, rng, path_id, F=None, backend=None) -> Path:
    plan = build_plan(model, config, kind, F)
    rec_idx = np.arange(plan.n_steps + 1)
    backend = backend if backend is not None else _backend.DEFAULT
    if rng is None:
        out = simulate_paths(plan, config.seed, [path_id], rec_idx, backend)
    else:
        # user stream: rewind and redraw a larger pool if the first one runs out
        state = rng.bit_generator.state
        K = _initial_pool_size(plan)
        while True:
            rng.bit_generator.state = state
            out, st = _run_paths(plan, [lambda: rng], rec_idx, backend, K)
            if st[0] == 0:
                break
            K *= 2
    return Path(config.grid, out["rec"][0].copy(), int(path_id), float(out["terminal"][0]),
                float(out["cost"][0]), int(out["rejections"][0]))


def simulate_ou(model: BridgeModel, config: SimConfig, rng=None, path_id: int = 0, backend=None) -> Path:
    """Uncontrolled jump OU path, left-point Euler."""
    return _single(model, config, "ou", rng, path_id, backend=backend)


def simulate_se(model: BridgeModel, config: SimConfig, rng=None, path_id: int = 0, backend=None) -> Path:
    """Uncontrolled self-exciting path; intensity max(1 + p X, 0) frozen at the left endpoint."""
    return _single(model, config, "se", rng, path_id, backend=backend)


def simulate_controlled(model: BridgeModel, config: SimConfig, F: float, rng=None, path_id: int = 0,
                        backend=None) -> Path:
    """Finite-penalty optimally controlled path; ``running_cost`` holds sum u^2/2 dt."""
    return _single(model, config, "controlled", rng, path_id, F=F, backend=backend)


def simulate_bridge(model: BridgeModel, config: SimConfig, rng=None, path_id: int = 0, backend=None) -> Path:
    """Bridge path; the last step uses coefficients at t = 1 - dt."""
    return _single(model, config, "bridge", rng, path_id, backend=backend)
