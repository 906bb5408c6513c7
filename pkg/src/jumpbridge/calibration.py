"""Calibration from discharge-style series.

Time is measured in months of 30 days. The reversion rate comes from a least
squares fit of exp(-kappa k dt) to the empirical autocorrelation; the jump
driver comes from matching stationary mean, variance and third central moment.
For the self-exciting model the gain p is estimated first, from how often
large jump residuals occur as a function of the current level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy import optimize, special

from .coefficients import BridgeModel
from .engine import SimConfig, build_plan, simulate_paths
from .levy import ExpCompoundPoisson, TemperedStable
from .moments import stationary_moments

MONTH_SECONDS = 30 * 86400
FAMILIES = ("exp_cp", "tempered_stable")
# one-sided 1% critical value of the boundary LR test (chi2_1 at 2%)
LR_CRITICAL = 5.411894431054


class IngestError(ValueError):
    """Malformed input series; ``rows`` holds (line number, message) pairs."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class CalibrationError(RuntimeError):
    pass


@dataclass
class TimeSeries:
    """Uniformly sampled series, possibly split into segments at long gaps.

    ``timestamps`` are integer seconds since the Unix epoch; ``breaks`` holds
    the indices where a new segment starts (0 is implicit).
    """

    timestamps: np.ndarray
    values: np.ndarray
    interval: int
    breaks: list = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) == 0:
            raise IngestError("empty series")
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def interval_months(self) -> float:
        return self.interval / MONTH_SECONDS

    def segments(self):
        edges = [0] + sorted(self.breaks) + [len(self.values)]
        return [self.values[a:b] for a, b in zip(edges, edges[1:]) if b > a]


# -- CSV ingestion -------------------------------------------------------------

def _parse_time(text: str) -> int:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    ts = dt.timestamp()
    if ts != int(ts):
        raise ValueError("sub-second timestamps are not supported")
    return int(ts)


def _format_time(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def read_raw_csv(path):
    """Rows of (epoch seconds, discharge); raises IngestError listing bad lines."""
    times, values, bad = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = [f.strip() for f in fields]
                if header != ["timestamp", "discharge"]:
                    raise IngestError(f"{path}:{lineno}: header must be 'timestamp,discharge'",
                                      [(lineno, "bad header")])
                continue
            if len(fields) != 2:
                bad.append((lineno, f"expected 2 fields, got {len(fields)}"))
                continue
            try:
                t = _parse_time(fields[0])
            except ValueError as exc:
                bad.append((lineno, f"bad timestamp {fields[0]!r}: {exc}"))
                continue
            try:
                v = float(fields[1])
            except ValueError:
                bad.append((lineno, f"bad discharge {fields[1]!r}"))
                continue
            if not math.isfinite(v) or v < 0:
                bad.append((lineno, f"discharge must be finite and >= 0, got {fields[1].strip()}"))
                continue
            if times and t <= times[-1][1]:
                bad.append((lineno, "timestamps must be strictly increasing"))
                continue
            times.append((lineno, t))
            values.append(v)
    if header is None:
        raise IngestError(f"{path}: no header row")
    if bad:
        detail = "; ".join(f"line {n}: {m}" for n, m in bad[:20])
        more = f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""
        raise IngestError(f"{path}: {len(bad)} malformed row(s): {detail}{more}", bad)
    if not values:
        raise IngestError(f"{path}: empty series")
    return np.array([t for _, t in times], dtype=np.int64), np.array(values)


def resample(times, values, interval: int, gap_threshold: int | None = None) -> TimeSeries:
    """Linear interpolation onto a uniform grid; gaps wider than the threshold split the series."""
    interval = int(interval)
    if interval <= 0:
        raise ValueError("resample interval must be a positive number of seconds")
    gap = 3 * interval if gap_threshold is None else int(gap_threshold)
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    grid = times[0] + interval * np.arange((times[-1] - times[0]) // interval + 1, dtype=np.int64)
    left = np.searchsorted(times, grid, side="right") - 1
    right = np.minimum(left + 1, len(times) - 1)
    exact = times[left] == grid
    span = times[right] - times[left]
    keep = exact | (span <= gap)
    w = np.where(exact, 0.0, (grid - times[left]) / np.where(span > 0, span, 1))
    vals = np.where(exact, values[left], values[left] + (values[right] - values[left]) * w)
    grid, vals = grid[keep], vals[keep]
    breaks = [int(i) for i in np.flatnonzero(np.diff(grid) != interval) + 1]
    return TimeSeries(grid, vals, interval, breaks)


def ingest_csv(path, resample_interval: int = 3600, gap_threshold: int | None = None) -> TimeSeries:
    """Read a ``timestamp,discharge`` CSV and resample it to ``resample_interval`` seconds.

    Gaps up to ``gap_threshold`` seconds (default three intervals) are filled
    linearly; longer gaps split the series into segments.
    """
    times, values = read_raw_csv(path)
    return resample(times, values, resample_interval, gap_threshold)


def write_series_csv(ts: TimeSeries, path, provenance: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write("# provenance: " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "discharge"])
        for t, v in zip(ts.timestamps.tolist(), ts.values.tolist()):
            w.writerow([_format_time(t), repr(v)])


def synthetic_series(model: BridgeModel, interval_months: float, n_samples: int, substeps: int = 4,
                     seed: int = 0, start: str = "2000-01-01T00:00:00Z", x0: float | None = None,
                     backend=None) -> TimeSeries:
    """Sample an uncontrolled OU/SE path every ``interval_months``, started at the stationary mean."""
    interval = round(interval_months * MONTH_SECONDS)
    if interval <= 0 or abs(interval - interval_months * MONTH_SECONDS) > 1e-6:
        raise ValueError("interval must be a whole number of seconds")
    dt = interval_months / substeps
    horizon = dt * substeps * (n_samples - 1)
    start_mean = stationary_moments(model).mean if x0 is None else x0
    m = model.replace(x0=start_mean)
    cfg = SimConfig(dt, seed=seed, horizon=horizon)
    plan = build_plan(m, cfg, "se" if model.p else "ou")
    rec = np.arange(n_samples, dtype=np.intp) * substeps
    out = simulate_paths(plan, seed, [0], rec, backend)
    t0 = _parse_time(start)
    return TimeSeries(t0 + interval * np.arange(n_samples, dtype=np.int64), out["rec"][0], interval)


# -- reversion rate ----------------------------------------------------------------

@dataclass
class ReversionFit:
    rate: float
    lags: list
    acf: list
    fitted: list
    fit_lags: int
    residual_rms: float
    interval_months: float


def empirical_acf(ts: TimeSeries, max_lag: int, stop_below: float | None = None) -> np.ndarray:
    """ACF at lags 0..max_lag; pairs never straddle a segment break.

    With ``stop_below`` the computation ends at twice the first lag whose
    value is <= stop_below (plus a few lags); later entries are NaN.
    """
    mu = ts.values.mean()
    segs = [s - mu for s in ts.segments()]
    gamma = np.full(max_lag + 1, np.nan)
    end = max_lag
    for k in range(max_lag + 1):
        if k > end:
            break
        num = 0.0
        cnt = 0
        for s in segs:
            if len(s) > k:
                num += float(np.dot(s[: len(s) - k], s[k:]))
                cnt += len(s) - k
        gamma[k] = num / cnt if cnt else np.nan
        if k == 0 and not gamma[0] > 0:
            raise CalibrationError("series has zero variance")
        if stop_below is not None and k > 0 and end == max_lag and not gamma[k] / gamma[0] > stop_below:
            end = min(max_lag, 2 * k + 5)
    return gamma / gamma[0]


def fit_reversion(ts: TimeSeries, max_lag: int | None = None, threshold: float = 0.05) -> ReversionFit:
    """Least squares fit of rho(k) = exp(-kappa k dt) over lags with rho > ``threshold``.

    Returns the rate in 1/month. Raises CalibrationError if fewer than two lags
    are usable (an ACF that does not decay through a positive range).
    """
    n = len(ts.values)
    if max_lag is None:
        max_lag = min(1000, n // 10)
    if n < 10 * max_lag or max_lag < 2:
        raise CalibrationError(f"series too short ({n} samples) for max_lag = {max_lag}")
    acf = empirical_acf(ts, max_lag, stop_below=threshold)
    known = int(np.flatnonzero(np.isfinite(acf))[-1])
    acf = acf[: known + 1]
    lags = np.arange(known + 1)
    below = np.flatnonzero(~(acf[1:] > threshold))
    last = below[0] if below.size else known
    if last < 2:
        raise CalibrationError(f"autocorrelation does not decay over a usable range (rho(1) = {acf[1]:.3f})")
    h = ts.interval_months
    k = lags[1: last + 1]
    y = acf[1: last + 1]

    def resid(log_kappa):
        return np.exp(-math.exp(log_kappa[0]) * k * h) - y

    kappa0 = max(-math.log(max(y[0], 1e-12)) / h, 1e-8)
    sol = optimize.least_squares(resid, [math.log(kappa0)], xtol=1e-14, ftol=1e-14)
    kappa = math.exp(sol.x[0])
    if not kappa > 0 or not sol.success:
        raise CalibrationError("autocorrelation fit did not converge")
    fitted = np.exp(-kappa * lags * h)
    return ReversionFit(kappa, lags.tolist(), acf.tolist(), fitted.tolist(), int(last),
                        float(np.sqrt(np.mean(sol.fun**2))), h)


@dataclass
class GainFit:
    p: float
    a: float
    threshold: float
    n_events: int
    n_pairs: int
    lr_statistic: float
    significant: bool


def _pairs(ts: TimeSeries):
    xs, ys = [], []
    for s in ts.segments():
        xs.append(s[:-1])
        ys.append(s[1:])
    return np.concatenate(xs), np.concatenate(ys)


def fit_gain(ts: TimeSeries, kappa: float) -> GainFit:
    """Estimate p from P(large jump residual | X) = 1 - exp(-a (1 + p X)).

    Residuals are x_{k+1} - exp(-kappa dt) x_k; an event is a residual above
    mean + 2 sd. The MLE of (a, p >= 0) is kept only if a one-sided
    likelihood-ratio test against p = 0 rejects at the 1% level.
    """
    x, y = _pairs(ts)
    res = y - math.exp(-kappa * ts.interval_months) * x
    eps = float(res.mean() + 2.0 * res.std())
    hit = res > eps
    n_ev = int(hit.sum())
    if n_ev == 0 or n_ev == len(hit):
        raise CalibrationError("no usable jump events for the gain estimate")

    def nll(theta):
        a, p = math.exp(theta[0]), theta[1]
        lam = a * (1.0 + p * x)
        if np.any(lam <= 0):
            return np.inf
        return -(np.sum(np.log(-np.expm1(-lam[hit]))) - np.sum(lam[~hit]))

    a0 = -math.log1p(-n_ev / len(hit))
    null = nll([math.log(a0), 0.0])
    best = None
    for p_start in (0.0, 0.1, 1.0):
        a_start = a0 / (1.0 + p_start * float(x.mean()))
        sol = optimize.minimize(nll, [math.log(a_start), p_start], method="L-BFGS-B",
                                bounds=[(None, None), (0.0, None)])
        if best is None or sol.fun < best.fun:
            best = sol
    stat = max(0.0, 2.0 * (null - float(best.fun)))
    sig = stat > LR_CRITICAL
    p = float(best.x[1]) if sig else 0.0
    a = math.exp(best.x[0]) if sig else a0
    return GainFit(p, a, eps, n_ev, len(hit), stat, bool(sig))


# -- moment matching ---------------------------------------------------------------

def empirical_moments(ts: TimeSeries) -> np.ndarray:
    v = ts.values
    mu = v.mean()
    d = v - mu
    return np.array([mu, np.mean(d**2), np.mean(d**3)])


def _to_measure(family, theta):
    if family == "exp_cp":
        return ExpCompoundPoisson(math.exp(theta[0]), math.exp(theta[1]))
    return TemperedStable(math.exp(theta[0]), math.exp(theta[1]), special.expit(theta[2]))


def _from_measure(family, meas):
    if family == "exp_cp":
        return np.array([math.log(meas.lam), math.log(meas.eta)])
    return np.array([math.log(meas.c), math.log(meas.beta), special.logit(meas.alpha)])


def model_moments(meas, rate: float, p: float, decay_identifies: str = "r"):
    """Stationary (mean, variance, third central); None if the parameters are not admissible."""
    m1 = meas.moment(1)
    r = rate if decay_identifies == "r" else rate + p * m1
    try:
        model = BridgeModel(r, meas, p=p)
    except ValueError:
        return None
    s = stationary_moments(model)
    return np.array([s.mean, s.variance, s.third_central])


def _initial_guess(family, emp, rate, p, decay_identifies):
    """Invert the stationary moment relations, taking R from the decay rate."""
    mu, var, mu3 = emp
    R = rate
    if decay_identifies == "r":
        R = rate / (1.0 + p * mu)   # rate = R + p M1 with M1 = mu R
    m1 = mu * R
    m2 = 2.0 * R * var / (1.0 + p * mu)
    m3 = (3.0 * R * mu3 - 3.0 * p * m2 * var) / (1.0 + p * mu)
    try:
        if family == "exp_cp":
            eta = 2.0 * m1 / m2
            meas = ExpCompoundPoisson(m1 * eta**2, eta)
        else:
            beta = 1.0 / (m3 / m2 - m2 / m1)
            alpha = 1.0 - beta * m2 / m1
            alpha = min(max(alpha, 0.05), 0.95)
            beta = max(beta, 1e-6)
            c = m1 / (special.gamma(1.0 - alpha) * beta ** (alpha - 1.0))
            meas = TemperedStable(c, beta, alpha)
        return _from_measure(family, meas)
    except (ValueError, ZeroDivisionError, OverflowError):
        return _from_measure(family, ExpCompoundPoisson(1.0, 1.0 / max(mu, 1e-6)) if family == "exp_cp"
                             else TemperedStable(1.0, 1.0 / max(mu, 1e-6), 0.5))


@dataclass
class CalibrationResult:
    r: float
    R: float
    p: float
    driver: dict
    decay_rate: float
    decay_identifies: str
    unit: str
    interval_months: float
    objective: float
    empirical_moments: list
    model_moments: list
    moment_residuals: list
    acf_residual_rms: float | None
    acf_fit_lags: int
    gain: dict | None
    starts: list
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_levy_and_p(ts: TimeSeries, r: float | ReversionFit, driver_family: str = "exp_cp",
                   se: bool = False, decay_identifies: str = "r", n_starts: int = 10,
                   p: float | None = None) -> CalibrationResult:
    """Moment-match the driver (and p when ``se``) given the fitted decay rate.

    ``r`` is the ACF decay rate (1/month), read as r or as R = r - p M1 according
    to ``decay_identifies``. With ``se=False`` p is fixed to 0; ``p`` overrides
    the estimate. The simplex search runs from ``n_starts`` deterministic start
    points in log parameters; the lowest objective wins, ties by start index.
    """
    if driver_family not in FAMILIES:
        raise ValueError(f"driver_family must be one of {FAMILIES}")
    if decay_identifies not in ("r", "R"):
        raise ValueError("decay_identifies must be 'r' or 'R'")
    fit = r if isinstance(r, ReversionFit) else None
    rate = fit.rate if fit is not None else float(r)
    if not rate > 0:
        raise CalibrationError("decay rate must be > 0")
    gain = None
    if p is None:
        if se:
            gain = fit_gain(ts, rate)
            p = gain.p
        else:
            p = 0.0
    emp = empirical_moments(ts)
    if not (emp[0] > 0 and emp[1] > 0):
        raise CalibrationError("stationary mean and variance must be positive")

    def objective(theta):
        try:
            meas = _to_measure(driver_family, theta)
        except (ValueError, OverflowError):
            return 1e30
        mod = model_moments(meas, rate, p, decay_identifies)
        if mod is None or not np.all(np.isfinite(mod)):
            return 1e30
        return float(np.sum(((mod - emp) / emp) ** 2))

    x0 = _initial_guess(driver_family, emp, rate, p, decay_identifies)
    offsets = np.random.default_rng(20240531).uniform(-1.0, 1.0, size=(n_starts, len(x0)))
    offsets[0] = 0.0
    starts = []
    best = None
    for j in range(n_starts):
        sol = optimize.minimize(objective, x0 + offsets[j], method="Nelder-Mead",
                                options=dict(xatol=1e-10, fatol=1e-16, maxiter=20000, maxfev=40000))
        starts.append(dict(index=j, objective=float(sol.fun), converged=bool(sol.success)))
        if sol.success and sol.fun < 1e30 and (best is None or sol.fun < best[1].fun):
            best = (j, sol)
    if best is None:
        raise CalibrationError("moment matching did not converge from any start")
    meas = _to_measure(driver_family, best[1].x)
    m1 = meas.moment(1)
    r_model = rate if decay_identifies == "r" else rate + p * m1
    R = r_model - p * m1
    if R <= 0:
        raise CalibrationError(f"fitted R = {R} is not positive")
    mod = model_moments(meas, rate, p, decay_identifies)
    return CalibrationResult(
        r=r_model, R=R, p=p, driver=meas.to_dict(), decay_rate=rate, decay_identifies=decay_identifies,
        unit="month", interval_months=ts.interval_months, objective=float(best[1].fun),
        empirical_moments=emp.tolist(), model_moments=mod.tolist(),
        moment_residuals=((mod - emp) / emp).tolist(),
        acf_residual_rms=fit.residual_rms if fit is not None else None,
        acf_fit_lags=fit.fit_lags if fit is not None else 0,
        gain=None if gain is None else asdict(gain), starts=starts, n_samples=len(ts.values),
    )


def calibrate(ts: TimeSeries, driver_family: str = "exp_cp", se: bool = False, decay_identifies: str = "r",
              max_lag: int | None = None, n_starts: int = 10):
    """ACF fit followed by moment matching; returns (CalibrationResult, ReversionFit)."""
    fit = fit_reversion(ts, max_lag)
    return fit_levy_and_p(ts, fit, driver_family, se, decay_identifies, n_starts), fit
