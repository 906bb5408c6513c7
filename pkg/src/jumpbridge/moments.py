"""Deterministic moment curves of the bridges and stationary moments.

For the bridge X_{k+1} = X_k + (-(rate + A_k) X_k - B_k) dt + J_k with jump
intensity (1 + p X) nu, taking expectations of X and X^2 gives

    dE/dt  = -(kappa - p M1) E - B + M1
    dE2/dt = -2(kappa - p M1) E2 + (-2B + 2M1 + p M2) E + M2

with kappa = rate + A. They are stepped on the simulation grid with the
moment recursion of the Euler chain itself: with g = 1 + (p M1 - kappa) dt and
h = (M1 - B) dt,

    E'  = g E + h
    E2' = g^2 E2 + (2 g h + p M2 dt) E + h^2 + M2 dt

whose first-order part is forward Euler of the ODEs. Keeping the dt^2 terms
makes Var' = g^2 Var + M2 dt (1 + p E), so the variance cannot turn negative
where kappa dt is not small (the last steps before t = 1). The variance is
stepped with that recursion directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend as _backend
from .coefficients import BridgeModel, LimitCoefficients
from .engine import SimConfig

SE_DRIFTS = ("reduced", "nominal")


@dataclass
class MomentCurves:
    grid: np.ndarray
    mean: np.ndarray
    second: np.ndarray
    variance: np.ndarray

    def at(self, t) -> tuple:
        """(mean, variance) at the grid point nearest to t."""
        k = int(np.argmin(np.abs(self.grid - t)))
        return float(self.mean[k]), float(self.variance[k])

    def rows(self):
        var = self.variance
        for k in range(len(self.grid)):
            yield self.grid[k], self.mean[k], self.second[k], var[k]


def _bridge_moments(model: BridgeModel, dt: float, rate: float, backend=None) -> MomentCurves:
    backend = backend or _backend.DEFAULT
    n = SimConfig(dt).n_steps
    grid = np.arange(n) / n
    coeffs = LimitCoefficients.for_model(model)
    t = grid[:-1]
    A, B = coeffs.A(t), coeffs.B(t)
    m1, m2, p = model.m1, model.m2, model.p
    a = dt * (-(rate + A) + p * m1)
    h = dt * (-B + m1)
    mean = np.empty(n)
    backend.linear_recurrence(np.ascontiguousarray(a), np.ascontiguousarray(h), model.x0, mean)
    second = np.empty(n)
    b2 = (2.0 * (1.0 + a) * h + p * m2 * dt) * mean[:-1] + h * h + m2 * dt
    backend.linear_recurrence(np.ascontiguousarray(a * (2.0 + a)), np.ascontiguousarray(b2),
                              model.x0**2, second)
    # stepped on its own rather than as E2 - E^2, which cancels badly
    var = np.empty(n)
    bv = m2 * dt * (1.0 + p * mean[:-1])
    backend.linear_recurrence(np.ascontiguousarray(a * (2.0 + a)), np.ascontiguousarray(bv), 0.0, var)
    return MomentCurves(grid, mean, second, var)


def ou_bridge_moments(model: BridgeModel, dt: float, backend=None) -> MomentCurves:
    """Mean and second moment of the OU bridge on [0, 1 - dt]."""
    if model.p != 0:
        raise ValueError("ou_bridge_moments needs p = 0")
    return _bridge_moments(model, dt, model.r, backend)


def se_bridge_moments(model: BridgeModel, dt: float, se_drift: str = "reduced", backend=None) -> MomentCurves:
    """Moment curves of the SE bridge; ``se_drift`` picks the drift rate R or r.

    Valid while 1 + pX stays positive along paths.
    """
    if se_drift not in SE_DRIFTS:
        raise ValueError(f"se_drift must be one of {SE_DRIFTS}")
    rate = model.R if se_drift == "reduced" else model.r
    return _bridge_moments(model, dt, rate, backend)


def bridge_moments(model: BridgeModel, dt: float, se_drift: str = "reduced", backend=None) -> MomentCurves:
    if model.p == 0:
        return ou_bridge_moments(model, dt, backend)
    return se_bridge_moments(model, dt, se_drift, backend)


@dataclass(frozen=True)
class StationaryMoments:
    mean: float
    second: float
    variance: float
    third_central: float


def stationary_moments(model: BridgeModel) -> StationaryMoments:
    """Stationary moments of the uncontrolled SE process (OU when p = 0).

    mean = M1/R, E2 = (2 m mean + M2)/(2R), variance = M2 (1 + p mean)/(2R) and
    third central moment ((1 + p mean) M3 + 3 p M2 var)/(3R).
    """
    R, p = model.R, model.p
    if R <= 0:
        raise ValueError("R <= 0: the process has no stationary law")
    m1, m2 = model.m1, model.m2
    m3 = model.driver.moment(3)
    mu = m1 / R
    second = (2.0 * model.m * mu + m2) / (2.0 * R)
    var = m2 * (1.0 + p * mu) / (2.0 * R)
    mu3 = ((1.0 + p * mu) * m3 + 3.0 * p * m2 * var) / (3.0 * R)
    return StationaryMoments(mu, second, var, mu3)


def ou_mean(model: BridgeModel, t):
    """Mean of the uncontrolled OU process: x0 e^{-rt} + (M1/r)(1 - e^{-rt})."""
    t = np.asarray(t, dtype=float)
    decay = np.exp(-model.r * t)
    return model.x0 * decay - model.m1 / model.r * np.expm1(-model.r * t)
