"""Closed-form pieces of the energy-optimal regulator and its bridge limit.

The horizon is fixed to [0, 1]. For the self-exciting model the Riccati system
is the OU one with the reversion rate replaced by R = r - p*M1 and the drift
constant of the B equation replaced by m = M1 + p*M2/2; with p = 0 both
substitutions are exact identities, so the same code path serves both models.

Cancellation-prone differences near t = 1 are written with ``expm1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .levy import LevyMeasure, moments

# coefficient evaluation is refused closer than this to the terminal pole
POLE_GUARD = 1e-12


@dataclass(frozen=True)
class BridgeModel:
    """Jump OU / self-exciting problem data on the unit horizon."""

    r: float
    driver: LevyMeasure
    x0: float = 0.0
    x_hat: float = 0.0
    p: float = 0.0

    def __post_init__(self) -> None:
        for name in ("r", "x0", "x_hat", "p"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.r <= 0:
            raise ValueError(f"r must be > 0, got {self.r}")
        if self.p < 0:
            raise ValueError(f"p must be >= 0, got {self.p}")
        if self.R <= 0:
            raise ValueError(f"R = r - p*M1 must be > 0, got {self.R}")

    @property
    def m1(self) -> float:
        return moments(self.driver).m1

    @property
    def m2(self) -> float:
        return moments(self.driver).m2

    @property
    def R(self) -> float:
        return self.r - self.p * self.m1

    @property
    def m(self) -> float:
        return self.m1 + self.p * self.m2 / 2.0

    def replace(self, **changes) -> "BridgeModel":
        fields = dict(r=self.r, driver=self.driver, x0=self.x0, x_hat=self.x_hat, p=self.p)
        fields.update(changes)
        return BridgeModel(**fields)


def _time(t, allow_terminal: bool):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    if not allow_terminal and np.any(t > 1.0 - POLE_GUARD):
        raise ValueError("limit coefficients are singular at t = 1; refusing t > 1 - 1e-12")
    return t


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


# -- finite terminal penalty ---------------------------------------------------

def penalty_ratio(F: float, rate: float) -> float:
    """q = F / (F + 2 rate), always in (0, 1)."""
    if F <= 0:
        raise ValueError("F must be > 0")
    return F / (F + 2.0 * rate)


def _finite_A(rate, F, t):
    tau = 1.0 - t
    one_minus_q = 2.0 * rate / (F + 2.0 * rate)
    return 2.0 * rate * penalty_ratio(F, rate) / (np.expm1(2.0 * rate * tau) + one_minus_q)


def _finite_B(rate, const, x_hat, F, t):
    tau = 1.0 - t
    q = penalty_ratio(F, rate)
    one_minus_q = 2.0 * rate / (F + 2.0 * rate)
    # exp(rate*tau) * (1 - q exp(-2 rate tau)) rewritten without cancellation
    denom = np.exp(-rate * tau) * (np.expm1(2.0 * rate * tau) + one_minus_q)
    num = -F * x_hat * one_minus_q - 2.0 * q * const * np.expm1(-rate * tau)
    return num / denom


def finite_F_A(model: BridgeModel, F: float, t):
    return _out(_finite_A(model.R, F, _time(t, True)))


def finite_F_B(model: BridgeModel, F: float, t):
    return _out(_finite_B(model.R, model.m, model.x_hat, F, _time(t, True)))


def finite_F_C(model: BridgeModel, F: float, t, return_error: bool = False):
    """Constant term of the quadratic value function, by backward quadrature.

    dC/dt = B**2/2 - M1*B - M2*A/2 with C(1) = F*x_hat**2/2. Raises
    ``ArithmeticError`` if the achieved error estimate exceeds 1e-8 relative.
    """
    t = float(_time(t, True))
    m1, m2 = model.m1, model.m2
    c1 = 0.5 * F * model.x_hat**2

    def rhs(s):
        a = _finite_A(model.R, F, s)
        b = _finite_B(model.R, model.m, model.x_hat, F, s)
        return 0.5 * b * b - m1 * b - 0.5 * m2 * a

    if t == 1.0:
        return (c1, 0.0) if return_error else c1
    val, err = integrate.quad(rhs, t, 1.0, epsabs=0.0, epsrel=1e-12, limit=400)
    c = c1 - val
    scale = max(abs(c), abs(val), 1e-300)
    if err > 1e-8 * scale:
        raise ArithmeticError(f"C quadrature error estimate {err:.3e} exceeds tolerance (value {c:.6e})")
    return (c, err) if return_error else c


def value_function(model: BridgeModel, F: float, t: float, x):
    """Phi(t, x) = A x^2/2 + B x + C for the finite-penalty problem."""
    a = finite_F_A(model, F, t)
    b = finite_F_B(model, F, t)
    c = finite_F_C(model, F, t)
    x = np.asarray(x, dtype=float)
    return _out(0.5 * a * x * x + b * x + c)


# -- bridge limit ------------------------------------------------------------------

def limit_A(rate: float, t):
    t = _time(t, False)
    return _out(2.0 * rate / np.expm1(2.0 * rate * (1.0 - t)))


def limit_B(rate: float, constant: float, x_hat: float, t):
    t = _time(t, False)
    tau = 1.0 - t
    num = 2.0 * rate * (-x_hat - (constant / rate) * np.expm1(-rate * tau))
    return _out(num / (np.exp(rate * tau) * -np.expm1(-2.0 * rate * tau)))


class FiniteFCoefficients:
    """A_F, B_F of a model for one penalty F."""

    def __init__(self, model: BridgeModel, F: float):
        self.model, self.F = model, float(F)
        self.q = penalty_ratio(self.F, model.R)
        self.terminal = True

    def A(self, t):
        return finite_F_A(self.model, self.F, t)

    def B(self, t):
        return finite_F_B(self.model, self.F, t)


class LimitCoefficients:
    """Bridge coefficients A(t), B(t) on [0, 1) for (rate, constant, target)."""

    def __init__(self, rate: float, constant: float, x_hat: float):
        self.rate, self.constant, self.x_hat = float(rate), float(constant), float(x_hat)
        self.terminal = False

    @classmethod
    def for_model(cls, model: BridgeModel) -> "LimitCoefficients":
        return cls(model.R, model.m, model.x_hat)

    def A(self, t):
        return limit_A(self.rate, t)

    def B(self, t):
        return limit_B(self.rate, self.constant, self.x_hat, t)


def optimal_control(coeffs, t, x):
    """Affine feedback u = -(A(t) x + B(t))."""
    return _out(-(coeffs.A(t) * np.asarray(x, dtype=float) + coeffs.B(t)))


# -- propagator, bridge-mean kernels and the closed-form mean ---------------------

def integrating_factor(rate: float, s, t):
    """exp(-int_s^t (rate + A_tau) dtau) for 0 <= s <= t < 1."""
    s = _time(s, False)
    t = _time(t, False)
    if np.any(s > t):
        raise ValueError("integrating factor needs s <= t")
    return _out(np.exp(-rate * (t - s)) * np.expm1(-2.0 * rate * (1.0 - t)) / np.expm1(-2.0 * rate * (1.0 - s)))


@dataclass(frozen=True)
class BridgeKernels:
    K: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray


def _atanh_exp(x):
    """atanh(exp(-x)) for x > 0, accurate as x -> 0."""
    y = np.exp(-x)
    return 0.5 * (np.log1p(y) - np.log(-np.expm1(-x)))


def _atanh_minus_id(y, x):
    """atanh(y) - y with y = exp(-x), by series for small y (no cancellation)."""
    y = np.asarray(y, dtype=float)
    small = y < 0.1
    ys = np.where(small, y, 0.0)
    series = np.zeros_like(ys)
    for k in range(1, 16):
        series = series + ys ** (2 * k + 1) / (2 * k + 1)
    return np.where(small, series, _atanh_exp(x) - y)


def _g2(x):
    # atanh(y) - y/(1+y) = (atanh(y) - y) + y^2/(1+y), both nonnegative
    y = np.exp(-x)
    return _atanh_minus_id(y, x) + y * y / (1.0 + y)


def kernel_K(rate: float, t):
    """K_t = exp(-rate (1 + t)) (1 - exp(-2 rate (1 - t))) on [0, 1]; K_1 = 0."""
    t = _time(t, True)
    return _out(np.exp(-rate * (1.0 + t)) * -np.expm1(-2.0 * rate * (1.0 - t)))


def kernels(rate: float, t) -> BridgeKernels:
    """K_t and the integrals I1, I2, I3 appearing in the bridge mean.

    The direct antiderivatives are rewritten in terms of y = exp(-rate (1-s))
    so that no exp(4 rate) factor is ever formed and the leading terms of the
    I2 bracket do not cancel.
    """
    t = _time(t, False)
    r = rate
    a = -np.expm1(-2.0 * r * (1.0 - t))
    b = -math.expm1(-2.0 * r)
    K = np.exp(-r * (1.0 + t)) * a
    I1 = np.expm1(2.0 * r * t) / (2.0 * r * a * b)
    I2 = math.exp(2.0 * r) / (2.0 * r) * (_g2(r * (1.0 - t)) - _g2(r))
    y1, y0 = np.exp(-r * (1.0 - t)), math.exp(-r)
    # exp(r) * (y1 - y0) = expm1(r t); the atanh excess is handled separately
    I3 = (np.expm1(r * t) + math.exp(r) * (_atanh_minus_id(y1, r * (1.0 - t)) - _atanh_minus_id(y0, r))) / r
    return BridgeKernels(_out(K), _out(I1), _out(I2), _out(I3))


def closed_form_mean(model: BridgeModel, t):
    """E[X*_t] of the OU bridge from the bridge-mean kernels (p = 0 only)."""
    if model.p != 0:
        raise ValueError("closed-form mean is available for the OU bridge only (p = 0)")
    r, m1 = model.r, model.m1
    t = _time(t, False)
    k = kernels(r, t)
    decay = np.exp(-r * t) * np.expm1(-2.0 * r * (1.0 - t)) / math.expm1(-2.0 * r)
    # K * exp(r) = exp(-r t) * (1 - exp(-2 r (1-t))) avoids overflow of exp(r)
    k_er = np.exp(-r * t) * -np.expm1(-2.0 * r * (1.0 - t))
    return _out(model.x0 * decay
                + 2.0 * r * model.x_hat * k.K * k.I1
                - 2.0 * m1 * k.K * k.I2
                + m1 * k_er * k.I3)
