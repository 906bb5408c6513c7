"""Subordinator jump drivers.

Two Levy measures on (0, inf) are supported:

* ``ExpCompoundPoisson``: nu(dz) = lam * exp(-eta z) dz (finite activity)
* ``TemperedStable``: nu(dz) = c * exp(-beta z) * z**(-1 - alpha) dz with
  0 < alpha < 1 (infinite activity, bounded variation)

Each measure exposes its moments M_k = int z**k nu(dz) in closed form, and
``sample_increment`` draws the total jump mass over a step of length dt under
the measure scaled by a nonnegative intensity factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate, special


class QuadratureError(RuntimeError):
    """Raised when numerical quadrature of a Levy moment fails to converge."""


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


@dataclass(frozen=True)
class JumpMoments:
    m1: float
    m2: float


@dataclass(frozen=True)
class ExpCompoundPoisson:
    """Compound Poisson driver with exponential jump sizes.

    Jumps arrive at rate ``lam / eta`` and have mean size ``1 / eta``.
    ``lam = 0`` is accepted as the degenerate zero-mass driver (no jumps).
    """

    lam: float
    eta: float

    kind = "exp_cp"

    def __post_init__(self) -> None:
        lam = float(self.lam)
        if not math.isfinite(lam) or lam < 0.0:
            raise ValueError(f"lambda must be >= 0 and finite, got {lam}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", _check_positive("eta", self.eta))

    @property
    def total_mass(self) -> float:
        return self.lam / self.eta

    def density(self, z):
        return self.lam * np.exp(-self.eta * np.asarray(z, dtype=float))

    def moment(self, k: int) -> float:
        return self.lam * math.factorial(k) / self.eta ** (k + 1)

    def to_dict(self) -> dict:
        return {"type": "exp_cp", "lambda": self.lam, "eta": self.eta}


@dataclass(frozen=True)
class TemperedStable:
    """Tempered-stable subordinator, 0 < alpha < 1."""

    c: float
    beta: float
    alpha: float

    kind = "tempered_stable"

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", _check_positive("c", self.c))
        object.__setattr__(self, "beta", _check_positive("beta", self.beta))
        alpha = float(self.alpha)
        if not (0.0 < alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def total_mass(self) -> float:
        return math.inf

    @property
    def stable_scale(self) -> float:
        """Scale sigma such that the untempered unit-time increment is sigma * S1.

        S1 is the standard positive stable variable with E[exp(-u S1)] = exp(-u**alpha).
        """
        a = self.alpha
        return (self.c * special.gamma(1.0 - a) / a) ** (1.0 / a)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        return self.c * np.exp(-self.beta * z) * z ** (-1.0 - self.alpha)

    def moment(self, k: int) -> float:
        a = self.alpha
        return self.c * special.gamma(k - a) * self.beta ** (a - k)

    def to_dict(self) -> dict:
        return {"type": "tempered_stable", "c": self.c, "beta": self.beta, "alpha": self.alpha}


LevyMeasure = Union[ExpCompoundPoisson, TemperedStable]


def measure_from_dict(spec: dict) -> LevyMeasure:
    kind = spec.get("type")
    if kind == "exp_cp":
        return ExpCompoundPoisson(spec["lambda"], spec["eta"])
    if kind == "tempered_stable":
        return TemperedStable(spec["c"], spec["beta"], spec["alpha"])
    raise ValueError(f"unknown driver type {kind!r}")


def moments(measure: LevyMeasure, verify: bool = False) -> JumpMoments:
    """First two moments of the Levy measure in closed form.

    With ``verify=True`` each value is also computed by adaptive quadrature and
    a mismatch beyond 1e-10 relative raises ``QuadratureError``.
    """
    m1, m2 = measure.moment(1), measure.moment(2)
    if not (math.isfinite(m1) and math.isfinite(m2)):
        raise ValueError(f"non-finite moments for {measure}")
    if verify:
        for k, closed in ((1, m1), (2, m2)):
            quad = quadrature_moment(measure, k)
            if abs(quad - closed) > 1e-10 * abs(closed):
                raise QuadratureError(
                    f"M{k}: closed form {closed!r} disagrees with quadrature {quad!r}"
                )
    return JumpMoments(m1, m2)


def quadrature_moment(measure: LevyMeasure, k: int) -> float:
    """int_0^inf z**k nu(dz) by adaptive Gauss-Kronrod quadrature."""
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=500)
    if isinstance(measure, ExpCompoundPoisson):
        # substitute y = eta * z so the integrand lives on a unit scale
        f = lambda y: y**k * math.exp(-y)
        val, err = integrate.quad(f, 0.0, math.inf, **opts)
        val *= measure.lam / measure.eta ** (k + 1)
        err *= measure.lam / measure.eta ** (k + 1)
    else:
        # y = beta * z; the y**(k-1-alpha) singularity at 0 goes into the weight
        a, b = measure.alpha, measure.beta
        g = lambda y: math.exp(-y)
        head, e1 = integrate.quad(g, 0.0, 1.0, weight="alg", wvar=(k - 1.0 - a, 0.0), **opts)
        tail, e2 = integrate.quad(lambda y: y ** (k - 1.0 - a) * math.exp(-y), 1.0, math.inf, **opts)
        scale = measure.c * b ** (a - k)
        val, err = (head + tail) * scale, (e1 + e2) * scale
    if not math.isfinite(val) or err > 1e-11 * abs(val):
        raise QuadratureError(f"quadrature of M{k} did not converge (estimate {val}, error {err})")
    return val


def positive_stable(v, w, alpha: float):
    """Kanter's representation of the standard positive alpha-stable law.

    ``v`` is uniform on (0, pi] and ``w`` standard exponential; the result S1
    satisfies E[exp(-u S1)] = exp(-u**alpha).
    """
    inv = 1.0 / alpha
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return (np.sin(alpha * v) / np.sin(v) ** inv) * (np.sin((1.0 - alpha) * v) / w) ** ((1.0 - alpha) * inv)


def stable_pool(u: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Turn uniforms of shape (n, 3) into (unit stable candidates, exponential acceptance marks)."""
    v = np.pi * (1.0 - u[:, 0])
    w = -np.log1p(-u[:, 1])
    return positive_stable(v, w, alpha), -np.log1p(-u[:, 2])


def sample_increment(measure: LevyMeasure, dt: float, intensity_scale: float, rng: np.random.Generator,
                     size=None, return_rejections: bool = False):
    """Total jump mass over a step of length ``dt`` with intensity ``intensity_scale * nu``.

    Compound Poisson: Poisson count with mean ``scale * lam / eta * dt``, then a
    Gamma(count, 1/eta) sum of exponential sizes. Tempered stable: a positive
    stable candidate from Kanter's formula accepted with probability
    exp(-beta * candidate).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if intensity_scale < 0:
        raise ValueError("intensity_scale must be >= 0")
    shape = () if size is None else size
    out = np.zeros(shape)
    rejections = 0
    if intensity_scale > 0:
        s = intensity_scale * dt
        if isinstance(measure, ExpCompoundPoisson):
            counts = rng.poisson(s * measure.total_mass, size=shape)
            hit = counts > 0
            if np.ndim(out) == 0:
                if hit:
                    out = np.asarray(rng.gamma(counts, 1.0 / measure.eta))
            else:
                out[hit] = rng.gamma(counts[hit], 1.0 / measure.eta)
        else:
            out, rejections = _tempered_stable_draws(measure, s, rng, shape)
    value = float(out) if size is None else out
    return (value, rejections) if return_rejections else value


def _tempered_stable_draws(measure: TemperedStable, s: float, rng: np.random.Generator, shape):
    # acceptance is exp(-s * psi); past psi * s = 1 sum k pieces of length s / k
    psi = measure.stable_scale ** measure.alpha * measure.beta ** measure.alpha
    k = max(1, math.ceil(s * psi))
    if k > 1:
        parts, rejections = _tempered_stable_draws(measure, s / k, rng, (k,) + tuple(np.atleast_1d(shape)))
        total = parts.sum(axis=0)
        return (total.reshape(shape) if shape != () else total.reshape(())), rejections
    n = int(np.prod(shape)) if shape != () else 1
    scale = s ** (1.0 / measure.alpha) * measure.stable_scale
    out = np.empty(n)
    pending = np.arange(n)
    rejections = 0
    while pending.size:
        s1, marks = stable_pool(rng.random((pending.size, 3)), measure.alpha)
        cand = scale * s1
        ok = marks >= measure.beta * cand
        out[pending[ok]] = cand[ok]
        rejections += int(np.count_nonzero(~ok))
        pending = pending[~ok]
    return out.reshape(shape), rejections
