"""Demand distributions and the expected shortage/excess penalty cost.

For a dispatch ``g`` against random demand ``D`` the penalty is

    risk(g) = gamma1 * E[(D - g)^+] + gamma2 * E[(g - D)^+]

whose derivative is ``(gamma1 + gamma2) * F(g) - gamma1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import ndtr

from . import _accel
from .errors import InvalidParams, InvalidProbability


@dataclass(frozen=True)
class Penalties:
    gamma1: float  # $/MWh short
    gamma2: float  # $/MWh excess

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise InvalidParams("gamma1 must be positive")
        if not self.gamma2 >= 0:
            raise InvalidParams("gamma2 must be non-negative")

    def fractile(self, slope: float) -> float:
        """Critical fractile (gamma1 - slope) / (gamma1 + gamma2)."""
        return (self.gamma1 - slope) / (self.gamma1 + self.gamma2)


def _check_p(p):
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr >= 0) & (arr <= 1))):
        raise InvalidProbability(f"probability outside [0, 1]: {p}")
    return arr


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float, depth: int = 50) -> float:
    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, depth)


class _Family:
    family: str = ""
    code: int = -1

    def risk(self, g: float, pen: Penalties) -> float:
        short = self.expected_shortfall(g)
        excess = short + g - self.mean()
        return pen.gamma1 * short + pen.gamma2 * max(excess, 0.0)

    def risk_deriv(self, g: float, pen: Penalties) -> float:
        return (pen.gamma1 + pen.gamma2) * float(self.cdf(g)) - pen.gamma1

    def params_array(self) -> np.ndarray:
        return np.array(self.params(), dtype=float)


@dataclass(frozen=True)
class Normal(_Family):
    mu: float
    sigma: float
    family = "normal"
    code = _accel.NORMAL

    def __post_init__(self):
        if not self.sigma > 0 or not math.isfinite(self.mu):
            raise InvalidParams(f"Normal needs finite mu and sigma > 0, got {self.mu}, {self.sigma}")

    def params(self):
        return (self.mu, self.sigma, 0.0)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def quantile(self, p):
        p = _check_p(p)
        if p.ndim == 0:
            return self.mu + self.sigma * _accel.norm_ppf(float(p))
        return self.mu + self.sigma * np.array([_accel.norm_ppf(float(v)) for v in p.ravel()]).reshape(p.shape)

    def quantile_grad(self, p: float) -> np.ndarray:
        """d quantile(p) / d (mu, sigma)."""
        return np.array([1.0, _accel.norm_ppf(float(p))])

    def mean(self):
        return self.mu

    def std(self):
        return self.sigma

    def expected_shortfall(self, g: float) -> float:
        z = (g - self.mu) / self.sigma
        return self.sigma * (_accel.norm_pdf(z) - z * (1.0 - _accel.norm_cdf(z)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mu, self.sigma, size=n)


@dataclass(frozen=True)
class Uniform(_Family):
    a: float
    b: float
    family = "uniform"
    code = _accel.UNIFORM

    def __post_init__(self):
        if not self.a < self.b:
            raise InvalidParams(f"Uniform needs a < b, got {self.a}, {self.b}")

    def params(self):
        return (self.a, self.b, 0.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def quantile(self, p):
        p = _check_p(p)
        return self.a + p * (self.b - self.a)

    def quantile_grad(self, p: float) -> np.ndarray:
        return np.array([1.0 - p, p])

    def mean(self):
        return 0.5 * (self.a + self.b)

    def std(self):
        return (self.b - self.a) / math.sqrt(12.0)

    def expected_shortfall(self, g: float) -> float:
        if g <= self.a:
            return self.mean() - g
        if g >= self.b:
            return 0.0
        return (self.b - g) ** 2 / (2.0 * (self.b - self.a))

    def sample(self, rng, n):
        return rng.uniform(self.a, self.b, size=n)


@dataclass(frozen=True)
class BoundedPareto(_Family):
    """Pareto(alpha) truncated to [L, H]: cdf (1 - (L/x)^alpha) / (1 - (L/H)^alpha)."""

    L: float
    H: float
    alpha: float
    family = "bounded_pareto"
    code = _accel.BOUNDED_PARETO

    def __post_init__(self):
        if not (self.L > 0 and self.H > self.L and self.alpha > 0):
            raise InvalidParams(f"BoundedPareto needs 0 < L < H and alpha > 0, got {self.params()}")

    def params(self):
        return (self.L, self.H, self.alpha)

    @property
    def _norm(self):
        return 1.0 - (self.L / self.H) ** self.alpha

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.L) & (x <= self.H)
        xs = np.where(inside, x, self.L)
        return np.where(inside, self.alpha * self.L ** self.alpha * xs ** (-self.alpha - 1) / self._norm, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.L, self.H)
        return (1.0 - (self.L / x) ** self.alpha) / self._norm

    def quantile(self, p):
        p = _check_p(p)
        return self.L * (1.0 - p * self._norm) ** (-1.0 / self.alpha)

    def quantile_grad(self, p: float) -> np.ndarray:
        """d quantile(p) / d (L, H, alpha)."""
        L, H, a = self.L, self.H, self.alpha
        r = (L / H) ** a
        u = 1.0 - p * (1.0 - r)
        q = L * u ** (-1.0 / a)
        dq_du = -q / (a * u)
        d_L = u ** (-1.0 / a) + dq_du * p * a * r / L
        d_H = dq_du * p * (-a * r / H)
        d_alpha = q * math.log(u) / a ** 2 + dq_du * p * r * math.log(L / H)
        return np.array([d_L, d_H, d_alpha])

    def _moment(self, k: int) -> float:
        L, H, a = self.L, self.H, self.alpha
        c = a * L ** a / self._norm
        if abs(a - k) < 1e-12:
            return c * math.log(H / L)
        return c * (H ** (k - a) - L ** (k - a)) / (k - a)

    def mean(self):
        return self._moment(1)

    def std(self):
        return math.sqrt(max(self._moment(2) - self.mean() ** 2, 0.0))

    def expected_shortfall(self, g: float) -> float:
        # E(D - g)^+ = int_g^inf (1 - F(x)) dx
        lo = max(g, self.L)
        if lo >= self.H:
            return 0.0
        surv = lambda x: 1.0 - float(self.cdf(x))  # noqa: E731
        tail = adaptive_simpson(surv, lo, self.H, 1e-9 * (self.H - self.L))
        return tail + max(self.L - g, 0.0)

    def sample(self, rng, n):
        return self.quantile(rng.random(n))


@dataclass(frozen=True, eq=False)
class Empirical(_Family):
    samples: np.ndarray
    family = "empirical"
    code = -1

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size == 0 or not np.all(np.isfinite(s)):
            raise InvalidParams("Empirical needs a non-empty finite sample")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def params(self):
        raise InvalidParams("empirical distribution has no parameter vector")

    def pdf(self, x):
        raise InvalidParams("empirical distribution has no density")

    def cdf(self, x):
        return np.searchsorted(self.samples, np.asarray(x, dtype=float), side="right") / self.samples.size

    def quantile(self, p):
        p = _check_p(p)
        n = self.samples.size
        return np.interp(p, np.arange(1, n + 1) / n, self.samples)

    def mean(self):
        return float(self.samples.mean())

    def std(self):
        return float(self.samples.std())

    def expected_shortfall(self, g: float) -> float:
        return float(np.maximum(self.samples - g, 0.0).mean())

    def risk(self, g, pen):
        diff = self.samples - g
        return float(pen.gamma1 * np.maximum(diff, 0.0).mean() + pen.gamma2 * np.maximum(-diff, 0.0).mean())

    def sample(self, rng, n):
        return rng.choice(self.samples, size=n, replace=True)


DemandDistribution = Union[Normal, Uniform, BoundedPareto, Empirical]

FAMILIES = {"normal": Normal, "uniform": Uniform, "bounded_pareto": BoundedPareto}
FAMILY_BY_CODE = {cls.code: cls for cls in FAMILIES.values()}


def from_spec(spec: dict) -> DemandDistribution:
    """Build a distribution from ``{"family": ..., <params>}``."""
    spec = dict(spec)
    family = str(spec.pop("family", "")).lower().replace("-", "_")
    spec.pop("params", None)
    if family == "empirical":
        return Empirical(np.asarray(spec["samples"], dtype=float))
    if family not in FAMILIES:
        raise InvalidParams(f"unknown distribution family {family!r}")
    try:
        return FAMILIES[family](**{k: float(v) for k, v in spec.items()})
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for {family}: {exc}") from exc


def to_spec(dist: DemandDistribution) -> dict:
    if isinstance(dist, Empirical):
        return {"family": "empirical", "samples": dist.samples.tolist()}
    names = {Normal: ("mu", "sigma"), Uniform: ("a", "b"), BoundedPareto: ("L", "H", "alpha")}[type(dist)]
    return {"family": dist.family, **{n: getattr(dist, n) for n in names}}


def risk(dist: DemandDistribution, g: float, pen: Penalties) -> float:
    return dist.risk(float(g), pen)


def risk_deriv(dist: DemandDistribution, g: float, pen: Penalties) -> float:
    return dist.risk_deriv(float(g), pen)
