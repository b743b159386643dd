"""Single-shot stochastic dispatch on a precomputed cost curve.

Given the curve C(g) and a demand distribution F, the expected total cost
``C(g) + risk(g)`` is convex in the total dispatch g, so its minimiser is
found by bisection on the monotone derivative
``C'(g) + (gamma1 + gamma2) F(g) - gamma1`` and then clamped to the
dispatchable range. Inside a linear piece of C the minimiser is the
quantile of F at the critical fractile ``(gamma1 - slope) / (gamma1 + gamma2)``,
which is what makes the dispatch differentiable in the distribution's
parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .curve import CostCurve
from .dist import DemandDistribution, Empirical, Penalties
from .errors import EmpiricalNotDifferentiable

DEFAULT_RTOL = 1e-6


@dataclass(frozen=True)
class DispatchResult:
    g_total: float
    profile: np.ndarray
    gen_cost: float
    risk_cost: float
    task_loss: float
    free: bool = True  # fractile condition holds (not pinned to a kink or the range ends)
    slope: float = float("nan")  # segment slope that sets the fractile

    def to_dict(self) -> dict:
        return {
            "g_total": self.g_total,
            "profile": [float(v) for v in self.profile],
            "gen_cost": self.gen_cost,
            "risk_cost": self.risk_cost,
            "task_loss": self.task_loss,
        }


@dataclass(frozen=True)
class SampleLoss:
    value: float
    grad_g: float


@dataclass(frozen=True, eq=False)
class CurveBank:
    """Several curves padded into rectangular arrays for the batched kernels."""

    g: np.ndarray
    cost: np.ndarray
    slope: np.ndarray
    nbp: np.ndarray
    curves: tuple[CostCurve, ...]

    @classmethod
    def from_curves(cls, curves: Sequence[CostCurve]) -> "CurveBank":
        curves = tuple(curves)
        K = max(c.g.size for c in curves)
        n = len(curves)
        g = np.zeros((n, K))
        cost = np.zeros((n, K))
        slope = np.zeros((n, max(K - 1, 1)))
        nbp = np.empty(n, dtype=np.int64)
        for i, c in enumerate(curves):
            k = c.g.size
            g[i, :k] = c.g
            g[i, k:] = c.g[-1]
            cost[i, :k] = c.cost
            cost[i, k:] = c.cost[-1]
            slope[i, : k - 1] = c.slopes
            slope[i, k - 1:] = c.slopes[-1]
            nbp[i] = k
        return cls(g, cost, slope, nbp, curves)

    @property
    def g_min(self) -> np.ndarray:
        return self.g[:, 0]

    @property
    def g_max(self) -> np.ndarray:
        return self.g[np.arange(len(self.nbp)), self.nbp - 1]

    def clamp(self, idx, x) -> np.ndarray:
        return np.minimum(np.maximum(x, self.g_min[idx]), self.g_max[idx])


def _as_idx(idx, n) -> np.ndarray:
    if idx is None:
        return np.zeros(n, dtype=np.int64)
    return np.ascontiguousarray(idx, dtype=np.int64)


def dispatch_many(bank: CurveBank, idx, family_code: int, params, pen: Penalties,
                  rtol: float = DEFAULT_RTOL, backend=None):
    """Optimal total dispatch for a batch of parametric distributions.

    ``params`` is (n, 3); returns ``(g, slope, free)`` arrays.
    """
    params = np.ascontiguousarray(params, dtype=float)
    idx = _as_idx(idx, params.shape[0])
    fn = backend or _accel.dispatch_batch
    return fn(idx, bank.g, bank.slope, bank.nbp, int(family_code), params,
              float(pen.gamma1), float(pen.gamma2), float(rtol))


def qloss_many(bank: CurveBank, idx, g_hat, d, pen: Penalties, backend=None):
    """Regret loss and its g_hat-subgradient for a batch; ``g_hat`` must be in range."""
    g_hat = np.ascontiguousarray(g_hat, dtype=float)
    d = np.ascontiguousarray(d, dtype=float)
    idx = _as_idx(idx, g_hat.shape[0])
    fn = backend or _accel.qloss_batch
    return fn(idx, bank.g, bank.cost, bank.slope, bank.nbp, g_hat, d,
              float(pen.gamma1), float(pen.gamma2))


def total_deriv(curve: CostCurve, dist: DemandDistribution, pen: Penalties, g: float) -> float:
    """D(g) = C'(g) + (gamma1 + gamma2) F(g) - gamma1."""
    return curve.deriv(g) + dist.risk_deriv(g, pen)


def _bisect_generic(curve, dist, pen, rtol):
    lo, hi = curve.g_min, curve.g_max
    a, b = lo, hi
    while b - a > rtol * curve.width:
        m = 0.5 * (a + b)
        if total_deriv(curve, dist, pen, m) < 0.0:
            a = m
        else:
            b = m
    if a == lo and total_deriv(curve, dist, pen, lo) >= 0.0:
        return lo, a, b
    if b == hi and total_deriv(curve, dist, pen, hi) < 0.0:
        return hi, a, b
    return 0.5 * (a + b), a, b


def optimal_dispatch(curve: CostCurve, dist: DemandDistribution, pen: Penalties,
                     rtol: float = DEFAULT_RTOL) -> DispatchResult:
    if isinstance(dist, Empirical):
        g, a, b = _bisect_generic(curve, dist, pen, rtol)
        # the expected cost is piecewise linear: its minimum sits on a sample or a breakpoint
        slack = 2.0 * rtol * curve.width
        cands = [g]
        for arr in (dist.samples, curve.g):
            sel = arr[(arr >= a - slack) & (arr <= b + slack)]
            cands.extend(float(v) for v in sel if curve.g_min <= v <= curve.g_max)
        g = min(cands, key=lambda x: curve.eval(x) + dist.risk(x, pen))
        free = False
        slope = curve.deriv(g)
    else:
        bank = CurveBank.from_curves([curve])
        gs, lam, fr = dispatch_many(bank, None, dist.code, dist.params_array()[None, :], pen, rtol)
        g, slope, free = float(gs[0]), float(lam[0]), bool(fr[0])
    gen = curve.eval(g)
    rk = dist.risk(g, pen)
    return DispatchResult(g, curve.profile(g), gen, rk, gen + rk, free, slope)


def sample_loss_modelfree(curve: CostCurve, g_hat: float, d: float, pen: Penalties) -> SampleLoss:
    """Regret of dispatching ``g_hat`` when ``d`` materialises, with its subgradient."""
    value = curve.eval(g_hat) - curve.eval_extended(d)
    grad = curve.deriv(g_hat)
    if d > g_hat:
        value += pen.gamma1 * (d - g_hat)
        grad -= pen.gamma1
    elif g_hat > d:
        value += pen.gamma2 * (g_hat - d)
        grad += pen.gamma2
    return SampleLoss(float(value), float(grad))


def sample_loss_taskspecific(curve: CostCurve, dist: DemandDistribution, d: float, pen: Penalties):
    """Realised regret of the distribution-optimal dispatch and its gradient in the parameters.

    The dispatch solves ``g = quantile(fractile(C'(g)))`` on its segment, so
    ``dg/dtheta = d quantile / d theta`` there; it is zero when the dispatch
    is pinned to a kink of C or to an end of the range.
    """
    if isinstance(dist, Empirical):
        raise EmpiricalNotDifferentiable("task-specific gradients need a parametric family")
    res = optimal_dispatch(curve, dist, pen)
    loss = sample_loss_modelfree(curve, res.g_total, d, pen)
    n_par = len(dist.quantile_grad(0.5))
    if not res.free:
        return loss.value, np.zeros(n_par)
    p = pen.fractile(res.slope)
    return loss.value, loss.grad_g * dist.quantile_grad(p)


def marginal_regret(curve: CostCurve, truth: DemandDistribution, pen: Penalties, x: float) -> float:
    """K(x) = (gamma1 + gamma2) H(x) - gamma1 + C'(x) for the true demand cdf H."""
    return (pen.gamma1 + pen.gamma2) * float(truth.cdf(x)) - pen.gamma1 + curve.deriv(x)


def performance_gap(curve: CostCurve, dist_hat: DemandDistribution, true_demands, pen: Penalties) -> float:
    """Extra expected cost (under the empirical truth) of dispatching for ``dist_hat``."""
    truth = Empirical(np.asarray(true_demands, dtype=float))
    g_star = optimal_dispatch(curve, truth, pen).g_total
    g_hat = optimal_dispatch(curve, dist_hat, pen).g_total

    def true_cost(g):
        return curve.eval(g) + truth.risk(g, pen)

    return abs(true_cost(g_hat) - true_cost(g_star))
