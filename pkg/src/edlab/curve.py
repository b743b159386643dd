"""Exact piecewise-linear dispatch cost curve C(g) of a DC-constrained network.

``build_curve`` recovers every kink of the parametric LP value function by
recursive tangent intersection: for an interval [x, y] with known costs
and one-sided slopes, the tangents at x and y meet at z. If the LP at z
agrees with the tangent value, z is the only kink in (x, y); otherwise
both halves are explored. Each stored breakpoint keeps its optimal
dispatch profile so that any interior point can be dispatched by convex
interpolation.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lp
from .errors import InfeasibleError, OutOfDomain, RecursionDepthExceeded
from .grid import Generator, Network

MAX_DEPTH = 64
NUDGE = 1e-7  # dual probes sit this fraction of the domain inside an interval


def dual_tol(lam: float) -> float:
    return 1e-6 * max(1.0, abs(lam))


@dataclass(frozen=True, eq=False)
class CostCurve:
    g: np.ndarray  # breakpoints, strictly increasing
    cost: np.ndarray
    profiles: np.ndarray = field(repr=False)  # (K, n_gen)
    slopes: np.ndarray = field(init=False)
    lp_calls: int = 0

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        c = np.asarray(self.cost, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("a curve needs at least two strictly increasing breakpoints")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "profiles", np.asarray(self.profiles, dtype=float))
        object.__setattr__(self, "slopes", np.diff(c) / np.diff(g))
        for arr in (self.g, self.cost, self.profiles, self.slopes):
            arr.setflags(write=False)

    @property
    def g_min(self) -> float:
        return float(self.g[0])

    @property
    def g_max(self) -> float:
        return float(self.g[-1])

    @property
    def width(self) -> float:
        return self.g_max - self.g_min

    @property
    def n_segments(self) -> int:
        return self.slopes.size

    def _check_domain(self, g: float) -> float:
        tol = 1e-9 * max(1.0, self.width)
        if not (self.g_min - tol <= g <= self.g_max + tol):
            raise OutOfDomain(f"g={g} outside [{self.g_min}, {self.g_max}]")
        return min(max(g, self.g_min), self.g_max)

    def segment(self, g: float) -> int:
        """Index of the segment containing ``g`` (right segment at a breakpoint)."""
        k = int(np.searchsorted(self.g, g, side="right")) - 1
        return min(max(k, 0), self.n_segments - 1)

    def eval(self, g: float) -> float:
        g = self._check_domain(float(g))
        k = self.segment(g)
        return float(self.cost[k] + self.slopes[k] * (g - self.g[k]))

    def eval_extended(self, g: float) -> float:
        """C(g) continued linearly outside the domain with the end slopes."""
        g = float(g)
        if g < self.g_min:
            return float(self.cost[0] + self.slopes[0] * (g - self.g_min))
        if g > self.g_max:
            return float(self.cost[-1] + self.slopes[-1] * (g - self.g_max))
        return self.eval(g)

    def deriv(self, g: float) -> float:
        return float(self.slopes[self.segment(float(g))])

    def profile(self, g: float) -> np.ndarray:
        g = self._check_domain(float(g))
        k = self.segment(g)
        gamma = (g - self.g[k]) / (self.g[k + 1] - self.g[k])
        return (1.0 - gamma) * self.profiles[k] + gamma * self.profiles[k + 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.profiles.shape[1]
        w.writerow(["g", "cost", "slope", *[f"profile_{i}" for i in range(n)]])
        for k in range(self.g.size):
            slope = self.slopes[min(k, self.n_segments - 1)]
            w.writerow([repr(float(v)) for v in (self.g[k], self.cost[k], slope, *self.profiles[k])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"g": self.g.tolist(), "cost": self.cost.tolist(), "profiles": self.profiles.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "CostCurve":
        return cls(np.array(doc["g"]), np.array(doc["cost"]), np.array(doc["profiles"]))


def _canonical(points: list[tuple[float, float, np.ndarray]], width: float) -> list:
    """Sort points and drop the ones lying on the chord of their neighbours."""
    points = sorted(points, key=lambda p: p[0])
    out: list = []
    for p in points:
        if out and p[0] - out[-1][0] <= 1e-12 * max(1.0, width):
            if p is points[-1]:
                out[-1] = p
            continue
        while len(out) >= 2:
            (g0, c0, _), (g1, c1, _) = out[-2], out[-1]
            s_left = (c1 - c0) / (g1 - g0)
            s_right = (p[1] - c1) / (p[0] - g1)
            dev = (s_right - s_left) * (g1 - g0) * (p[0] - g1) / (p[0] - g0)
            if s_right - s_left <= 1e-9 * max(1.0, abs(s_left)) or dev <= 1e-10 * max(1.0, abs(c1)):
                out.pop()
            else:
                break
        out.append(p)
    return out


def build_curve(net: Network, nodal_demand, max_depth: int = MAX_DEPTH) -> CostCurve:
    nodal_demand = np.asarray(nodal_demand, dtype=float)
    g_min, g_max = lp.feasible_range(net, nodal_demand)
    width = g_max - g_min
    if width <= 1e-12 * max(1.0, abs(g_max)):
        raise InfeasibleError(f"dispatch range collapses to a point ({g_min} MW)")
    delta = NUDGE * width
    calls = 2
    points: list[tuple[float, float, np.ndarray]] = []

    def solve_at(g: float) -> lp.LpSolution:
        nonlocal calls
        calls += 1
        sol = lp.dispatch_cost(net, nodal_demand, g)
        if not sol.optimal:
            raise InfeasibleError(f"total generation {g} MW is not dispatchable")
        return sol

    def record(g: float, sol: lp.LpSolution) -> float:
        points.append((g, sol.objective, sol.x))
        return sol.objective

    def cga(x, cx, lx, y, cy, ly, depth):
        if depth > max_depth:
            raise RecursionDepthExceeded(f"curve recursion deeper than {max_depth} levels")
        if abs(lx - ly) <= dual_tol(max(abs(lx), abs(ly))):
            return
        z = (cy - cx + lx * x - ly * y) / (lx - ly)
        if z < x - 1e-9 * width or z > y + 1e-9 * width:
            # only reachable through dual noise on a linear stretch
            return
        z = min(max(z, x), y)
        tangent = cx + lx * (z - x)
        cz = record(z, solve_at(z))
        if abs(tangent - cz) <= 1e-7 * max(1.0, abs(tangent)):
            return
        if z - x <= 2 * delta or y - z <= 2 * delta:
            return
        lz_left = solve_at(z - delta).eq_dual
        lz_right = solve_at(z + delta).eq_dual
        cga(x, cx, lx, z, cz, lz_left, depth + 1)
        cga(z, cz, lz_right, y, cy, ly, depth + 1)

    cx = record(g_min, solve_at(g_min))
    cy = record(g_max, solve_at(g_max))
    lx = solve_at(g_min + delta).eq_dual
    ly = solve_at(g_max - delta).eq_dual
    cga(g_min, cx, lx, g_max, cy, ly, 0)

    pts = _canonical(points, width)
    return CostCurve(
        np.array([p[0] for p in pts]),
        np.array([p[1] for p in pts]),
        np.array([p[2] for p in pts]),
        lp_calls=calls,
    )


def merit_order_curve(generators: Sequence[Generator]) -> CostCurve:
    """Cost curve of the network-free pool: stack units by marginal cost."""
    gens = list(generators)
    if not gens:
        raise ValueError("merit order needs at least one generator")
    order = sorted(range(len(gens)), key=lambda i: (gens[i].marginal_cost, i))
    n = len(gens)
    g_pts, c_pts, profs = [0.0], [0.0], [np.zeros(n)]
    prof = np.zeros(n)
    total = cost = 0.0
    k = 0
    while k < len(order):
        c = gens[order[k]].marginal_cost
        block = []
        while k < len(order) and gens[order[k]].marginal_cost == c:
            block.append(order[k])
            k += 1
        cap = sum(gens[i].capacity for i in block)
        if cap <= 0:
            continue
        prof = prof.copy()
        for i in block:
            prof[i] = gens[i].capacity
        total += cap
        cost += c * cap
        g_pts.append(total)
        c_pts.append(cost)
        profs.append(prof)
    if len(g_pts) < 2:
        raise ValueError("all generators have zero capacity")
    return CostCurve(np.array(g_pts), np.array(c_pts), np.array(profs))
