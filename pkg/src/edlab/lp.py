"""Dense bounded-variable primal simplex for the small dispatch LPs.

Problems have the shape

    min  c @ x
    s.t. lower <= x <= upper                  (finite box)
         row_lower <= A @ x <= row_upper      (two-sided, either side may be inf)
         eq_row @ x == eq_target              (optional, at most one)

which covers every LP behind the cost curve: a generator box, shift-factor
line limits and the total-generation balance. The multiplier of the
balance row is returned as ``eq_dual`` (marginal cost of total output).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import InfeasibleError, NumericalFailure
from .grid import Network

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-8
PIVOT_TOL = 1e-9
COST_TOL = 1e-9
# consecutive degenerate pivots before switching to Bland's rule
BLAND_AFTER = 25


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LpProblem:
    cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray | None = None
    row_lower: np.ndarray | None = None
    row_upper: np.ndarray | None = None
    eq_row: np.ndarray | None = None
    eq_target: float = 0.0

    def __post_init__(self):
        n = len(self.cost)
        for name in ("cost", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            object.__setattr__(self, name, arr)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("variable bounds must be finite")
        if self.A is None:
            object.__setattr__(self, "A", np.zeros((0, n)))
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n)
        object.__setattr__(self, "A", A)
        k = A.shape[0]
        rl = np.full(k, -np.inf) if self.row_lower is None else np.asarray(self.row_lower, dtype=float)
        ru = np.full(k, np.inf) if self.row_upper is None else np.asarray(self.row_upper, dtype=float)
        if rl.shape != (k,) or ru.shape != (k,):
            raise ValueError("row bounds must match the number of rows of A")
        object.__setattr__(self, "row_lower", rl)
        object.__setattr__(self, "row_upper", ru)
        if self.eq_row is not None:
            eq = np.asarray(self.eq_row, dtype=float)
            if eq.shape != (n,):
                raise ValueError(f"eq_row must have length {n}")
            object.__setattr__(self, "eq_row", eq)


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    eq_dual: float = float("nan")
    row_duals: np.ndarray | None = field(default=None, repr=False)
    reduced_costs: np.ndarray | None = field(default=None, repr=False)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class _Tableau:
    """Standard form  M z = r,  lo <= z <= up  with a basis over the columns of M."""

    def __init__(self, M, r, lo, up):
        self.M = M
        self.r = r
        self.lo = lo
        self.up = up
        self.m, self.n = M.shape
        self.basis = np.zeros(self.m, dtype=int)
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.iterations = 0

    def nonbasic_values(self):
        z = np.where(self.at_upper, self.up, self.lo)
        z[self.basis] = 0.0
        return z

    def factor(self):
        B = self.M[:, self.basis]
        lu = lu_factor(B, check_finite=False)
        if np.min(np.abs(np.diag(lu[0]))) < 1e-13:
            raise NumericalFailure("basis matrix became singular")
        return lu

    def values(self, lu):
        z = self.nonbasic_values()
        z[self.basis] = lu_solve(lu, self.r - self.M @ z, check_finite=False)
        return z

    def run(self, c, max_iter: int) -> Status:
        is_basic = np.zeros(self.n, dtype=bool)
        degenerate = 0
        for _ in range(max_iter):
            is_basic[:] = False
            is_basic[self.basis] = True
            lu = self.factor()
            z = self.values(lu)
            y = lu_solve(lu, c[self.basis], trans=1, check_finite=False)
            d = c - y @ self.M
            movable = (~is_basic) & (self.up > self.lo)
            inc = movable & ~self.at_upper & (d < -COST_TOL)
            dec = movable & self.at_upper & (d > COST_TOL)
            cand = np.flatnonzero(inc | dec)
            if cand.size == 0:
                return Status.OPTIMAL
            if degenerate >= BLAND_AFTER:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            s = 1.0 if inc[q] else -1.0
            w = lu_solve(lu, self.M[:, q], check_finite=False)
            delta = -s * w
            zb = z[self.basis]
            lob = self.lo[self.basis]
            upb = self.up[self.basis]
            t_best = self.up[q] - self.lo[q]
            leave = -1
            leave_upper = False
            for i in range(self.m):
                if delta[i] < -PIVOT_TOL:
                    t = max(zb[i] - lob[i], 0.0) / -delta[i]
                    hit_upper = False
                elif delta[i] > PIVOT_TOL and np.isfinite(upb[i]):
                    t = max(upb[i] - zb[i], 0.0) / delta[i]
                    hit_upper = True
                else:
                    continue
                if t < t_best - 1e-12 or (
                    leave >= 0 and abs(t - t_best) <= 1e-12 and self.basis[i] < self.basis[leave]
                ):
                    t_best, leave, leave_upper = t, i, hit_upper
            if not np.isfinite(t_best):
                return Status.UNBOUNDED
            degenerate = degenerate + 1 if t_best <= 1e-12 else 0
            self.iterations += 1
            if leave < 0:
                self.at_upper[q] = not self.at_upper[q]
            else:
                p = self.basis[leave]
                self.basis[leave] = q
                self.at_upper[p] = leave_upper
                self.at_upper[q] = False
            if logger.isEnabledFor(logging.DEBUG):
                logger.debug("pivot %d: enter %d leave %s t=%.3g basis=%s",
                             self.iterations, q, leave, t_best, self.basis.tolist())
        raise NumericalFailure(f"simplex did not converge in {max_iter} iterations")


def solve(problem: LpProblem) -> LpSolution:
    """Solve ``problem``; returns a solution whose ``status`` says whether it is optimal."""
    n = len(problem.cost)
    A, rl, ru = problem.A, problem.row_lower, problem.row_upper

    # one-sided rows a @ x <= rhs, each with a slack column
    rows, rhs, origin = [], [], []
    for i in range(A.shape[0]):
        if np.isfinite(ru[i]):
            rows.append(A[i])
            rhs.append(ru[i])
            origin.append((i, 1.0))
        if np.isfinite(rl[i]):
            rows.append(-A[i])
            rhs.append(-rl[i])
            origin.append((i, -1.0))
    n_ineq = len(rows)
    has_eq = problem.eq_row is not None
    m = n_ineq + int(has_eq)
    if m == 0:
        x = np.where(problem.cost < 0, problem.upper, problem.lower)
        return LpSolution(Status.OPTIMAL, x, float(problem.cost @ x), float("nan"),
                          np.zeros(0), problem.cost.copy(), 0)

    M = np.zeros((m, n + n_ineq))
    r = np.zeros(m)
    if n_ineq:
        M[:n_ineq, :n] = np.array(rows)
        M[:n_ineq, n:] = np.eye(n_ineq)
        r[:n_ineq] = rhs
    if has_eq:
        M[-1, :n] = problem.eq_row
        r[-1] = problem.eq_target
    lo = np.concatenate([problem.lower, np.zeros(n_ineq)])
    up = np.concatenate([problem.upper, np.full(n_ineq, np.inf)])

    resid = r - M[:, :n] @ problem.lower
    art_rows = [i for i in range(m) if i >= n_ineq or resid[i] < -FEAS_TOL]
    n_art = len(art_rows)
    if n_art:
        Art = np.zeros((m, n_art))
        for k, i in enumerate(art_rows):
            Art[i, k] = 1.0 if resid[i] >= 0 else -1.0
        M = np.hstack([M, Art])
        lo = np.concatenate([lo, np.zeros(n_art)])
        up = np.concatenate([up, np.full(n_art, np.inf)])
    tab = _Tableau(M, r, lo, up)
    art_of_row = {i: n + n_ineq + k for k, i in enumerate(art_rows)}
    tab.basis[:] = [art_of_row.get(i, n + i) for i in range(m)]
    max_iter = 50 * (M.shape[0] + M.shape[1]) + 100

    if n_art:
        c1 = np.zeros(M.shape[1])
        c1[n + n_ineq:] = 1.0
        tab.run(c1, max_iter)
        z = tab.values(tab.factor())
        infeas = float(z[n + n_ineq:].sum())
        if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(r)))):
            return LpSolution(Status.INFEASIBLE, iterations=tab.iterations)
        # pivot zero-valued artificials out of the basis
        first_art = n + n_ineq
        for pos in range(m):
            if tab.basis[pos] < first_art:
                continue
            lu = tab.factor()
            e = np.zeros(m)
            e[pos] = 1.0
            row = lu_solve(lu, e, trans=1, check_finite=False) @ M
            row[tab.basis] = 0.0
            row[first_art:] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                tab.at_upper[tab.basis[pos]] = False
                tab.basis[pos] = j
                tab.at_upper[j] = False
        tab.up[first_art:] = 0.0

    c2 = np.zeros(M.shape[1])
    c2[:n] = problem.cost
    status = tab.run(c2, max_iter)
    if status is Status.UNBOUNDED:
        raise NumericalFailure("unbounded direction found despite finite variable bounds")
    lu = tab.factor()
    z = tab.values(lu)
    y = lu_solve(lu, c2[tab.basis], trans=1, check_finite=False)
    x = np.clip(z[:n], problem.lower, problem.upper)
    row_duals = np.zeros(A.shape[0])
    for k, (i, sign) in enumerate(origin):
        row_duals[i] += sign * y[k]
    eq_dual = float(y[-1]) if has_eq else float("nan")
    reduced = problem.cost - (y @ M)[:n]
    return LpSolution(Status.OPTIMAL, x, float(problem.cost @ x), eq_dual,
                      row_duals, reduced, tab.iterations)


# -- dispatch LPs on a network -----------------------------------------------

def line_rows(net: Network, nodal_demand) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Line limits  -b <= Hg g - Hd d <= b  written as rows over g."""
    d = np.asarray(nodal_demand, dtype=float)
    offset = net.Hd @ d if len(net.loads) else np.zeros(len(net.lines))
    b = net.line_capacity
    return np.asarray(net.Hg), offset - b, offset + b


def dispatch_problem(net: Network, nodal_demand, total: float | None, cost=None) -> LpProblem:
    A, rl, ru = line_rows(net, nodal_demand)
    n = net.n_gen
    return LpProblem(
        cost=net.costs if cost is None else np.asarray(cost, dtype=float),
        lower=np.zeros(n),
        upper=net.gen_capacity,
        A=A,
        row_lower=rl,
        row_upper=ru,
        eq_row=None if total is None else np.ones(n),
        eq_target=0.0 if total is None else float(total),
    )


def dispatch_cost(net: Network, nodal_demand, total: float) -> LpSolution:
    """Cheapest dispatch producing exactly ``total`` MW (the curve's LP)."""
    return solve(dispatch_problem(net, nodal_demand, total))


def feasible_range(net: Network, nodal_demand) -> tuple[float, float]:
    """Smallest and largest total generation compatible with the box and line limits."""
    ones = np.ones(net.n_gen)
    lo = solve(dispatch_problem(net, nodal_demand, None, cost=ones))
    hi = solve(dispatch_problem(net, nodal_demand, None, cost=-ones))
    if not (lo.optimal and hi.optimal):
        raise InfeasibleError("line limits cannot be met by any dispatch")
    return lo.objective, -hi.objective
