from __future__ import annotations

import numpy as np
import pytest
from _util import highs_cost, highs_range, random_network, vertex_enumeration
from hypothesis import given, settings
from hypothesis import strategies as st

from edlab import grid, lp
from edlab.errors import InfeasibleError
from edlab.grid import Bus, Generator, Line, LoadSite, build_network
from edlab.lp import LpProblem, Status


def test_single_generator():
    sol = lp.solve(LpProblem([40.0], [0.0], [2.0], eq_row=[1.0], eq_target=1.0))
    assert sol.optimal
    assert sol.x == pytest.approx([1.0])
    assert sol.objective == pytest.approx(40.0)
    assert sol.eq_dual == pytest.approx(40.0)


def test_merit_order_marginal_unit():
    sol = lp.solve(LpProblem([40.0, 50.0], [0, 0], [1, 1], eq_row=[1, 1], eq_target=1.5))
    assert sol.x == pytest.approx([1.0, 0.5])
    assert sol.objective == pytest.approx(65.0)
    assert sol.eq_dual == pytest.approx(50.0)


def test_infeasible_target():
    sol = lp.solve(LpProblem([1.0, 1.0], [0, 0], [1, 1], eq_row=[1, 1], eq_target=3.0))
    assert sol.status is Status.INFEASIBLE


def test_four_bus_line_limit_against_vertex_enumeration():
    net = grid.load_network("builtin:four_bus")
    d = net.nodal_demand(2.5)
    prob = lp.dispatch_problem(net, d, 2.5)
    sol = lp.solve(prob)
    best, _ = vertex_enumeration(prob.cost, prob.lower, prob.upper, prob.A, prob.row_lower, prob.row_upper,
                                 prob.eq_row, prob.eq_target)
    assert sol.objective == pytest.approx(best, abs=1e-9)
    # the cheap unit cannot carry everything: cost strictly above the pool merit order
    assert sol.objective > 40.0 * 2.0 + 50.0 * 0.5 + 1e-6
    lo, hi = lp.feasible_range(net, d)
    assert (lo, hi) == pytest.approx(highs_range(net, d), abs=1e-9)


def test_feasible_range_simple_cases():
    net = build_network([Bus(0, True), Bus(1), Bus(2)], [Line(0, 1, 1.0, 10.0), Line(1, 2, 1.0, 10.0)],
                        [Generator(i, 10.0, 1.0) for i in range(3)], [LoadSite(0, 1.0)])
    assert lp.feasible_range(net, net.nodal_demand(1.0)) == pytest.approx((0.0, 3.0))
    radial = build_network([Bus(0), Bus(1, True)], [Line(0, 1, 1.0, 1.5)], [Generator(0, 10.0, 5.0)],
                           [LoadSite(1, 1.0)])
    assert lp.feasible_range(radial, radial.nodal_demand(1.0))[1] == pytest.approx(1.5)


def test_infeasible_network():
    # the load sits away from the slack and its own flow already breaks the line limit
    net = build_network([Bus(0, True), Bus(1)], [Line(0, 1, 1.0, 0.5)], [Generator(1, 10.0, 0.1)], [LoadSite(1, 1.0)])
    with pytest.raises(InfeasibleError):
        lp.feasible_range(net, net.nodal_demand(2.0))


@pytest.mark.parametrize("seed", range(30))
def test_matches_highs_and_duals(seed):
    net, d = random_network(seed)
    lo, hi = lp.feasible_range(net, d)
    assert (lo, hi) == pytest.approx(highs_range(net, d), abs=1e-7)
    rng = np.random.default_rng(seed)
    for g in rng.uniform(lo, hi, 5):
        prob = lp.dispatch_problem(net, d, g)
        sol = lp.solve(prob)
        ref, _, _ = highs_cost(net, d, g)
        assert sol.objective == pytest.approx(ref, abs=1e-7 * max(1.0, abs(ref)))
        # primal feasibility
        x = sol.x
        assert np.all(x >= -1e-8) and np.all(x <= net.gen_capacity + 1e-8)
        ax = prob.A @ x
        assert np.all(ax >= prob.row_lower - 1e-8) and np.all(ax <= prob.row_upper + 1e-8)
        assert x.sum() == pytest.approx(g, abs=1e-8)
        # strong duality: c x = eq_dual * g + row duals * active bounds + reduced costs * active box.
        # Multipliers are d(cost)/d(rhs): negative on an active upper limit, positive on a lower one.
        y = sol.row_duals
        row_rhs = np.where(y < 0, prob.row_upper, np.where(y > 0, prob.row_lower, 0.0))
        box = np.where(sol.reduced_costs > 0, prob.lower, np.where(sol.reduced_costs < 0, prob.upper, x))
        dual_obj = sol.eq_dual * g + y @ row_rhs + sol.reduced_costs @ box
        assert sol.objective == pytest.approx(dual_obj, abs=1e-7 * max(1.0, abs(sol.objective)))
        # complementary slackness
        slack_up = prob.row_upper - ax
        slack_lo = ax - prob.row_lower
        assert np.all(np.abs(np.where(y < 0, y * slack_up, 0.0)) <= 1e-7)
        assert np.all(np.abs(np.where(y > 0, y * slack_lo, 0.0)) <= 1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_eq_dual_is_sensitivity(seed):
    net, d = random_network(seed)
    lo, hi = lp.feasible_range(net, d)
    eps = 1e-6 * (hi - lo)
    rng = np.random.default_rng(seed)
    checked = 0
    for g in rng.uniform(lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo), 10):
        sols = [lp.dispatch_cost(net, d, x) for x in (g - 2 * eps, g - eps, g, g + eps, g + 2 * eps)]
        c = [s.objective for s in sols]
        # skip points whose neighbourhood straddles a kink
        if abs((c[4] - c[3]) - (c[1] - c[0])) > 1e-9 * max(1.0, abs(c[2])):
            continue
        fd = (c[3] - c[1]) / (2 * eps)
        assert sols[2].eq_dual == pytest.approx(fd, rel=1e-5, abs=1e-5)
        checked += 1
    assert checked > 0


def test_deterministic():
    net, d = random_network(7)
    a = lp.dispatch_cost(net, d, float(net.gen_capacity.sum() * 0.3))
    b = lp.dispatch_cost(net, d, float(net.gen_capacity.sum() * 0.3))
    assert a.x.tobytes() == b.x.tobytes() and a.eq_dual == b.eq_dual and a.iterations == b.iterations


@settings(max_examples=60, deadline=None)
@given(
    costs=st.lists(st.floats(0, 100), min_size=1, max_size=4),
    caps=st.lists(st.floats(0.1, 5), min_size=4, max_size=4),
    frac=st.floats(0, 1),
)
def test_box_only_merit_order(costs, caps, frac):
    n = len(costs)
    caps = np.array(caps[:n])
    target = frac * caps.sum()
    sol = lp.solve(LpProblem(costs, np.zeros(n), caps, eq_row=np.ones(n), eq_target=target))
    best, _ = vertex_enumeration(np.array(costs), np.zeros(n), caps, np.zeros((0, n)), np.zeros(0), np.zeros(0),
                                 np.ones(n), target)
    assert sol.optimal
    assert sol.objective == pytest.approx(best, abs=1e-7 * max(1.0, abs(best)))


def test_problem_validation():
    with pytest.raises(ValueError):
        LpProblem([1.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [0.0], [np.inf])
    with pytest.raises(ValueError):
        LpProblem([1.0, 2.0], [0.0], [1.0])
