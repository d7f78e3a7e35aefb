import csv
import math

import numpy as np
import pytest

from sotar.evaluation import (
    Curve,
    FailureSpec,
    TripStats,
    extract_curve,
    min_budget,
    price_of_robustness,
    simulate_trips,
)
from sotar.grid import TimeGrid
from sotar.network import Network
from sotar.reliability import solve_classic
from sotar.stochastic import KernelSet, discretized_marginal, gamma_cdf, gamma_from_moments


def test_destination_edge_curve_is_constant(sweep):
    c = extract_curve(sweep[0.9], (24, 25), 9.0)
    assert np.all(c.u == 1) and np.all(c.successor == 0)
    assert c.switches() == []


def test_psi_one_policy_is_node_four(sweep):
    c = extract_curve(sweep[1.0], (2, 3), 9.0)
    assert np.all(c.successor[1:] == 4)
    assert c.switches() == []


def test_robust_policy_switches_once_to_eight(sweep):
    for psi in (0.9, 0.8, 0.7):
        c = extract_curve(sweep[psi], (2, 3), 9.0)
        sw = c.switches()
        assert len(sw) == 1 and sw[0][1:] == (4, 8)


def test_curves_nondecreasing(sweep):
    for sol in sweep.values():
        for edge in [(2, 3), (1, 2), (7, 8), (3, 8)]:
            assert np.all(np.diff(extract_curve(sol, edge, 9.0).u) >= 0)


def test_curve_errors(sweep):
    with pytest.raises(KeyError):
        extract_curve(sweep[1.0], (1, 3), 9.0)
    with pytest.raises(ValueError):
        extract_curve(sweep[1.0], (2, 3), 81.0)


def test_curve_csv(tmp_path):
    c = Curve(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.25, 1.0]), np.array([4, 4, 0]))
    c.to_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows == [["t", "u", "successor"], ["0", "0.0", "4"], ["0.5", "0.25", "4"], ["1", "1.0", ""]]


def test_min_budget():
    c = Curve(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.5, 0.7]), np.zeros(3, int))
    assert min_budget(c, 0.5) == 1.0
    assert min_budget(c, 0.8) is None


def test_price_of_robustness_identical(sweep):
    r = price_of_robustness(sweep[0.9], sweep[0.9], (2, 3), 9.0, 60.0, 0.6)
    assert r.delta_u == 0 and r.delta_t == 0 and r.attainable


def test_price_of_robustness_gaps_nonnegative(sweep):
    for hi, lo in [(1.0, 0.9), (0.9, 0.8), (0.8, 0.7), (1.0, 0.7)]:
        r = price_of_robustness(sweep[hi], sweep[lo], (2, 3), 9.0, 60.0, 0.45)
        assert r.delta_u > 0
        assert r.delta_t > 0


def test_price_of_robustness_unattainable(sweep):
    r = price_of_robustness(sweep[1.0], sweep[0.7], (2, 3), 9.0, 60.0, 1.5)
    assert not r.attainable and r.delta_t is None


def test_price_of_robustness_needs_shared_grid(sweep, canon, canon_kernels):
    other = solve_classic(canon[0], canon_kernels, TimeGrid(0.5, 80.0))
    price_of_robustness(sweep[1.0], other, (2, 3), 9.0, 60.0, 0.6)
    coarse = Network(2, ((1, 2),), 2)
    grid = TimeGrid(1.0, 10.0)
    ks = KernelSet.independent(coarse, grid, {(1, 2): discretized_marginal(gamma_from_moments(3, 1), grid)})
    with pytest.raises(ValueError):
        price_of_robustness(sweep[1.0], solve_classic(coarse, ks, grid), (1, 2), 1.0, 5.0, 0.5)


@pytest.fixture(scope="module")
def single_link():
    grid = TimeGrid(0.25, 40.0)
    g = gamma_from_moments(9, 3)
    net = Network(2, ((1, 2),), 2)
    ks = KernelSet.independent(net, grid, {(1, 2): discretized_marginal(g, grid)})
    return net, ks, solve_classic(net, ks, grid), g


@pytest.mark.parametrize("jitter", [False, True])
def test_single_link_monte_carlo(single_link, jitter):
    net, ks, sol, g = single_link
    s = simulate_trips(net, ks, sol, 1, g.mean, 100_000, seed=7, jitter=jitter)
    assert abs(s.probability - gamma_cdf(g, g.mean)) <= 0.01
    assert s.trapped == 0 and s.on_time <= s.trips
    assert 7 < s.mean_travel_time <= 9


def test_budget_zero_and_origin_destination(single_link):
    net, ks, sol, _ = single_link
    assert simulate_trips(net, ks, sol, 1, 0.0, 1000, seed=1).on_time == 0
    s = simulate_trips(net, ks, sol, 2, 10.0, 1000, seed=1)
    assert s.probability == 1.0


def test_simulation_rejects_bad_input(single_link):
    net, ks, sol, _ = single_link
    with pytest.raises(ValueError):
        simulate_trips(net, ks, sol, 1, 41.0, 10, seed=1)
    with pytest.raises(ValueError):
        simulate_trips(net, ks, sol, 1, 5.0, 0, seed=1)
    with pytest.raises(ValueError):
        simulate_trips(net, ks, sol, 1, 5.0, 10, seed=1, failures=FailureSpec((((2, 1), 0.0),)))


def test_simulation_deterministic(canon, canon_kernels, classic):
    net, _ = canon
    a = simulate_trips(net, canon_kernels, classic, 3, 60.0, 20_000, seed=4, upstream=2, y=9.0)
    b = simulate_trips(net, canon_kernels, classic, 3, 60.0, 20_000, seed=4, upstream=2, y=9.0)
    c = simulate_trips(net, canon_kernels, classic, 3, 60.0, 20_000, seed=5, upstream=2, y=9.0)
    assert a == b
    assert a != c


def test_trip_stats():
    s = TripStats(100, 25, 3, 12.0)
    assert s.probability == 0.25
    assert s.ci99 == pytest.approx(2.5758293 * math.sqrt(0.25 * 0.75 / 100), rel=1e-6)


def test_failure_spec():
    f = FailureSpec((((4, 5), 10.0), ((8, 9), 0.0)))
    assert f.failed_by(5.0) == {(8, 9)}
    assert f.failed_by(10.0) == {(4, 5), (8, 9)}
    with pytest.raises(ValueError):
        FailureSpec((), replan="reroute")


def test_failure_hurts_psi_one_more(canon, canon_kernels, sweep):
    # (4, 5) is the only way on from node 4, which the psi = 1 policy always picks at node 3
    net, _ = canon
    kw = dict(upstream=2, y=9.0, seed=2)
    fail = FailureSpec((((4, 5), 0.0),))
    drops = {}
    for psi in (1.0, 0.9):
        base = simulate_trips(net, canon_kernels, sweep[psi], 3, 60.0, 20_000, **kw).probability
        hit = simulate_trips(net, canon_kernels, sweep[psi], 3, 60.0, 20_000, failures=fail, **kw)
        drops[psi] = base - hit.probability
    assert drops[0.9] < drops[1.0]


def test_subgraph_replanning_recovers(canon, canon_kernels, sweep):
    net, _ = canon
    kw = dict(upstream=2, y=9.0, seed=2)
    nb = simulate_trips(net, canon_kernels, sweep[1.0], 3, 60.0, 20_000,
                        failures=FailureSpec((((4, 5), 0.0),), "nextbest"), **kw)
    sg = simulate_trips(net, canon_kernels, sweep[1.0], 3, 60.0, 20_000,
                        failures=FailureSpec((((4, 5), 0.0),), "subgraph"), **kw)
    assert nb.trapped > 0
    assert sg.probability > nb.probability
    reduced = solve_classic(net.without_links({(4, 5)}), canon_kernels, sweep[1.0].grid)
    assert sg.probability == pytest.approx(reduced.value((2, 3), 60, 9), abs=0.02)
