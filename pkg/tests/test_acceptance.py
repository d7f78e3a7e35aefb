"""Acceptance criteria on the desk-scale grid (dt = 0.5, T = 80).

Each test logs one ``PASS``/``FAIL`` line; the lines are repeated in the
"acceptance criteria" section of the pytest summary.
"""
import time

import numpy as np
import pytest

from sotar.evaluation import extract_curve, price_of_robustness, simulate_trips
from sotar.grid import TimeGrid
from sotar.network import Network
from sotar.reliability import RobustnessWeights, solve_classic, solve_robust
from sotar.stochastic import (
    BivariatePair,
    KernelSet,
    build_network_kernels,
    discretized_marginal,
    gamma_cdf,
    gamma_from_moments,
    joint_pdf,
    pmf_row,
)

from oracles import brute_force_reliability

REFERENCE_SWITCH = {0.9: 57.0, 0.8: 55.0, 0.7: 53.0}


def _report(log, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    log(line)
    print(line)
    return ok


def test_c1_reduction_equality(canon, canon_time, canon_kernels, classic, acceptance_log):
    robust = solve_robust(canon[0], canon_kernels, canon_time, RobustnessWeights((1.0, 0.0)))
    diff = max(
        float(np.max(np.abs(robust.table.values - classic.table.values))),
        float(np.max(np.abs(robust.table.source - classic.table.source))),
    )
    same_policy = np.array_equal(robust.policy.ranking, classic.policy.ranking) and np.array_equal(
        robust.policy.source_ranking, classic.policy.source_ranking
    )
    ok = diff <= 1e-12 and same_policy
    assert _report(acceptance_log, 1, ok, f"max |diff| = {diff:.3g}, policies equal = {same_policy}")


def test_c2_single_link_oracle(acceptance_log):
    grid = TimeGrid(0.25, 80.0)
    g = gamma_from_moments(9, 3)
    net = Network(2, ((1, 2),), 2)
    ks = KernelSet.independent(net, grid, {(1, 2): discretized_marginal(g, grid)})
    sol = solve_classic(net, ks, grid)
    cdf = np.array([gamma_cdf(g, t) for t in grid.times])
    err = float(np.max(np.abs(sol.table.source[1] - cdf)))
    assert _report(acceptance_log, 2, err <= 0.01, f"max |u0 - gamma_cdf| = {err:.3g} (tol 0.01)")


DAG_PMFS = {
    (1, 2): ([1, 2, 3, 5], [0.1, 0.4, 0.3, 0.2]),
    (1, 3): ([2, 4, 6], [0.5, 0.25, 0.25]),
    (2, 3): ([1, 2], [0.6, 0.4]),
    (2, 4): ([3, 4, 5, 6, 8, 11], [0.1, 0.2, 0.3, 0.2, 0.1, 0.1]),
    (3, 4): ([2, 3, 7], [0.3, 0.5, 0.2]),
}


def test_c3_brute_force_equivalence(acceptance_log):
    grid = TimeGrid(1.0, 16.0)
    net = Network(4, tuple(DAG_PMFS), 4)
    ks = KernelSet.independent(net, grid, {l: pmf_row(grid, *p) for l, p in DAG_PMFS.items()})
    sol = solve_classic(net, ks, grid)
    succ = {i: net.successors(i) for i in net.nodes}
    pmfs = {l: list(zip(*p)) for l, p in DAG_PMFS.items()}
    oracle = np.array([[brute_force_reliability(succ, 4, pmfs, (i, n), 1.0) for n in range(grid.size)]
                       for i in range(net.node_count + 1)])
    err = float(np.max(np.abs(sol.table.source[1:] - oracle[1:])))
    for k, i in net.links:
        err = max(err, float(np.max(np.abs(sol.table.edge((k, i)) - oracle[i][:, None]))))
    assert _report(acceptance_log, 3, err <= 1e-9, f"max |solver - enumeration| = {err:.3g} over every cell")


def test_c4_psi_monotonicity(sweep, acceptance_log):
    order = [1.0, 0.9, 0.8, 0.7]
    violations = 0
    for hi, lo in zip(order, order[1:]):
        violations += int(np.sum(sweep[lo].table.values > sweep[hi].table.values + 1e-12))
        violations += int(np.sum(sweep[lo].table.source > sweep[hi].table.source + 1e-12))
    assert _report(acceptance_log, 4, violations == 0, f"violations = {violations}")


def test_c5_switch_thresholds(sweep, acceptance_log):
    base = extract_curve(sweep[1.0], (2, 3), 9.0)
    always_four = bool(np.all(base.successor[1:] == 4))
    thresholds, single = {}, True
    for psi in (0.9, 0.8, 0.7):
        sw = extract_curve(sweep[psi], (2, 3), 9.0).switches()
        single &= len(sw) == 1 and sw[0][1:] == (4, 8)
        thresholds[psi] = sw[0][0] if sw else float("nan")
    ordered = thresholds[0.9] >= thresholds[0.8] >= thresholds[0.7]
    in_band = {psi: abs(t - REFERENCE_SWITCH[psi]) <= 4 for psi, t in thresholds.items()}
    ok = always_four and single and ordered
    shown = ", ".join(f"{psi}: {t:g} (reference {REFERENCE_SWITCH[psi]:g})" for psi, t in thresholds.items())
    if all(in_band.values()):
        detail = f"thresholds {shown}, all within +/-4"
    else:
        missed = [str(p) for p, b in in_band.items() if not b]
        detail = (f"thresholds {shown}; +/-4 band missed for psi {', '.join(missed)} "
                  f"(fallback: single switch 4->8 and ordering hold)")
    detail = f"psi=1 always node 4 = {always_four}, single switch = {single}, ordered = {ordered}; " + detail
    assert _report(acceptance_log, 5, ok, detail)


def test_c6_price_of_robustness(sweep, acceptance_log):
    r = price_of_robustness(sweep[1.0], sweep[0.9], (2, 3), 9.0, 60.0, 0.60)
    positive = r.delta_u > 0 and r.attainable and r.delta_t > 0
    du_band = abs(r.delta_u - 0.36) <= 0.10
    dt_band = r.attainable and abs(r.delta_t - 9) <= 3
    detail = f"delta_u(60) = {r.delta_u:.4f} (reference 0.36 +/- 0.10), delta_t(0.60) = {r.delta_t} (reference 9 +/- 3)"
    if not (du_band and dt_band):
        detail += "; band missed, fallback: both gaps strictly positive"
    assert _report(acceptance_log, 6, positive, detail)


def test_c7_monte_carlo(canon, canon_kernels, classic, acceptance_log):
    net, _ = canon
    worst, parts = 0.0, []
    for budget in (40.0, 60.0, 80.0):
        s = simulate_trips(net, canon_kernels, classic, 3, budget, 100_000, seed=2024, upstream=2, y=9.0)
        table = classic.value((2, 3), budget, 9.0)
        worst = max(worst, abs(s.probability - table))
        parts.append(f"t={budget:g}: {s.probability:.4f} vs {table:.4f}")
    assert _report(acceptance_log, 7, worst <= 0.02, "; ".join(parts) + f"; max gap {worst:.4f} (tol 0.02)")


def test_c8_density_gate(canon_kernels, acceptance_log):
    g = gamma_from_moments(9, 3)
    pair = BivariatePair(g, g, 0.5)
    n = 600
    h = 30.0 / n
    mid = (np.arange(n) + 0.5) * h
    W, Y = np.meshgrid(mid, mid, indexing="ij")
    mass = float(joint_pdf(pair, W, Y).sum() * h * h)
    row_err = max(float(np.max(np.abs(k.matrix.sum(axis=1) - 1))) for k in canon_kernels.pair.values())
    row_err = max(row_err, max(abs(float(r.sum()) - 1) for r in canon_kernels.source.values()))
    ok = 0.995 <= mass <= 1.005 and row_err <= 1e-12
    assert _report(acceptance_log, 8, ok, f"mass over [0,30]^2 = {mass:.6f}; max |row sum - 1| = {row_err:.3g}")


def test_c9_monotone_convergence(canon, sweep, classic, acceptance_log):
    net, _ = canon
    limit = net.longest_path_length() + 1
    ok, parts = True, []
    for name, sol in [("classic", classic)] + [(f"psi={p}", s) for p, s in sweep.items()]:
        r = sol.residuals
        nonincreasing = all(b <= a for a, b in zip(r, r[1:]))
        ok &= sol.converged and nonincreasing and sol.iterations <= limit
        parts.append(f"{name}: {sol.iterations} it")
    assert _report(acceptance_log, 9, ok, f"limit {limit}; " + ", ".join(parts))


@pytest.mark.slow
def test_sweep_runtime(canon, acceptance_log):
    net, params = canon
    start = time.perf_counter()
    grid = TimeGrid(0.5, 80.0)
    ks = build_network_kernels(net, params, grid)
    for psi in (1.0, 0.9, 0.8, 0.7):
        solve_robust(net, ks, grid, RobustnessWeights.leading(psi, 2))
    elapsed = time.perf_counter() - start
    line = f"runtime: {'PASS' if elapsed < 60 else 'FAIL'}  full sweep incl. kernels {elapsed:.1f} s (budget 60 s)"
    acceptance_log(line)
    print(line)
    assert elapsed < 60
