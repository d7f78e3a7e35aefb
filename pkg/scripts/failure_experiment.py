"""On-time rates from edge (2,3), y = 9 when link (4,5) fails, for each psi and
both replanning modes.

    python3 scripts/failure_experiment.py --budget 60 --trips 50000
"""
import argparse

from sotar.evaluation import FailureSpec, simulate_trips
from sotar.grid import TimeGrid
from sotar.network import build_paper_grid
from sotar.reliability import RobustnessWeights, solve_robust
from sotar.stochastic import build_network_kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=float, default=60.0)
    ap.add_argument("--fail-time", type=float, default=0.0)
    ap.add_argument("--trips", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net, params = build_paper_grid()
    grid = TimeGrid(0.5, 80.0)
    kernels = build_network_kernels(net, params, grid)
    kw = dict(upstream=2, y=9.0)
    print("psi   no-failure  nextbest  subgraph")
    for psi in (1.0, 0.9, 0.8, 0.7):
        sol = solve_robust(net, kernels, grid, RobustnessWeights.leading(psi, 2))
        rates = [simulate_trips(net, kernels, sol, 3, args.budget, args.trips, args.seed, **kw).probability]
        for mode in ("nextbest", "subgraph"):
            fail = FailureSpec((((4, 5), args.fail_time),), mode)
            rates.append(simulate_trips(net, kernels, sol, 3, args.budget, args.trips, args.seed, fail, **kw).probability)
        print(f"{psi:<5g} " + "  ".join(f"{r:9.4f}" for r in rates))


if __name__ == "__main__":
    main()
