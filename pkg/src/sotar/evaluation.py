"""Monte Carlo trip simulation, reliability curves and price-of-robustness metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy import stats

from .network import Link, Network, max_out_degree
from .reliability import RobustnessWeights, Solution, solve_classic, solve_robust
from .stochastic import KernelSet

Z99 = float(stats.norm.ppf(0.995))
BLOCK = 8192
REPLAN_MODES = ("nextbest", "subgraph")


@dataclass(frozen=True)
class TripStats:
    trips: int
    on_time: int
    trapped: int
    mean_travel_time: float  # over on-time trips; nan if none

    @property
    def probability(self) -> float:
        return self.on_time / self.trips

    @property
    def ci99(self) -> float:
        p = self.probability
        return Z99 * math.sqrt(p * (1 - p) / self.trips)


@dataclass(frozen=True)
class FailureSpec:
    """Links that become untraversable once the trip clock reaches their time."""

    events: Tuple[Tuple[Link, float], ...]
    replan: str = "nextbest"

    def __post_init__(self):
        if self.replan not in REPLAN_MODES:
            raise ValueError(f"replan mode must be one of {REPLAN_MODES}, got {self.replan!r}")
        object.__setattr__(self, "events", tuple((tuple(l), float(t)) for l, t in self.events))

    def validate(self, net: Network) -> None:
        for link, _ in self.events:
            if not net.has_link(link):
                raise ValueError(f"failed link {link} is not in the network")

    def failed_by(self, time: float) -> FrozenSet[Link]:
        return frozenset(l for l, t in self.events if t <= time)


@dataclass(frozen=True)
class RobustnessReport:
    delta_u: float
    delta_t: Optional[float]  # None when the target is unattainable under either solution

    @property
    def attainable(self) -> bool:
        return self.delta_t is not None


@dataclass(frozen=True)
class Curve:
    t: np.ndarray
    u: np.ndarray
    successor: np.ndarray  # 0 where no successor applies

    def switches(self) -> List[Tuple[float, int, int]]:
        """``(t, old, new)`` for every change of successor over budgets t > 0."""
        out = []
        for n in range(2, len(self.t)):
            if self.successor[n] != self.successor[n - 1]:
                out.append((float(self.t[n]), int(self.successor[n - 1]), int(self.successor[n])))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u", "successor"])
            for t, u, s in zip(self.t, self.u, self.successor):
                w.writerow([f"{t:g}", repr(float(u)), int(s) if s else ""])


def extract_curve(sol: Solution, edge: Link, y: float) -> Curve:
    edge = tuple(edge)
    if edge not in sol.table.index:
        raise KeyError(f"edge {edge} not in the network")
    m = sol.grid.cell_index(y)
    return Curve(sol.grid.times, sol.table.edge(edge)[:, m].copy(), sol.policy.edge(edge)[:, m].astype(int))


def min_budget(curve: Curve, target: float) -> Optional[float]:
    hit = np.nonzero(curve.u >= target)[0]
    return float(curve.t[hit[0]]) if hit.size else None


def price_of_robustness(
    sol_high: Solution, sol_low: Solution, edge: Link, y: float, budget: float, reliability_target: float
) -> RobustnessReport:
    """Reliability lost at ``budget`` and extra budget needed to reach the
    target when using ``sol_low`` (smaller leading weight) instead of ``sol_high``."""
    if sol_high.grid != sol_low.grid or sol_high.network != sol_low.network:
        raise ValueError("solutions must share grid and network")
    hi, lo = extract_curve(sol_high, edge, y), extract_curve(sol_low, edge, y)
    n = sol_high.grid.budget_index(budget)
    t_hi, t_lo = min_budget(hi, reliability_target), min_budget(lo, reliability_target)
    dt = None if t_hi is None or t_lo is None else t_lo - t_hi
    return RobustnessReport(float(hi.u[n] - lo.u[n]), dt)


class _Replanner:
    """Solutions on the network with failed links removed, cached per failure set."""

    def __init__(self, sol: Solution, kernels: KernelSet):
        self.sol = sol
        self.kernels = kernels
        self.cache: Dict[FrozenSet[Link], Solution] = {frozenset(): sol}

    def get(self, failed: FrozenSet[Link]) -> Optional[Solution]:
        if failed not in self.cache:
            base = self.sol
            try:
                net = base.network.without_links(failed)
            except ValueError:
                self.cache[failed] = None  # destination cut off entirely
                return None
            if base.psi is None:
                s = solve_classic(net, self.kernels, base.grid)
            else:
                lam = max(1, max_out_degree(net))
                vals = base.psi.values[:lam]
                # keep the leading weights and fold the dropped tail into the last one
                vals = vals[:-1] + (vals[-1] + sum(base.psi.values[lam:]),)
                s = solve_robust(net, self.kernels, base.grid, RobustnessWeights(vals))
            self.cache[failed] = s
        return self.cache[failed]


def simulate_trips(
    net: Network,
    kernels: KernelSet,
    sol: Solution,
    origin: int,
    budget: float,
    n: int,
    seed: int,
    failures: Optional[FailureSpec] = None,
    upstream: Optional[int] = None,
    y: Optional[float] = None,
    jitter: bool = False,
) -> TripStats:
    """Follow the stored policy on sampled link times.

    Trips start at ``origin`` with no upstream link, or on the edge
    ``(upstream, origin)`` with realized time ``y`` on it.  Link times are
    drawn from the discretized kernels, so a traversal landing in cell ``l``
    takes ``l * dt``; with ``jitter`` the time is spread uniformly over the
    cell instead.  Each block of trips uses its own stream seeded by
    ``(seed, block)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grid = sol.grid
    if budget < 0 or budget > grid.horizon:
        raise ValueError(f"budget {budget} outside [0, {grid.horizon}]")
    if failures is not None:
        failures.validate(net)
    if origin == net.destination:
        return TripStats(n, n, 0, 0.0)
    start_edge = -1
    start_cell = 0
    if upstream is not None:
        start_edge = sol.table.index[(upstream, origin)]
        start_cell = grid.cell_index(0.0 if y is None else y)
    sim = _Simulator(net, kernels, sol, failures, jitter)
    on_time = trapped = 0
    times = []
    for block, lo in enumerate(range(0, n, BLOCK)):
        size = min(BLOCK, n - lo)
        rng = np.random.default_rng([seed, block])
        ok, trap, tt = sim.run(rng, size, origin, start_edge, start_cell, budget)
        on_time += int(ok.sum())
        trapped += int(trap.sum())
        times.append(tt[ok])
    arrived = np.concatenate(times)
    mean = float(arrived.mean()) if arrived.size else float("nan")
    return TripStats(n, on_time, trapped, mean)


class _Simulator:
    def __init__(self, net, kernels, sol, failures, jitter):
        self.net = net
        self.sol = sol
        self.grid = sol.grid
        self.failures = failures
        self.jitter = jitter
        self.replanner = _Replanner(sol, kernels) if failures and failures.replan == "subgraph" else None
        self.edges = sol.table.edges
        self.eidx = sol.table.index
        self.tails = np.array([e[0] for e in self.edges], dtype=np.int64)
        self.edge_of = np.full((net.node_count + 1, net.node_count + 1), -1, dtype=np.int64)
        for n_, (a, b) in enumerate(self.edges):
            self.edge_of[a, b] = n_
        self._cum: Dict[int, np.ndarray] = {}
        self.pair_cum = {}
        for key, k in kernels.pair.items():
            self.pair_cum[key] = self._cumulative(k.matrix)
        self.src_cum = {l: self._cumulative(r[None, :]) for l, r in kernels.source.items()}

    def _cumulative(self, matrix):
        key = id(matrix)
        if key not in self._cum:
            self._cum[key] = np.cumsum(matrix, axis=1)
        return self._cum[key]

    def _ranking(self, sol: Solution, edge_link, node, rem, cell):
        if edge_link is not None and edge_link in sol.table.index:
            return sol.policy.ranking[sol.table.index[edge_link], rem, cell]
        return sol.policy.source_ranking[node, rem]

    def _choose(self, node, edge, rem, cell, clock):
        """Next node for one trip, or 0 when trapped."""
        link = self.edges[edge] if edge >= 0 else None
        sol = self.sol
        failed = self.failures.failed_by(clock) if self.failures else frozenset()
        if failed and self.replanner is not None:
            sol = self.replanner.get(failed)
            if sol is None:
                return 0
        for j in self._ranking(sol, link, node, rem, cell):
            j = int(j)
            if j == 0:
                break
            if (node, j) not in failed:
                return j
        return 0

    def run(self, rng, size, origin, start_edge, start_cell, budget):
        dt = self.grid.dt
        S = self.grid.size
        d = self.net.destination
        node = np.full(size, origin, dtype=np.int64)
        edge = np.full(size, start_edge, dtype=np.int64)
        cell = np.full(size, start_cell, dtype=np.int64)
        clock = np.zeros(size)
        ok = np.zeros(size, dtype=bool)
        trap = np.zeros(size, dtype=bool)
        active = np.arange(size)
        tol = 1e-9 * max(1.0, budget)
        while active.size:
            rem = np.floor((budget - clock[active]) / dt + 1e-9).astype(np.int64)
            rem = np.clip(rem, 0, S - 1)
            nxt = np.empty(active.size, dtype=np.int64)
            if self.failures is None:
                ranking = np.where(
                    (edge[active] >= 0)[:, None],
                    self.sol.policy.ranking[np.maximum(edge[active], 0), rem, cell[active]],
                    self.sol.policy.source_ranking[node[active], rem],
                )
                nxt[:] = ranking[:, 0]
            else:
                for q, t in enumerate(active):
                    nxt[q] = self._choose(int(node[t]), int(edge[t]), int(rem[q]), int(cell[t]), float(clock[t]))
            stuck = nxt == 0
            trap[active[stuck]] = True
            u = rng.random(active.size)
            jit = rng.random(active.size) if self.jitter else None
            drawn = np.zeros(active.size, dtype=np.int64)
            cur_node = node[active]
            cur_edge = edge[active]
            go = np.nonzero(~stuck)[0]
            tail = np.where(cur_edge[go] >= 0, self.tails[np.maximum(cur_edge[go], 0)], 0)
            base = self.net.node_count + 1
            codes = (tail * base + cur_node[go]) * base + nxt[go]
            keys, inverse = np.unique(codes, return_inverse=True)
            for g, code in enumerate(keys):
                qs = go[inverse == g]
                k, rest = divmod(int(code), base * base)
                i, j = divmod(rest, base)
                if k:
                    cum = self.pair_cum[(k, i, j)][cell[active[qs]]]
                else:
                    cum = np.broadcast_to(self.src_cum[(i, j)], (qs.size, S + 1))
                drawn[qs] = np.minimum((cum < u[qs, None]).sum(axis=1), S)
            step = drawn * dt if jit is None else (drawn - jit) * dt
            new_clock = clock[active] + step
            beyond = drawn >= S  # travel time past the horizon
            moved = active[go]
            edge[moved] = self.edge_of[cur_node[go], nxt[go]]
            node[moved] = nxt[go]
            cell[moved] = drawn[go]
            clock[active] = new_clock
            late = stuck | beyond | (new_clock > budget + tol)
            arrived = ~late & (nxt == d)
            ok[active[arrived]] = True
            active = active[~(late | arrived)]
        return ok, trap, clock
