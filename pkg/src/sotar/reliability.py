"""Successive-approximation solvers for on-time arrival reliability.

Tables are indexed ``[edge][t_index, y_index]`` where the edge is the link
just traversed, ``t_index`` the remaining budget (grid lower edge) and
``y_index`` the cell of the realized travel time on that edge.  The recursion
only ever reads ``(t - w, w)`` from ``(t, y)``, so the triangle
``y <= T - t`` is closed under it; cells outside the triangle are filled by
the same recursion and carry no extra meaning.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .grid import GridError, TimeGrid
from .network import Link, LinkParams, Network, max_out_degree, network_from_dict, network_to_dict
from .stochastic import ConditionalKernel, KernelSet

__all__ = [
    "TimeGrid",
    "RobustnessWeights",
    "ReliabilityTable",
    "PolicyTable",
    "Solution",
    "compute_A",
    "robust_value",
    "solve_classic",
    "solve_robust",
    "query",
    "save_solution",
    "load_solution",
]

MAGIC = b"SOTAR1\n"
NO_SUCCESSOR = 0


class WeightsError(ValueError):
    pass


@dataclass(frozen=True)
class RobustnessWeights:
    values: Tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", v)
        if not v:
            raise WeightsError("weights must be nonempty")
        if any(x < 0 or not math.isfinite(x) for x in v):
            raise WeightsError(f"weights must be finite and nonnegative: {v}")
        if abs(sum(v) - 1) > 1e-9:
            raise WeightsError(f"weights must sum to 1, got {sum(v)}")
        if any(a < b for a, b in zip(v, v[1:])):
            raise WeightsError(f"weights must be nonincreasing: {v}")

    def __len__(self):
        return len(self.values)

    @classmethod
    def leading(cls, psi: float, length: int) -> "RobustnessWeights":
        """``(psi, 1 - psi, 0, ...)``; for two successors this is the usual scalar sweep."""
        if length == 1:
            return cls((1.0,)) if abs(psi - 1) <= 1e-12 else cls((psi,))
        return cls((psi, 1.0 - psi) + (0.0,) * (length - 2))

    @classmethod
    def classic(cls, length: int) -> "RobustnessWeights":
        return cls((1.0,) + (0.0,) * (length - 1))


@dataclass
class ReliabilityTable:
    edges: Tuple[Link, ...]
    values: np.ndarray  # (n_edges, S, S)
    source: np.ndarray  # (n_nodes + 1, S), row 0 unused

    def __post_init__(self):
        self.index = {e: n for n, e in enumerate(self.edges)}

    def edge(self, link: Link) -> np.ndarray:
        return self.values[self.index[tuple(link)]]


@dataclass
class PolicyTable:
    """Successor ranking by A-value; column 0 is the chosen successor.

    Rankings are padded with ``NO_SUCCESSOR`` (0) past a node's out-degree.
    """

    edges: Tuple[Link, ...]
    ranking: np.ndarray  # (n_edges, S, S, width)
    source_ranking: np.ndarray  # (n_nodes + 1, S, width)

    def __post_init__(self):
        self.index = {e: n for n, e in enumerate(self.edges)}

    def edge(self, link: Link) -> np.ndarray:
        return self.ranking[self.index[tuple(link)], :, :, 0]

    def source(self, node: int) -> np.ndarray:
        return self.source_ranking[node, :, 0]


@dataclass
class Solution:
    network: Network
    grid: TimeGrid
    psi: Optional[RobustnessWeights]
    table: ReliabilityTable
    policy: PolicyTable
    iterations: int
    converged: bool
    residuals: List[float]
    params: Optional[LinkParams] = None
    form: str = "kibble"

    def value(self, link: Link, t: float, y: float) -> float:
        return float(self.table.edge(link)[self.grid.budget_index(t), self.grid.cell_index(y)])

    def successor(self, link: Link, t: float, y: float) -> Optional[int]:
        s = int(self.policy.edge(link)[self.grid.budget_index(t), self.grid.cell_index(y)])
        return s or None


def robust_value(a_values: Sequence[float], lam: int, psi: RobustnessWeights) -> float:
    """Weighted mean of the A-values sorted in decreasing order, zero-padded to ``lam``."""
    if len(psi) != lam:
        raise WeightsError(f"need {lam} weights, got {len(psi)}")
    b = sorted((float(a) for a in a_values), reverse=True)[:lam]
    b += [0.0] * (lam - len(b))
    total = 0.0
    for w, v in zip(psi.values, b):
        total += w * v
    return total


def compute_A(
    edge: Link, successor: int, t_index: int, y_index: int, table: ReliabilityTable, kernel: ConditionalKernel
) -> float:
    """Probability of on-time arrival when leaving ``edge``'s head towards ``successor``.

    Straight sum over travel-time cells ``1..t_index``; the vectorized
    solver computes the same quantity by matrix products.
    """
    _, i = edge
    down = table.edge((i, successor))
    row = kernel.matrix[y_index]
    total = 0.0
    for l in range(1, t_index + 1):
        total += row[l] * down[t_index - l, l]
    return total


def _shear(u: np.ndarray, rows, cols) -> np.ndarray:
    """``V[n, l] = u[n - l, l]`` for ``l <= n`` and 0 above the diagonal."""
    v = np.zeros_like(u)
    v[rows, cols] = u[rows - cols, cols]
    return v


def _solve(
    net: Network,
    kernels: KernelSet,
    grid: TimeGrid,
    psi: Optional[RobustnessWeights],
    epsilon: float,
    max_iter: int,
) -> Solution:
    lam = max(1, max_out_degree(net))
    if psi is not None and len(psi) != lam:
        raise WeightsError(f"weights have length {len(psi)} but the network's max out-degree is {lam}")
    weights = psi.values if psi is not None else (1.0,) + (0.0,) * (lam - 1)
    S = grid.size
    d = net.destination
    edges = net.links
    eidx = {e: n for n, e in enumerate(edges)}
    missing = [key for (k, i), (_, j) in net.adjacent_pairs() if (key := (k, i, j)) not in kernels.pair]
    missing_src = [l for l in edges if l not in kernels.source]
    if missing or missing_src:
        raise KeyError(f"no kernels for pairs {missing[:5]} / first links {missing_src[:5]}")

    # Kernels without the beyond-horizon column, transposed for V @ P.T.
    kt = {key: np.ascontiguousarray(k.matrix[:, :S].T) for key, k in kernels.pair.items()}
    src = {l: np.ascontiguousarray(r[:S]) for l, r in kernels.source.items()}
    rows, cols = np.tril_indices(S)

    values = np.zeros((len(edges), S, S))
    source = np.zeros((net.node_count + 1, S))
    for n, (k, i) in enumerate(edges):
        if i == d:
            values[n] = 1.0
    source[d] = 1.0

    ranking = np.zeros((len(edges), S, S, lam), dtype=np.int16)
    src_ranking = np.zeros((net.node_count + 1, S, lam), dtype=np.int16)
    residuals: List[float] = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        sheared = {e: _shear(values[eidx[e]], rows, cols) for e in edges}
        new_values = values.copy()
        new_source = source.copy()
        for n, (k, i) in enumerate(edges):
            succ = net.successors(i)
            if i == d:
                continue
            if not succ:
                new_values[n] = 0.0
                continue
            a = np.stack([sheared[(i, j)] @ kt[(k, i, j)] for j in succ])
            new_values[n], ranking[n, :, :, : len(succ)] = _combine(a, succ, weights)
        for i in net.nodes:
            succ = net.successors(i)
            if i == d or not succ:
                continue
            a = np.stack([sheared[(i, j)] @ src[(i, j)] for j in succ])
            new_source[i], src_ranking[i, :, : len(succ)] = _combine(a, succ, weights)
        res = max(float(np.max(np.abs(new_values - values))), float(np.max(np.abs(new_source - source))))
        residuals.append(res)
        values, source = new_values, new_source
        if res <= epsilon:
            converged = True
            break
    table = ReliabilityTable(edges, values, source)
    policy = PolicyTable(edges, ranking, src_ranking)
    return Solution(net, grid, psi, table, policy, it, converged, residuals)


def _combine(a: np.ndarray, succ: Tuple[int, ...], weights: Tuple[float, ...]):
    """Value and successor ranking from the stacked A-values (successor axis first)."""
    order = np.argsort(-a, axis=0, kind="stable")
    b = np.take_along_axis(a, order, axis=0)
    value = weights[0] * b[0]
    for p in range(1, min(len(weights), len(succ))):
        value = value + weights[p] * b[p]
    ids = np.asarray(succ, dtype=np.int16)[order]
    # row sums of 1 - O(ulp) can push sums a hair past 1
    return np.minimum(value, 1.0), np.moveaxis(ids, 0, -1)


def default_max_iter(net: Network) -> int:
    return 4 * net.node_count


def solve_classic(
    net: Network, kernels: KernelSet, grid: TimeGrid, epsilon: float = 1e-9, max_iter: Optional[int] = None
) -> Solution:
    """Maximize on-time arrival probability over successors at every state."""
    return _solve(net, kernels, grid, None, epsilon, max_iter or default_max_iter(net))


def solve_robust(
    net: Network,
    kernels: KernelSet,
    grid: TimeGrid,
    psi: RobustnessWeights,
    epsilon: float = 1e-9,
    max_iter: Optional[int] = None,
) -> Solution:
    """Replace the max over successors by the psi-weighted mean of sorted
    A-values.  The stored policy is still the argmax of A."""
    return _solve(net, kernels, grid, psi, epsilon, max_iter or default_max_iter(net))


def query(sol: Solution, origin: int, budget: float) -> Tuple[float, Optional[int]]:
    """Reliability and first successor for a trip starting at ``origin``."""
    if not 1 <= origin <= sol.network.node_count:
        raise ValueError(f"unknown origin node {origin}")
    n = sol.grid.budget_index(budget)
    if origin == sol.network.destination:
        return 1.0, None
    s = int(sol.policy.source(origin)[n])
    return float(sol.table.source[origin, n]), (s or None)


# -- serialization -------------------------------------------------------------------------


def save_solution(path, sol: Solution) -> None:
    """Write ``SOTAR1`` magic, one JSON header line, then raw little-endian arrays."""
    arrays = {
        "values": sol.table.values.astype("<f8"),
        "source": sol.table.source.astype("<f8"),
        "ranking": sol.policy.ranking.astype("<i2"),
        "source_ranking": sol.policy.source_ranking.astype("<i2"),
    }
    specs, offset = [], 0
    for name, arr in arrays.items():
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    if sol.params is not None:
        net_doc = network_to_dict(sol.network, sol.params)
    else:
        net_doc = {"nodes": sol.network.node_count, "destination": sol.network.destination,
                   "links": [list(l) for l in sol.network.links]}
    header = {
        "format": 1,
        "grid": {"dt": sol.grid.dt, "horizon": sol.grid.horizon},
        "network": net_doc,
        "form": sol.form,
        "psi": list(sol.psi.values) if sol.psi is not None else None,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "residuals": sol.residuals,
        "edges": [list(e) for e in sol.table.edges],
        "arrays": specs,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for arr in arrays.values():
        buf.write(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(buf.getvalue())


class DumpError(ValueError):
    pass


def load_solution(path) -> Solution:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise DumpError(f"{path}: not a solution dump (missing SOTAR1 header)")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC):end])
    body = memoryview(data)[end + 1:]
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"]))
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=spec["offset"])
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(dtype.newbyteorder("="))
    nd = header["network"]
    params = None
    if nd["links"] and isinstance(nd["links"][0], dict):
        net, params = network_from_dict(nd)
    else:
        net = Network(nd["nodes"], tuple(tuple(l) for l in nd["links"]), nd["destination"])
    grid = TimeGrid(header["grid"]["dt"], header["grid"]["horizon"])
    edges = tuple(tuple(e) for e in header["edges"])
    psi = RobustnessWeights(tuple(header["psi"])) if header["psi"] is not None else None
    return Solution(
        network=net,
        grid=grid,
        psi=psi,
        table=ReliabilityTable(edges, arrays["values"], arrays["source"]),
        policy=PolicyTable(edges, arrays["ranking"], arrays["source_ranking"]),
        iterations=header["iterations"],
        converged=header["converged"],
        residuals=list(header["residuals"]),
        params=params,
        form=header["form"],
    )
