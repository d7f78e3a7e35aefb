"""Directed road networks, the canonical 5x5 test grid, and JSON loading."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import jsonschema

Link = Tuple[int, int]
LinkPair = Tuple[Link, Link]


class NetworkError(ValueError):
    """Raised when a network or its parameters violate an invariant."""


@dataclass(frozen=True)
class Network:
    node_count: int
    links: Tuple[Link, ...]
    destination: int
    successor_sets: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    predecessor_sets: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.node_count
        if not isinstance(n, int) or n < 1:
            raise NetworkError(f"node count must be a positive integer, got {n!r}")
        if not 1 <= self.destination <= n:
            raise NetworkError(f"destination {self.destination} is not a node id in 1..{n}")
        links = tuple((int(t), int(h)) for t, h in self.links)
        seen = set()
        for t, h in links:
            if not (1 <= t <= n and 1 <= h <= n):
                raise NetworkError(f"link ({t},{h}) has an endpoint outside 1..{n}")
            if t == h:
                raise NetworkError(f"self-loop at node {t}")
            if (t, h) in seen:
                raise NetworkError(f"duplicate link ({t},{h})")
            seen.add((t, h))
        succ: List[List[int]] = [[] for _ in range(n + 1)]
        pred: List[List[int]] = [[] for _ in range(n + 1)]
        for t, h in links:
            succ[t].append(h)
            pred[h].append(t)
        if not pred[self.destination]:
            raise NetworkError(f"destination {self.destination} has no predecessor")
        # index 0 is unused so that node ids index directly
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "successor_sets", tuple(tuple(sorted(s)) for s in succ))
        object.__setattr__(self, "predecessor_sets", tuple(tuple(sorted(p)) for p in pred))

    @property
    def nodes(self) -> range:
        return range(1, self.node_count + 1)

    def successors(self, i: int) -> Tuple[int, ...]:
        return self.successor_sets[i]

    def predecessors(self, i: int) -> Tuple[int, ...]:
        return self.predecessor_sets[i]

    def has_link(self, link: Link) -> bool:
        return tuple(link) in set(self.links)

    def adjacent_pairs(self) -> List[LinkPair]:
        """All (upstream, downstream) link pairs sharing a middle node."""
        return [((k, i), (i, j)) for k, i in self.links for j in self.successor_sets[i]]

    def without_links(self, removed: Iterable[Link]) -> "Network":
        removed = {tuple(l) for l in removed}
        return Network(self.node_count, tuple(l for l in self.links if l not in removed), self.destination)

    def longest_path_length(self) -> Optional[int]:
        """Number of links on the longest path, or None if the network has a cycle."""
        indeg = [0] * (self.node_count + 1)
        for _, h in self.links:
            indeg[h] += 1
        order = [i for i in self.nodes if indeg[i] == 0]
        depth = [0] * (self.node_count + 1)
        k = 0
        while k < len(order):
            i = order[k]
            k += 1
            for j in self.successor_sets[i]:
                depth[j] = max(depth[j], depth[i] + 1)
                indeg[j] -= 1
                if indeg[j] == 0:
                    order.append(j)
        if len(order) != self.node_count:
            return None
        return max(depth)


@dataclass(frozen=True)
class LinkParams:
    """Moments of link travel times and covariances of adjacent link pairs."""

    mean: Dict[Link, float]
    variance: Dict[Link, float]
    default_covariance: float = 0.0
    covariance_overrides: Dict[LinkPair, float] = field(default_factory=dict)

    def covariance(self, upstream: Link, downstream: Link) -> float:
        return self.covariance_overrides.get((tuple(upstream), tuple(downstream)), self.default_covariance)

    def correlation(self, upstream: Link, downstream: Link) -> float:
        cov = self.covariance(upstream, downstream)
        return cov / math.sqrt(self.variance[tuple(upstream)] * self.variance[tuple(downstream)])

    def validate(self, net: Network) -> None:
        for link in net.links:
            if link not in self.mean or link not in self.variance:
                raise NetworkError(f"link {link} has no mean/variance")
            if not self.mean[link] > 0:
                raise NetworkError(f"link {link}: mean must be > 0")
            if not self.variance[link] > 0:
                raise NetworkError(f"link {link}: variance must be > 0")
        extra = (set(self.mean) | set(self.variance)) - set(net.links)
        if extra:
            raise NetworkError(f"parameters given for unknown links {sorted(extra)}")
        adjacent = set(net.adjacent_pairs())
        for pair in self.covariance_overrides:
            if pair not in adjacent:
                raise NetworkError(f"covariance override {pair} is not an adjacent link pair")
        for up, down in adjacent:
            if self.covariance(up, down) < 0:
                raise NetworkError(f"negative covariance for pair {up}->{down}")
            rho = self.correlation(up, down)
            if not 0 <= rho < 1:
                raise NetworkError(f"correlation {rho:.4g} for pair {up}->{down} outside [0, 1)")


def grid_node(row: int, col: int, width: int = 5) -> int:
    return row * width + col + 1


def build_paper_grid(compensate: bool = False) -> Tuple[Network, LinkParams]:
    """The 5x5 east/south grid used to reproduce the robust-routing experiment.

    Nodes are numbered row-major from 1 (top-left) to 25 (destination,
    bottom-right).  The south link 4->9 is dropped so node 4 keeps a single
    successor while node 3 branches to {4, 8}.  This is an approximation of
    the original figure, which is not available.  With ``compensate`` the
    link 21->17 is added so the network has 40 links again without touching
    the neighbourhood of node 3.

    All links: mean 9, variance 3; link 3->4: mean 5.  Every adjacent pair
    has covariance 1.5.
    """
    links = []
    for r in range(5):
        for c in range(5):
            if c < 4:
                links.append((grid_node(r, c), grid_node(r, c + 1)))
            if r < 4:
                links.append((grid_node(r, c), grid_node(r + 1, c)))
    links.remove((4, 9))
    if compensate:
        links.append((21, 17))
    net = Network(25, tuple(links), 25)
    mean = {l: 9.0 for l in net.links}
    mean[(3, 4)] = 5.0
    variance = {l: 3.0 for l in net.links}
    params = LinkParams(mean, variance, default_covariance=1.5)
    params.validate(net)
    return net, params


def max_out_degree(net: Network) -> int:
    """Largest successor-set size over non-destination nodes."""
    return max((len(net.successors(i)) for i in net.nodes if i != net.destination), default=0)


_PAIR = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
NETWORK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["nodes", "destination", "links"],
    "properties": {
        "nodes": {"type": "integer", "minimum": 1},
        "destination": {"type": "integer", "minimum": 1},
        "links": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["tail", "head", "mean", "variance"],
                "properties": {
                    "tail": {"type": "integer"},
                    "head": {"type": "integer"},
                    "mean": {"type": "number"},
                    "variance": {"type": "number"},
                },
            },
        },
        "pair_covariance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "default": {"type": "number"},
                "overrides": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["upstream", "downstream", "cov"],
                        "properties": {"upstream": _PAIR, "downstream": _PAIR, "cov": {"type": "number"}},
                    },
                },
            },
        },
    },
}


def network_from_dict(doc: dict) -> Tuple[Network, LinkParams]:
    try:
        jsonschema.validate(doc, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise NetworkError(f"schema error at {where}: {exc.message}") from None
    links = [(e["tail"], e["head"]) for e in doc["links"]]
    net = Network(doc["nodes"], tuple(links), doc["destination"])
    mean = {(e["tail"], e["head"]): float(e["mean"]) for e in doc["links"]}
    variance = {(e["tail"], e["head"]): float(e["variance"]) for e in doc["links"]}
    cov = doc.get("pair_covariance", {})
    overrides = {}
    for o in cov.get("overrides", []):
        key = (tuple(o["upstream"]), tuple(o["downstream"]))
        if key in overrides:
            raise NetworkError(f"duplicate covariance override {key}")
        overrides[key] = float(o["cov"])
    params = LinkParams(mean, variance, float(cov.get("default", 0.0)), overrides)
    params.validate(net)
    return net, params


def network_to_dict(net: Network, params: LinkParams) -> dict:
    return {
        "nodes": net.node_count,
        "destination": net.destination,
        "links": [
            {"tail": t, "head": h, "mean": params.mean[(t, h)], "variance": params.variance[(t, h)]}
            for t, h in net.links
        ],
        "pair_covariance": {
            "default": params.default_covariance,
            "overrides": [
                {"upstream": list(u), "downstream": list(d), "cov": c}
                for (u, d), c in sorted(params.covariance_overrides.items())
            ],
        },
    }


def load_network(path) -> Tuple[Network, LinkParams]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return network_from_dict(doc)


def save_network(path, net: Network, params: LinkParams) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net, params), indent=2) + "\n")
