"""Command-line entry point: ``sotar solve | curves | simulate | kernel``.

Exit codes: 0 success, 1 input error, 2 non-convergence.  ``SOTAR_OUT``
overrides ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .evaluation import FailureSpec, extract_curve, simulate_trips
from .grid import GridError, TimeGrid
from .network import NetworkError, build_paper_grid, load_network, max_out_degree, network_to_dict
from .reliability import DumpError, RobustnessWeights, WeightsError, load_solution, save_solution, solve_robust
from .stochastic import build_conditional_kernel, build_network_kernels, link_pair

log = logging.getLogger("sotar")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
DEFAULT_PSI = ((1.0,), (0.9,), (0.8,), (0.7,))


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    network: str = "canon-grid"
    dt: float = 0.5
    horizon: float = 80.0
    psi: List[List[float]] = field(default_factory=lambda: [list(p) for p in DEFAULT_PSI])
    epsilon: float = 1e-9
    max_iter: Optional[int] = None
    seed: int = 0
    out: str = "out"
    form: str = "kibble"

    def __post_init__(self):
        if not self.psi:
            raise InputError("at least one psi vector is required")
        try:
            self.grid()
        except GridError as exc:
            raise InputError(str(exc)) from None
        for p in self.psi:
            if len(p) > 1:
                try:
                    RobustnessWeights(tuple(p))
                except WeightsError as exc:
                    raise InputError(str(exc)) from None
            elif not 0 <= p[0] <= 1:
                raise InputError(f"scalar psi must lie in [0, 1], got {p[0]}")

    def grid(self) -> TimeGrid:
        return TimeGrid(self.dt, self.horizon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return cls(**doc)

    def load_network(self):
        if self.network == "canon-grid":
            return build_paper_grid()
        try:
            return load_network(self.network)
        except FileNotFoundError:
            raise InputError(f"network file {self.network} not found") from None

    def weights(self, lam: int) -> List[RobustnessWeights]:
        out = []
        for p in self.psi:
            try:
                if len(p) == 1:
                    out.append(RobustnessWeights.leading(p[0], lam))
                else:
                    out.append(RobustnessWeights(tuple(p)))
            except WeightsError as exc:
                raise InputError(str(exc)) from None
            if len(out[-1]) != lam:
                raise InputError(f"psi {p} has length {len(out[-1])}, network needs {lam}")
        return out


def psi_tag(w: RobustnessWeights) -> str:
    return "psi-" + "_".join(f"{v:g}" for v in w.values)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, name: str, config: RunConfig, outputs: Sequence[Path], extra: Optional[dict] = None):
    doc = {"config": config.to_dict(), "outputs": {p.name: _sha256(p) for p in sorted(outputs)}}
    if extra:
        doc.update(extra)
    path = out / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def cmd_solve(config: RunConfig) -> int:
    net, params = config.load_network()
    grid = config.grid()
    lam = max(1, max_out_degree(net))
    weights = config.weights(lam)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    kernels = build_network_kernels(net, params, grid, config.form)
    outputs = []
    status = EXIT_OK
    conv_path = out / "convergence.csv"
    with open(conv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["psi", "iteration", "residual", "converged"])
        for psi in weights:
            sol = solve_robust(net, kernels, grid, psi, config.epsilon, config.max_iter)
            sol.params, sol.form = params, config.form
            for it, r in enumerate(sol.residuals, 1):
                w.writerow([psi_tag(psi), it, repr(r), int(sol.converged and it == sol.iterations)])
            path = out / f"solution_{psi_tag(psi)}.sotar"
            save_solution(path, sol)
            outputs.append(path)
            log.info("%s: %d iterations, converged=%s", psi_tag(psi), sol.iterations, sol.converged)
            if not sol.converged:
                status = EXIT_NONCONVERGED
    outputs.append(conv_path)
    _write_manifest(out, "manifest_solve.json", config, outputs)
    return status


def _load_dump(out: Path, psi: RobustnessWeights):
    path = out / f"solution_{psi_tag(psi)}.sotar"
    if not path.exists():
        raise InputError(f"missing solution dump {path}; run 'sotar solve' first")
    try:
        return load_solution(path)
    except (DumpError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_curves(config: RunConfig, edge: Tuple[int, int], y: float) -> int:
    net, _ = config.load_network()
    if not net.has_link(edge):
        raise InputError(f"edge {edge} is not a link of the network")
    if not 0 <= y <= config.horizon:
        raise InputError(f"y = {y} outside [0, {config.horizon}]")
    out = Path(config.out)
    weights = config.weights(max(1, max_out_degree(net)))
    sols = [(psi, _load_dump(out, psi)) for psi in weights]
    outputs = []
    summary = out / f"curves_summary_{edge[0]}-{edge[1]}.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["psi", "switches", "threshold", "first_successor", "last_successor"])
        for psi, sol in sols:
            curve = extract_curve(sol, edge, y)
            path = out / f"curve_{psi_tag(psi)}_{edge[0]}-{edge[1]}.csv"
            curve.to_csv(path)
            outputs.append(path)
            sw = curve.switches()
            first = int(curve.successor[1]) if len(curve.successor) > 1 else 0
            w.writerow([psi_tag(psi), len(sw), f"{sw[0][0]:g}" if sw else "", first or "",
                        int(curve.successor[-1]) or ""])
    outputs.append(summary)
    _write_manifest(out, f"manifest_curves_{edge[0]}-{edge[1]}.json", config, outputs, {"edge": list(edge), "y": y})
    return EXIT_OK


def cmd_simulate(
    config: RunConfig,
    origin: int,
    budgets: Sequence[float],
    trips: int,
    upstream: Optional[int] = None,
    y: Optional[float] = None,
    failures: Optional[FailureSpec] = None,
) -> int:
    out = Path(config.out)
    net, _ = config.load_network()
    weights = config.weights(max(1, max_out_degree(net)))
    outputs = []
    kernel_cache = {}
    for psi in weights:
        sol = _load_dump(out, psi)
        if sol.params is None:
            raise InputError("solution dump carries no link parameters; cannot rebuild kernels")
        if not 1 <= origin <= sol.network.node_count:
            raise InputError(f"unknown origin node {origin}")
        if upstream is not None and not sol.network.has_link((upstream, origin)):
            raise InputError(f"start edge ({upstream},{origin}) is not a link")
        if failures is not None:
            try:
                failures.validate(sol.network)
            except ValueError as exc:
                raise InputError(str(exc)) from None
        key = (json.dumps(network_to_dict(sol.network, sol.params), sort_keys=True), sol.grid, sol.form)
        if key not in kernel_cache:
            kernel_cache[key] = build_network_kernels(sol.network, sol.params, sol.grid, sol.form)
        kernels = kernel_cache[key]
        start = f"{upstream}-{origin}" if upstream is not None else f"{origin}"
        path = out / f"stats_{psi_tag(psi)}_{start}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["budget", "empirical", "ci99", "table_u"])
            for b in budgets:
                if not 0 <= b <= sol.grid.horizon:
                    raise InputError(f"budget {b} outside [0, {sol.grid.horizon}]")
                stats = simulate_trips(sol.network, kernels, sol, origin, b, trips, config.seed, failures,
                                       upstream=upstream, y=y)
                if origin == sol.network.destination:
                    table = 1.0
                elif upstream is not None:
                    table = sol.value((upstream, origin), b, 0.0 if y is None else y)
                else:
                    table = float(sol.table.source[origin, sol.grid.budget_index(b)])
                w.writerow([f"{b:g}", repr(stats.probability), repr(stats.ci99), repr(table)])
        outputs.append(path)
    extra = {"origin": origin, "upstream": upstream, "y": y, "budgets": list(budgets), "trips": trips,
             "failures": [[list(l), t] for l, t in failures.events] if failures else [],
             "replan": failures.replan if failures else None}
    _write_manifest(out, f"manifest_simulate_{start}.json", config, outputs, extra)
    return EXIT_OK


def cmd_kernel(config: RunConfig, triple: Tuple[int, int, int]) -> int:
    """Dump the conditional kernel of link (i, j) given upstream link (k, i) as CSV."""
    net, params = config.load_network()
    k, i, j = triple
    if not (net.has_link((k, i)) and net.has_link((i, j))):
        raise InputError(f"({k},{i}) -> ({i},{j}) is not an adjacent link pair")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    kernel = build_conditional_kernel(link_pair(params, (k, i), (i, j), config.form), config.grid())
    path = out / f"kernel_{k}-{i}-{j}.csv"
    kernel.to_csv(path)
    _write_manifest(out, f"manifest_kernel_{k}-{i}-{j}.json", config, [path], {"pair": [k, i, j]})
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------------


def _pair(text: str) -> Tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'k,i', got {text!r}") from None
    return a, b


def _triple(text: str) -> Tuple[int, int, int]:
    try:
        a, b, c = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'k,i,j', got {text!r}") from None
    return a, b, c


def _vector(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _failure(text: str):
    try:
        link, time = text.split("@")
        return _pair(link), float(time)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'tail,head@time', got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", default="canon-grid", help="'canon-grid' or a network JSON file")
    common.add_argument("--dt", type=float, default=0.5)
    common.add_argument("--horizon", type=float, default=80.0)
    common.add_argument("--psi", type=_vector, action="append",
                        help="weight vector, e.g. 0.9,0.1; a single value v means (v, 1-v, 0, ...). Repeatable.")
    common.add_argument("--epsilon", type=float, default=1e-9)
    common.add_argument("--max-iter", type=int, default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    common.add_argument("--form", choices=("kibble", "printed"), default="kibble",
                        help="bivariate Gamma series variant")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sotar", description="On-time arrival reliability with robustness weights.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="solve for every psi and write solution dumps")
    c = sub.add_parser("curves", parents=[common], help="reliability/policy curves for one edge state")
    c.add_argument("--edge", type=_pair, required=True)
    c.add_argument("--y", type=float, required=True)
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo trips under a stored policy")
    s.add_argument("--origin", type=int, help="start node (no upstream link)")
    s.add_argument("--edge", type=_pair, help="start on edge k,i (origin = i)")
    s.add_argument("--y", type=float, default=None, help="realized time on the start edge")
    s.add_argument("--budget", type=float, action="append", required=True)
    s.add_argument("--trips", type=int, default=10000)
    s.add_argument("--fail", type=_failure, action="append", default=[])
    s.add_argument("--replan", choices=("subgraph", "nextbest"), default="nextbest")
    kp = sub.add_parser("kernel", parents=[common], help="dump one conditional kernel as CSV (rows = y cells)")
    kp.add_argument("--pair", type=_triple, required=True, help="k,i,j for link (i,j) given upstream (k,i)")
    return p


def config_from_args(args) -> RunConfig:
    out = os.environ.get("SOTAR_OUT") or args.out
    psi = args.psi if args.psi else [list(p) for p in DEFAULT_PSI]
    return RunConfig(args.network, args.dt, args.horizon, psi, args.epsilon, args.max_iter, args.seed, out, args.form)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = config_from_args(args)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "curves":
            return cmd_curves(config, args.edge, args.y)
        if args.command == "kernel":
            return cmd_kernel(config, args.pair)
        if args.edge is not None:
            upstream, origin = args.edge
        elif args.origin is not None:
            upstream, origin = None, args.origin
        else:
            raise InputError("simulate needs --origin or --edge")
        failures = FailureSpec(tuple(args.fail), args.replan) if args.fail else None
        if args.trips < 1:
            raise InputError("--trips must be >= 1")
        return cmd_simulate(config, origin, args.budget, args.trips, upstream, args.y, failures)
    except (InputError, NetworkError, GridError, WeightsError) as exc:
        print(f"sotar: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
