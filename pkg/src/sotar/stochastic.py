"""Gamma link travel times, the Smith bivariate Gamma density and discretized
conditional kernels.

Two evaluations of the bivariate series are available through
``BivariatePair.form``:

``"kibble"`` (default)
    ``f(w, y) = g1/g2 * sum c_{k1 k2} (bw w)^k1 (by y)^(k1+k2)``.  This is the
    density of ``(X, Z1 + Z2)`` where ``(X, Z1)`` is a Kibble bivariate Gamma
    with shape ``aX`` and ``Z2 ~ Gamma(aZ - aX)`` is independent; it has the
    requested Gamma marginals and correlation ``eta * sqrt(aX / aZ)``.
``"printed"``
    The same series with ``(eta * by * y)`` raised to ``k1 + k2``.  The extra
    factor ``eta^(k1+k2)`` breaks normalization (total mass ~1e-5 for the
    (27, 3) x (27, 3), rho = 0.5 pair); kept only so the gate can show it.

The inner sum over ``k1`` is carried out in closed form with the modified
Bessel function, ``sum_k p^k / (k! Gamma(nu + 1 + k)) = p^(-nu/2) I_nu(2 sqrt p)``,
leaving a single series in ``k2`` that is truncated adaptively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import special

from .grid import TimeGrid
from .network import Link, LinkParams, Network

DENSITY_FLOOR = 1e-30
SERIES_RTOL = 1e-10
SERIES_MAX_TERMS = 8192
_CHUNK = 64


class SeriesError(ArithmeticError):
    """The bivariate series did not converge within the term cap."""


class ConditioningError(ValueError):
    """The conditioning value lies where the upstream density underflows."""


@dataclass(frozen=True)
class GammaMarginal:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"Gamma parameters must be positive, got shape={self.shape}, rate={self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (
                (self.shape - 1) * np.log(self.rate * x)
                - self.rate * x
                + math.log(self.rate)
                - special.gammaln(self.shape)
            )
        if self.shape == 1:
            out = np.where(x >= 0, math.log(self.rate) - self.rate * x, -np.inf)
        return np.where(x < 0, -np.inf, out)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        return special.gammainc(self.shape, self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))

    def sf(self, x):
        return special.gammaincc(self.shape, self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))


def gamma_from_moments(mean: float, variance: float) -> GammaMarginal:
    if not (mean > 0 and variance > 0):
        raise ValueError(f"mean and variance must be positive, got {mean}, {variance}")
    return GammaMarginal(mean * mean / variance, mean / variance)


def gamma_cdf(m: GammaMarginal, x: float) -> float:
    """Regularized lower incomplete gamma ``P(shape, rate * x)``."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return float(special.gammainc(m.shape, m.rate * x))


@dataclass(frozen=True)
class BivariatePair:
    """Joint law of an upstream link time Y and the next link's time W."""

    upstream: GammaMarginal
    downstream: GammaMarginal
    rho: float
    form: str = "kibble"

    def __post_init__(self):
        if self.form not in ("kibble", "printed"):
            raise ValueError(f"unknown density form {self.form!r}")
        if not 0 <= self.rho < 1:
            raise ValueError(f"correlation must lie in [0, 1), got {self.rho}")
        if self.rho > 0 and not 0 < self.eta < 1:
            raise ValueError(
                f"eta = {self.eta:.4g} outside (0, 1) for shapes "
                f"{self.upstream.shape:.4g}/{self.downstream.shape:.4g} and rho = {self.rho}"
            )

    @property
    def swapped(self) -> bool:
        """True when the downstream shape is the larger one, so the series
        treats W as the large-shape variable."""
        return self.downstream.shape > self.upstream.shape

    @property
    def eta(self) -> float:
        big = max(self.upstream.shape, self.downstream.shape)
        small = min(self.upstream.shape, self.downstream.shape)
        return self.rho * math.sqrt(big / small)


def _log_bessel_series(x, zs, a, az, eta, rtol=SERIES_RTOL, max_terms=SERIES_MAX_TERMS):
    """log of sum_{k1,k2} c_{k1k2} x^k1 zs^(k1+k2) / Gamma(b) for 1-D arrays."""
    b = az - a
    out = np.full(x.shape, -np.inf)
    with np.errstate(divide="ignore"):
        lp = np.log(eta / (1 - eta) ** 2) + np.log(x) + np.log(zs)
        lq = np.log(eta / (1 - eta)) + np.log(zs)
    s = 2.0 * np.exp(0.5 * lp)
    zero = ~np.isfinite(lp)  # x == 0 or zs == 0: only the k1 = 0 term survives
    z_zero = zs == 0  # then only k2 = 0 survives as well
    active = np.arange(x.size)
    k0 = 0
    while active.size:
        if k0 >= max_terms:
            raise SeriesError(f"bivariate Gamma series did not converge within {max_terms} terms")
        k2 = np.arange(k0, k0 + _CHUNK, dtype=float)[None, :]
        nu = az + k2 - 1
        if b > 0:
            coef = special.gammaln(b + k2) - special.gammaln(b) - special.gammaln(k2 + 1)
        else:
            coef = np.where(k2 == 0, 0.0, -np.inf)
        sv, lpv, lqv, zv = s[active, None], lp[active, None], lq[active, None], zero[active, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.log(special.ive(nu, sv)) + sv - 0.5 * nu * lpv
            inner = np.where(zv, -special.gammaln(nu + 1), inner)
            terms = coef + np.where(k2 == 0, 0.0, k2 * lqv) + inner
        terms = np.where(np.isnan(terms), -np.inf, terms)
        chunk_sum = special.logsumexp(terms, axis=1)
        prev = out[active]
        total = np.logaddexp(prev, chunk_sum)
        out[active] = total
        with np.errstate(invalid="ignore"):
            decreasing = (terms[:, -1] <= terms[:, -2]) | ~np.isfinite(terms[:, -1])
            small = (chunk_sum - total <= math.log(rtol)) | ~np.isfinite(chunk_sum)
        done = (decreasing & small) | (b <= 0) | z_zero[active]
        active = active[~done]
        k0 += _CHUNK
    return out


def log_joint_pdf(pair: BivariatePair, w, y):
    """Log of the joint density of (W, Y) at downstream time ``w``, upstream time ``y``."""
    w, y = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(y, dtype=float))
    shape = w.shape
    w, y = w.ravel(), y.ravel()
    if np.any(w < 0) or np.any(y < 0):
        raise ValueError("travel times must be >= 0")
    if pair.rho == 0:
        return (pair.downstream.logpdf(w) + pair.upstream.logpdf(y)).reshape(shape)
    if pair.swapped:
        mx, mz, xv, zv = pair.upstream, pair.downstream, y, w
    else:
        mx, mz, xv, zv = pair.downstream, pair.upstream, w, y
    a, az, eta = mx.shape, mz.shape, pair.eta
    x, z = mx.rate * xv, mz.rate * zv
    zs = eta * z if pair.form == "printed" else z
    with np.errstate(divide="ignore", invalid="ignore"):
        log_g = (
            special.xlogy(a - 1, x)
            + special.xlogy(az - 1, z)
            - (x + z) / (1 - eta)
            - a * math.log(1 - eta)
            - special.gammaln(a)
        )
        log_g = np.where((x == 0) & (a > 1) | (z == 0) & (az > 1), -np.inf, log_g)
    out = log_g + _log_bessel_series(x, zs, a, az, eta) + math.log(mx.rate * mz.rate)
    return out.reshape(shape)


def joint_pdf(pair: BivariatePair, w, y):
    out = np.exp(log_joint_pdf(pair, w, y))
    return float(out) if out.ndim == 0 else out


def conditional_pdf(pair: BivariatePair, w, y):
    """Density of the downstream time at ``w`` given upstream time ``y``."""
    y_arr = np.asarray(y, dtype=float)
    fy = pair.upstream.logpdf(y_arr)
    if np.any(fy < math.log(DENSITY_FLOOR)):
        raise ConditioningError(
            f"upstream density below {DENSITY_FLOOR:g} at y={y}; use the kernel-level marginal fallback"
        )
    if pair.rho == 0:
        out = pair.downstream.pdf(np.broadcast_to(np.asarray(w, dtype=float), np.broadcast(w, y_arr).shape))
    else:
        out = np.exp(log_joint_pdf(pair, w, y_arr) - fy)
    return float(out) if np.ndim(out) == 0 else out


def joint_mass(pair: BivariatePair, upper_w: float, upper_y: float, n: int = 200) -> float:
    """Midpoint-rule mass of the joint density over ``[0, upper_w] x [0, upper_y]``."""
    hw, hy = upper_w / n, upper_y / n
    w = (np.arange(n) + 0.5) * hw
    y = (np.arange(n) + 0.5) * hy
    W, Y = np.meshgrid(w, y, indexing="ij")
    return float(joint_pdf(pair, W, Y).sum() * hw * hy)


def normalization_gate(pair: BivariatePair, n_sd: float = 10.0, n: int = 200) -> Tuple[bool, float]:
    """Check the joint density integrates to 1 over ``mean + n_sd * sd`` per axis."""
    uw = pair.downstream.mean + n_sd * math.sqrt(pair.downstream.variance)
    uy = pair.upstream.mean + n_sd * math.sqrt(pair.upstream.variance)
    mass = joint_mass(pair, uw, uy, n)
    return 0.99 <= mass <= 1.01, mass


def _normalize_row(raw: np.ndarray, tail: Optional[float] = None) -> np.ndarray:
    """Append the beyond-horizon cell and scale the row to sum to 1."""
    s = raw.sum()
    if tail is None:
        tail = max(0.0, 1.0 - s)
    row = np.concatenate(([0.0], raw, [tail]))
    return row / row.sum()


def discretized_marginal(m: GammaMarginal, grid: TimeGrid) -> np.ndarray:
    """Cell masses of a Gamma travel time: midpoint density times dt, plus the
    beyond-horizon tail, normalized.  Index 0 (zero travel time) is empty."""
    raw = m.pdf(grid.midpoints) * grid.dt
    return _normalize_row(raw, float(m.sf(grid.horizon)))


@dataclass(frozen=True)
class ConditionalKernel:
    """Discretized law of the next link's time given the previous link's cell.

    ``matrix[m, l]`` is the probability that the downstream time falls in
    cell ``l`` when the upstream time fell in cell ``m``.  Columns run over
    cells ``0 .. n_cells`` plus a final column for times beyond the horizon;
    column 0 is always empty.
    """

    grid: TimeGrid
    matrix: np.ndarray
    fallback_rows: Tuple[int, ...] = ()

    def __post_init__(self):
        n = self.grid.size
        if self.matrix.shape != (n, n + 1):
            raise ValueError(f"kernel matrix must be {(n, n + 1)}, got {self.matrix.shape}")
        self.matrix.setflags(write=False)

    @classmethod
    def from_row(cls, grid: TimeGrid, row: np.ndarray) -> "ConditionalKernel":
        return cls(grid, np.tile(np.asarray(row, dtype=float), (grid.size, 1)))

    @classmethod
    def from_pmf(cls, grid: TimeGrid, values, probs) -> "ConditionalKernel":
        """Independent discrete travel time taking ``values[k]`` w.p. ``probs[k]``."""
        return cls.from_row(grid, pmf_row(grid, values, probs))

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.matrix, axis=1)

    def to_csv(self, path) -> None:
        header = "y," + ",".join(f"w{l}" for l in range(self.grid.size)) + ",beyond"
        ys = np.concatenate(([0.0], self.grid.midpoints))
        np.savetxt(path, np.column_stack([ys, self.matrix]), delimiter=",", header=header, comments="", fmt="%.17g")


def pmf_row(grid: TimeGrid, values, probs) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape or np.any(values <= 0) or np.any(probs < 0):
        raise ValueError("pmf needs matching positive values and nonnegative probabilities")
    if abs(probs.sum() - 1) > 1e-12:
        raise ValueError("pmf probabilities must sum to 1")
    row = np.zeros(grid.size + 1)
    cells = np.ceil(values / grid.dt - 1e-9).astype(int)
    np.add.at(row, np.minimum(cells, grid.size), probs)
    return row


def build_conditional_kernel(pair: BivariatePair, grid: TimeGrid, floor: float = DENSITY_FLOOR) -> ConditionalKernel:
    fallback = discretized_marginal(pair.downstream, grid)
    mids = grid.midpoints
    matrix = np.tile(fallback, (grid.size, 1))
    if pair.rho == 0:
        return ConditionalKernel(grid, matrix, tuple(range(grid.size)))
    log_fy = pair.upstream.logpdf(mids)
    ok = np.nonzero(log_fy >= math.log(floor))[0]
    fallback_rows = {0} | {int(m) + 1 for m in np.nonzero(log_fy < math.log(floor))[0]}
    if ok.size:
        W, Y = np.meshgrid(mids, mids[ok], indexing="xy")
        logc = log_joint_pdf(pair, W, Y) - log_fy[ok][:, None]
        raw = np.exp(logc) * grid.dt
        if not np.all(np.isfinite(raw)):
            raise SeriesError("non-finite conditional density in kernel construction")
        for r, m in enumerate(ok):
            if raw[r].sum() < floor:
                fallback_rows.add(int(m) + 1)
                continue
            matrix[m + 1] = _normalize_row(raw[r])
    return ConditionalKernel(grid, matrix, tuple(sorted(fallback_rows)))


def link_marginal(params: LinkParams, link: Link) -> GammaMarginal:
    return gamma_from_moments(params.mean[link], params.variance[link])


def link_pair(params: LinkParams, upstream: Link, downstream: Link, form: str = "kibble") -> BivariatePair:
    return BivariatePair(
        link_marginal(params, upstream),
        link_marginal(params, downstream),
        params.correlation(upstream, downstream),
        form,
    )


@dataclass
class KernelSet:
    """Kernels for every adjacent link pair plus first-link marginals.

    ``pair[(k, i, j)]`` conditions link (i, j) on link (k, i); ``source[(i, j)]``
    is the unconditional cell-mass row used when a trip starts at ``i``.
    """

    grid: TimeGrid
    pair: Dict[Tuple[int, int, int], ConditionalKernel] = field(default_factory=dict)
    source: Dict[Link, np.ndarray] = field(default_factory=dict)

    @classmethod
    def independent(cls, net: Network, grid: TimeGrid, rows: Dict[Link, np.ndarray]) -> "KernelSet":
        """Kernels for mutually independent links given one cell-mass row per link."""
        ks = cls(grid)
        shared = {l: ConditionalKernel.from_row(grid, r) for l, r in rows.items()}
        for (k, i), (_, j) in net.adjacent_pairs():
            ks.pair[(k, i, j)] = shared[(i, j)]
        for l in net.links:
            ks.source[l] = shared[l].matrix[0]
        return ks


def build_network_kernels(net: Network, params: LinkParams, grid: TimeGrid, form: str = "kibble") -> KernelSet:
    """Discretize every adjacent-pair conditional law; identical parameter
    combinations share one kernel."""
    ks = KernelSet(grid)
    cache: Dict[tuple, ConditionalKernel] = {}
    for (k, i), (_, j) in net.adjacent_pairs():
        pair = link_pair(params, (k, i), (i, j), form)
        key = (pair.upstream, pair.downstream, pair.rho, form)
        if key not in cache:
            cache[key] = build_conditional_kernel(pair, grid)
        ks.pair[(k, i, j)] = cache[key]
    rows: Dict[GammaMarginal, np.ndarray] = {}
    for link in net.links:
        m = link_marginal(params, link)
        if m not in rows:
            rows[m] = discretized_marginal(m, grid)
        ks.source[link] = rows[m]
    return ks


def sample_correlated(pair: BivariatePair, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` (y, w) pairs with the pair's Gamma marginals and correlation.

    Shared-component construction: with ``c = rho * sqrt(aY * aW)``,
    ``Y = (U + S) / bY`` and ``W = (V + S) / bW`` where ``S ~ Gamma(c)``,
    ``U ~ Gamma(aY - c)``, ``V ~ Gamma(aW - c)``.  Marginals and correlation
    match exactly; the joint law is not the Smith density in general.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    ay, aw = pair.upstream.shape, pair.downstream.shape
    c = pair.rho * math.sqrt(ay * aw)
    if c > min(ay, aw):
        raise ValueError(f"correlation {pair.rho} not reachable by the shared-component construction")
    shared = rng.gamma(c, size=n) if c > 0 else np.zeros(n)
    u = rng.gamma(ay - c, size=n) if ay > c else np.zeros(n)
    v = rng.gamma(aw - c, size=n) if aw > c else np.zeros(n)
    return np.column_stack([(u + shared) / pair.upstream.rate, (v + shared) / pair.downstream.rate])

