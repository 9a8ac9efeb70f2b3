"""Stochastic quantization over evenly spaced bin grids.

A scalar v is mapped to a random bin.  On a two-bin grid the draw follows the
classic unbiased linear-interpolation scheme; on larger grids the mass is
aggregated over all bracketing bin pairs, with each pair damped by
relu(1 - d/alpha) distance weights on both endpoints so that bins more than
alpha spacings away receive exactly zero probability.  A value sitting
exactly on a bin gets a point mass there.

Sampling comes in two flavors: exact categorical draws, and a
Gumbel-softmax relaxation that is differentiable with the noise held fixed.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class DegenerateGridError(ValueError):
    """Grid range is empty (max <= min)."""


class OutOfRangeError(ValueError):
    """Value lies outside the grid range."""


class ZeroMassError(ArithmeticError):
    """All pair weights vanished (possible only for alpha <= 1)."""


_SPACING_RTOL = 1e-9


@dataclass(frozen=True)
class BinGrid:
    """Ordered, evenly spaced quantization bins."""

    bins: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.bins, dtype=np.float64)
        object.__setattr__(self, "bins", b)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("grid needs at least 2 bins")
        d = np.diff(b)
        if not (d > 0).all():
            raise ValueError("bins must be strictly increasing")
        spacing = d[0]
        if np.abs(d - spacing).max() > _SPACING_RTOL * abs(spacing):
            raise ValueError("bins must be evenly spaced")

    @property
    def n_bins(self) -> int:
        return self.bins.size

    @property
    def spacing(self) -> float:
        return float(self.bins[1] - self.bins[0])

    @property
    def lo(self) -> float:
        return float(self.bins[0])

    @property
    def hi(self) -> float:
        return float(self.bins[-1])


@dataclass(frozen=True)
class QuantDistribution:
    """PMF over the bins of a grid for one scalar value."""

    grid: BinGrid
    probs: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.shape != (self.grid.n_bins,):
            raise ValueError("probs shape does not match grid")
        if (p < 0).any():
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities do not sum to 1")


@dataclass(frozen=True)
class SqParams:
    """Quantizer hyperparameters: sparsity radius, bin count, relaxation temperature."""

    alpha: float = 2.0
    n_bins: int = 16
    tau: float = 0.5

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.alpha <= 1:
            warnings.warn(
                "alpha <= 1 can zero out every cross-bin pair; the supported "
                "regime is alpha > 1",
                stacklevel=2,
            )


@dataclass(frozen=True)
class FixedRange:
    """Quantize against a fixed [lo, hi] range."""

    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class PerVectorMinMax:
    """Quantize against the min/max of each vector."""


@dataclass(frozen=True)
class QuantizedVector:
    """Shared grid + per-element PMFs for one vector."""

    grid: BinGrid
    probs: np.ndarray          # (len(values), n_bins)
    degenerate: bool = False   # range was padded because the vector is constant

    @property
    def pmfs(self):
        return [QuantDistribution(self.grid, row) for row in self.probs]


def make_bin_grid(lo: float, hi: float, n_bins: int) -> BinGrid:
    """Evenly spaced grid with b_0 = lo and b_{n-1} = hi."""
    if hi <= lo:
        raise DegenerateGridError(f"empty range [{lo}, {hi}]")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    return BinGrid(np.linspace(lo, hi, n_bins))


def binary_sq_pmf(v: float, grid: BinGrid) -> QuantDistribution:
    """Two-bin unbiased stochastic quantization."""
    if grid.n_bins != 2:
        raise ValueError("binary scheme needs a two-bin grid")
    b0, b1 = grid.bins
    if not (b0 <= v <= b1):
        raise OutOfRangeError(f"{v} outside [{b0}, {b1}]")
    p1 = (v - b0) / (b1 - b0)
    return QuantDistribution(grid, np.array([1.0 - p1, p1]))


def naive_multibin_pmf(v: float, grid: BinGrid) -> QuantDistribution:
    """Unbiased multi-bin extension without sparsity damping.

    Aggregates the two-bin scheme over every pair (i, j) with b_i <= v <= b_j
    and renormalizes.  Kept as a reference point: it is unbiased but assigns
    mass to all bins and jumps at bin boundaries.
    """
    b = grid.bins
    if not (b[0] <= v <= b[-1]):
        raise OutOfRangeError(f"{v} outside grid range")
    n = grid.n_bins
    u = np.zeros(n)
    for i in range(n):
        if b[i] > v:
            continue
        for j in range(i + 1, n):
            if b[j] < v:
                continue
            share = (b[j] - v) / (b[j] - b[i])
            u[i] += share
            u[j] += 1.0 - share
    return QuantDistribution(grid, u / u.sum())


def sq_pmf(v: float, grid: BinGrid, alpha: float) -> QuantDistribution:
    """Sparsity-weighted stochastic quantization PMF (the main scheme)."""
    if not (grid.lo <= v <= grid.hi):
        raise OutOfRangeError(f"{v} outside grid range")
    p = _kernels.sq_pmf_flat(
        np.array([v]), np.array([grid.lo]), np.array([grid.hi]),
        grid.n_bins, alpha)[0]
    if p.sum() <= 0.0:
        raise ZeroMassError(
            f"no bin pair has positive weight at v={v} (alpha={alpha})")
    return QuantDistribution(grid, p)


def pmf_mean(dist: QuantDistribution) -> float:
    """Expected quantized value."""
    return float(dist.probs @ dist.grid.bins)


def sample(dist: QuantDistribution, rng: np.random.Generator) -> float:
    """Exact categorical draw of a bin value."""
    idx = _kernels.categorical_rows(dist.probs[None, :], rng.random(1))[0]
    return float(dist.grid.bins[idx])


def gumbel_softmax_weights(probs, tau, gumbel):
    """Relaxation weights for rows of PMFs with fixed Gumbel noise.

    Zero-probability bins are excluded from the softmax.  Vectorized over any
    leading shape; probs and gumbel must have identical shapes.
    """
    mask = probs > 0.0
    with np.errstate(divide="ignore"):
        logits = np.where(mask, np.log(np.where(mask, probs, 1.0)) + gumbel, -np.inf)
    logits = logits / tau
    mx = logits.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(logits - mx), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def relaxed_sample(dist: QuantDistribution, tau: float,
                   rng: np.random.Generator):
    """Gumbel-softmax draw: convex combination of bins plus its weights."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not (dist.probs > 0).any():
        raise ValueError("distribution has no positive entry")
    g = sample_gumbel(dist.probs.shape, rng)
    w = gumbel_softmax_weights(dist.probs, tau, g)
    return float(w @ dist.grid.bins), w


def sample_gumbel(shape, rng: np.random.Generator):
    """Standard Gumbel noise -log(-log U)."""
    u = rng.random(shape)
    tiny = np.finfo(np.float64).tiny
    return -np.log(-np.log(np.maximum(u, tiny)))


def padded_range(lo: float, hi: float):
    """Widen a degenerate [lo, hi] range; returns (lo, hi, was_degenerate)."""
    if hi > lo:
        return lo, hi, False
    pad = max(1e-6, 1e-6 * abs(hi))
    return lo - pad, hi + pad, True


def quantize_vector(values, params: SqParams, range_policy) -> QuantizedVector:
    """One shared grid for a vector, one PMF per element."""
    x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty vector")
    if isinstance(range_policy, FixedRange):
        lo, hi, degenerate = range_policy.lo, range_policy.hi, False
        if hi <= lo:
            raise DegenerateGridError(f"empty range [{lo}, {hi}]")
    elif isinstance(range_policy, PerVectorMinMax):
        lo, hi, degenerate = padded_range(float(x.min()), float(x.max()))
    else:
        raise TypeError(f"unknown range policy {range_policy!r}")
    if (x < lo).any() or (x > hi).any():
        raise OutOfRangeError("vector values outside fixed range")
    grid = make_bin_grid(lo, hi, params.n_bins)
    probs = _kernels.sq_pmf_flat(
        x, np.full(x.size, lo), np.full(x.size, hi), params.n_bins,
        params.alpha)
    if (probs.sum(axis=1) <= 0).any():
        raise ZeroMassError("some element received no quantization mass")
    return QuantizedVector(grid, probs, degenerate)
