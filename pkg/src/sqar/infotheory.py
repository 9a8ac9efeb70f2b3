"""Exact discrete information measures over quantization PMFs.

Everything here is closed-form over known PMFs: entropy, conditional
entropy, marginals, and mutual information in nats.  The conditioning
variable is a finite set of quantized-input states with known weights, so no
density estimation is involved.  ``toy_two_feature_fixture`` builds the small
two-pixel / two-feature network used as a golden test case throughout.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .quant import BinGrid, QuantDistribution, make_bin_grid


@dataclass(frozen=True)
class ConditionalPmfTable:
    """Weighted conditioning states, each with a PMF over a shared grid."""

    grid: BinGrid
    weights: np.ndarray      # (k,) probability of each conditioning state
    cond_probs: np.ndarray   # (k, n_bins)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        c = np.ascontiguousarray(self.cond_probs, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cond_probs", c)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("empty table")
        if abs(w.sum() - 1.0) > 1e-9 or (w < 0).any():
            raise ValueError("weights must form a distribution")
        if c.shape != (w.size, self.grid.n_bins):
            raise ValueError("conditional PMF shape mismatch")


@dataclass(frozen=True)
class MIEstimate:
    """Per-feature and averaged mutual information, in nats."""

    per_feature_mi: np.ndarray
    mean_mi: float
    h_marginal: np.ndarray
    h_conditional: np.ndarray
    n_samples: int

    def __post_init__(self):
        mi = np.asarray(self.per_feature_mi, dtype=np.float64)
        hm = np.asarray(self.h_marginal, dtype=np.float64)
        if (mi < -1e-9).any() or (mi > hm + 1e-9).any():
            raise ValueError("MI outside [0, H(T)]")
        if abs(self.mean_mi - mi.mean()) > 1e-9:
            raise ValueError("mean_mi inconsistent with per-feature values")


def entropy(pmf) -> float:
    """Shannon entropy in nats; accepts a QuantDistribution or a raw PMF."""
    p = pmf.probs if isinstance(pmf, QuantDistribution) else np.asarray(pmf, dtype=np.float64)
    return float(_kernels.entropy_rows(p[None, :])[0])


def marginal(table: ConditionalPmfTable) -> QuantDistribution:
    """Mixture of the conditionals under the state weights."""
    p = table.weights @ table.cond_probs
    return QuantDistribution(table.grid, p / p.sum())


def conditional_entropy(table: ConditionalPmfTable) -> float:
    """Weighted average entropy of the conditionals, in nats."""
    h = _kernels.entropy_rows(table.cond_probs)
    return float(table.weights @ h)


def mutual_information(table: ConditionalPmfTable) -> float:
    """H(marginal) - H(conditional), clamped at zero against roundoff."""
    mi = entropy(marginal(table)) - conditional_entropy(table)
    if mi < 0:
        if mi < -1e-12:
            raise ValueError(f"negative MI {mi} beyond roundoff")
        mi = 0.0
    return mi


def feature_mi(tables) -> MIEstimate:
    """Per-feature MI for a list of tables, averaged across features."""
    tables = list(tables)
    if not tables:
        raise ValueError("need at least one feature")
    mi = np.array([mutual_information(t) for t in tables])
    hm = np.array([entropy(marginal(t)) for t in tables])
    hc = np.array([conditional_entropy(t) for t in tables])
    return MIEstimate(mi, float(mi.mean()), hm, hc, tables[0].weights.size)


def mi_from_stack(cond_probs, weights=None) -> MIEstimate:
    """Vectorized feature_mi for stacked tables.

    cond_probs: (k, d, n) conditionals for k states and d features over a
    positionally shared grid; weights defaults to uniform over states.
    """
    c = np.ascontiguousarray(cond_probs, dtype=np.float64)
    k, d, n = c.shape
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    marg = np.einsum("k,kdn->dn", w, c)
    marg /= marg.sum(axis=1, keepdims=True)
    hm = _kernels.entropy_rows(marg)
    hc = np.einsum("k,kd->d", w, _kernels.entropy_rows(c))
    mi = np.clip(hm - hc, 0.0, None)
    return MIEstimate(mi, float(mi.mean()), hm, hc, k)


@dataclass(frozen=True)
class ToyFixture:
    """Two binary pixels through a 2x2 linear map, binary SQ at both ends."""

    input_on_probs: np.ndarray      # P(X_i = 1)
    weight: np.ndarray              # feature map, rows are features
    features: np.ndarray            # t = W x at the unquantized input
    state_grid: np.ndarray          # (4, 2) quantized input states
    state_weights: np.ndarray       # (4,) product input probabilities
    tables: tuple                   # ConditionalPmfTable per feature
    expected_t1_marginal: np.ndarray


def toy_two_feature_fixture() -> ToyFixture:
    """Golden fixture with hand-checkable numbers.

    Pixels (0.7, 0.6) are binary-quantized, pushed through
    W = [[0.5, 0.4], [0.3, 0.2]]^T ... concretely t_1 = 0.5 x_1 + 0.3 x_2 and
    t_2 = 0.4 x_1 + 0.2 x_2, and each feature is binary-quantized on {0, 1}.
    Exact enumeration over the four input states gives the feature-1 marginal
    (0.47, 0.53).
    """
    x = np.array([0.7, 0.6])
    W = np.array([[0.5, 0.3],
                  [0.4, 0.2]])     # rows: features over (x1, x2)
    t = W @ x                      # (0.53, 0.40)
    states = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    pw = np.array([(x[0] if s[0] else 1 - x[0]) * (x[1] if s[1] else 1 - x[1])
                   for s in states])
    grid = make_bin_grid(0.0, 1.0, 2)
    tables = []
    for f in range(2):
        on = states @ W[f]         # P(T_f = 1 | state)
        cond = np.stack([1.0 - on, on], axis=1)
        tables.append(ConditionalPmfTable(grid, pw, cond))
    return ToyFixture(
        input_on_probs=x,
        weight=W,
        features=t,
        state_grid=states,
        state_weights=pw,
        tables=tuple(tables),
        expected_t1_marginal=np.array([0.47, 0.53]),
    )
