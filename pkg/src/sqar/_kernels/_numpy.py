"""Pure-numpy reference kernels.

These are the fallback implementations used when numba is unavailable or
disabled via SQAR_NO_NUMBA=1.  The numba versions in ``_numba.py`` must match
these bit-for-bit on the same inputs (see tests/test_kernels.py).

Conventions: every value row carries its own grid, described by (lo, hi) and
the shared bin count n.  Bins are b_k = lo + k*(hi-lo)/(n-1).  A value that
coincides with a bin exactly gets a point mass on that bin; otherwise mass is
aggregated over bracketing bin pairs with the sparsity-weighted shares
(distance weight relu(1 - d/alpha) on each endpoint).
"""

import numpy as np

# Rows processed per chunk in the pairwise (m, n, n) tensor path.
_CHUNK = 4096


def _pair_parts(v, lo, hi, n_bins, alpha):
    """Per-chunk forward quantities shared by pmf and vjp."""
    m = v.shape[0]
    s = (hi - lo) / (n_bins - 1)
    k = np.arange(n_bins, dtype=np.float64)
    b = lo[:, None] + k[None, :] * s[:, None]            # (m, n)
    b[:, -1] = hi               # pin exactly so v == hi lands on the last bin
    dist = np.abs(v[:, None] - b) / s[:, None]           # normalized distance
    w = np.maximum(0.0, 1.0 - dist / alpha)
    center = dist == 0.0                                 # exact bin hits
    lowmask = b < v[:, None]
    upmask = b > v[:, None]
    valid = lowmask[:, :, None] & upmask[:, None, :]     # (m, i, j)
    D = b[:, None, :] - b[:, :, None]                    # b_j - b_i
    Dsafe = np.where(valid, D, 1.0)
    share = np.where(valid, (b[:, None, :] - v[:, None, None]) / Dsafe, 0.0)
    ww = np.where(valid, w[:, :, None] * w[:, None, :], 0.0)
    return s, b, dist, w, center, valid, Dsafe, share, ww


def sq_pmf_flat(v, lo, hi, n_bins, alpha):
    """Sparse stochastic-quantization PMFs for a batch of scalars.

    v, lo, hi: (m,) float64 with lo <= v <= hi elementwise.
    Returns (m, n_bins) probabilities.  Rows where the weighted pair mass
    vanishes (possible only for alpha <= 1) are returned as all-zero.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    m = v.shape[0]
    out = np.empty((m, n_bins), dtype=np.float64)
    for a in range(0, m, _CHUNK):
        sl = slice(a, min(a + _CHUNK, m))
        out[sl] = _sq_pmf_chunk(v[sl], lo[sl], hi[sl], n_bins, alpha)
    return out


def _sq_pmf_chunk(v, lo, hi, n_bins, alpha):
    s, b, dist, w, center, valid, Dsafe, share, ww = _pair_parts(
        v, lo, hi, n_bins, alpha)
    u = (share * ww).sum(axis=2) + ((1.0 - share) * ww * valid).sum(axis=1)
    Z = u.sum(axis=1)
    p = np.where(Z[:, None] > 0.0, u / np.where(Z > 0.0, Z, 1.0)[:, None], 0.0)
    hit = center.any(axis=1)
    if hit.any():
        p[hit] = 0.0
        rows = np.nonzero(hit)[0]
        cols = center.argmax(axis=1)[hit]
        p[rows, cols] = 1.0
    return p


def sq_pmf_flat_vjp(v, lo, hi, n_bins, alpha, dprobs):
    """Backward pass of sq_pmf_flat: returns (dv, dlo, dhi), each (m,).

    Gradients are the one-sided derivatives of the piecewise-smooth map; rows
    that hit a bin exactly (point-mass branch) get zero gradient.
    """
    m = v.shape[0]
    dv = np.zeros(m, dtype=np.float64)
    dlo = np.zeros(m, dtype=np.float64)
    dhi = np.zeros(m, dtype=np.float64)
    for a in range(0, m, _CHUNK):
        sl = slice(a, min(a + _CHUNK, m))
        dv[sl], dlo[sl], dhi[sl] = _sq_pmf_vjp_chunk(
            v[sl], lo[sl], hi[sl], n_bins, alpha, dprobs[sl])
    return dv, dlo, dhi


def _sq_pmf_vjp_chunk(v, lo, hi, n_bins, alpha, g):
    s, b, dist, w, center, valid, Dsafe, share, ww = _pair_parts(
        v, lo, hi, n_bins, alpha)
    u = (share * ww).sum(axis=2) + ((1.0 - share) * ww * valid).sum(axis=1)
    Z = u.sum(axis=1)
    ok = (Z > 0.0) & ~center.any(axis=1)
    Zs = np.where(Z > 0.0, Z, 1.0)
    p = u / Zs[:, None]
    ubar = (g - (g * p).sum(axis=1)[:, None]) / Zs[:, None]
    ubar[~ok] = 0.0

    act = (w > 0.0).astype(np.float64)
    sa = s * alpha                                        # (m,)
    # A multiplies d(w_i w_j); B multiplies d(share).
    A = np.where(valid,
                 ubar[:, :, None] * share + ubar[:, None, :] * (1.0 - share),
                 0.0)
    B = np.where(valid, (ubar[:, :, None] - ubar[:, None, :]) * ww, 0.0)

    wi = w[:, :, None]
    wj = w[:, None, :]
    ai = act[:, :, None]
    aj = act[:, None, :]
    inv_sa = (1.0 / sa)[:, None, None]

    # d/dv: w_i depends on v - b_i (i below v), w_j on b_j - v.
    dv = (A * (-wj * ai + wi * aj) * inv_sa - B / Dsafe * valid).sum(axis=(1, 2))

    # Per-bin gradients from both roles plus the share term.
    db = np.zeros_like(w)
    db += (A * wj * ai * inv_sa + B * share / Dsafe).sum(axis=2)       # as i
    db += (-A * wi * aj * inv_sa + B * (1.0 - share) / Dsafe).sum(axis=1)  # as j
    # Spacing dependence of the distance weights.
    di = dist[:, :, None]
    dj = dist[:, None, :]
    ds = (A * (wj * ai * di + wi * aj * dj) * inv_sa).sum(axis=(1, 2))

    k = np.arange(n_bins, dtype=np.float64)
    frac = k / (n_bins - 1)
    dlo = (db * (1.0 - frac)[None, :]).sum(axis=1) - ds / (n_bins - 1)
    dhi = (db * frac[None, :]).sum(axis=1) + ds / (n_bins - 1)
    dv = np.where(ok, dv, 0.0)
    dlo = np.where(ok, dlo, 0.0)
    dhi = np.where(ok, dhi, 0.0)
    return dv, dlo, dhi


def categorical_rows(probs, u):
    """Inverse-CDF categorical draw per row.  u: (m,) uniforms in [0, 1)."""
    c = np.cumsum(probs, axis=1)
    # guard against cumsum rounding below 1
    c[:, -1] = np.maximum(c[:, -1], 1.0)
    return (u[:, None] >= c).sum(axis=1).astype(np.int64)


def entropy_rows(probs):
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -t.sum(axis=-1)
