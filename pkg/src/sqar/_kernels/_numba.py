"""Numba-compiled kernels, loop translations of ``_numpy.py``.

Same contracts as the reference kernels; agreement is checked to near machine
precision by tests/test_kernels.py (summation order differs, so results are
not required to be bit-identical).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sq_pmf_flat(v, lo, hi, n_bins, alpha):
    m = v.shape[0]
    out = np.zeros((m, n_bins), dtype=np.float64)
    b = np.empty(n_bins, dtype=np.float64)
    w = np.empty(n_bins, dtype=np.float64)
    for r in range(m):
        s = (hi[r] - lo[r]) / (n_bins - 1)
        hit = -1
        for k in range(n_bins):
            b[k] = hi[r] if k == n_bins - 1 else lo[r] + k * s
            d = abs(v[r] - b[k]) / s
            if d == 0.0:
                hit = k
            t = 1.0 - d / alpha
            w[k] = t if t > 0.0 else 0.0
        if hit >= 0:
            out[r, hit] = 1.0
            continue
        Z = 0.0
        for i in range(n_bins):
            if not (b[i] < v[r] and w[i] > 0.0):
                continue
            for j in range(i + 1, n_bins):
                if not (b[j] > v[r] and w[j] > 0.0):
                    continue
                share = (b[j] - v[r]) / (b[j] - b[i])
                ww = w[i] * w[j]
                out[r, i] += share * ww
                out[r, j] += (1.0 - share) * ww
                Z += ww
        if Z > 0.0:
            for k in range(n_bins):
                out[r, k] /= Z
    return out


@njit(cache=True)
def sq_pmf_flat_vjp(v, lo, hi, n_bins, alpha, dprobs):
    m = v.shape[0]
    dv = np.zeros(m, dtype=np.float64)
    dlo = np.zeros(m, dtype=np.float64)
    dhi = np.zeros(m, dtype=np.float64)
    b = np.empty(n_bins, dtype=np.float64)
    w = np.empty(n_bins, dtype=np.float64)
    dist = np.empty(n_bins, dtype=np.float64)
    u = np.empty(n_bins, dtype=np.float64)
    ubar = np.empty(n_bins, dtype=np.float64)
    db = np.empty(n_bins, dtype=np.float64)
    for r in range(m):
        s = (hi[r] - lo[r]) / (n_bins - 1)
        hit = False
        for k in range(n_bins):
            b[k] = hi[r] if k == n_bins - 1 else lo[r] + k * s
            dist[k] = abs(v[r] - b[k]) / s
            if dist[k] == 0.0:
                hit = True
            t = 1.0 - dist[k] / alpha
            w[k] = t if t > 0.0 else 0.0
        if hit:
            continue
        for k in range(n_bins):
            u[k] = 0.0
        Z = 0.0
        for i in range(n_bins):
            if not (b[i] < v[r] and w[i] > 0.0):
                continue
            for j in range(i + 1, n_bins):
                if not (b[j] > v[r] and w[j] > 0.0):
                    continue
                share = (b[j] - v[r]) / (b[j] - b[i])
                ww = w[i] * w[j]
                u[i] += share * ww
                u[j] += (1.0 - share) * ww
                Z += ww
        if Z <= 0.0:
            continue
        gp = 0.0
        for k in range(n_bins):
            gp += dprobs[r, k] * (u[k] / Z)
        for k in range(n_bins):
            ubar[k] = (dprobs[r, k] - gp) / Z
            db[k] = 0.0
        sa = s * alpha
        dvr = 0.0
        dsr = 0.0
        for i in range(n_bins):
            if not (b[i] < v[r] and w[i] > 0.0):
                continue
            for j in range(i + 1, n_bins):
                if not (b[j] > v[r] and w[j] > 0.0):
                    continue
                D = b[j] - b[i]
                share = (b[j] - v[r]) / D
                ww = w[i] * w[j]
                A = ubar[i] * share + ubar[j] * (1.0 - share)
                B = (ubar[i] - ubar[j]) * ww
                dvr += A * (-w[j] + w[i]) / sa - B / D
                db[i] += A * w[j] / sa + B * share / D
                db[j] += -A * w[i] / sa + B * (1.0 - share) / D
                dsr += A * (w[j] * dist[i] + w[i] * dist[j]) / sa
        dlr = -dsr / (n_bins - 1)
        dhr = dsr / (n_bins - 1)
        for k in range(n_bins):
            frac = k / (n_bins - 1)
            dlr += db[k] * (1.0 - frac)
            dhr += db[k] * frac
        dv[r] = dvr
        dlo[r] = dlr
        dhi[r] = dhr
    return dv, dlo, dhi


@njit(cache=True)
def categorical_rows(probs, u):
    m = probs.shape[0]
    n = probs.shape[1]
    out = np.empty(m, dtype=np.int64)
    for r in range(m):
        acc = 0.0
        idx = n - 1
        for k in range(n):
            acc += probs[r, k]
            if u[r] < acc:
                idx = k
                break
        out[r] = idx
    return out


@njit(cache=True)
def entropy_rows_2d(probs):
    m = probs.shape[0]
    out = np.zeros(m, dtype=np.float64)
    for r in range(m):
        acc = 0.0
        for k in range(probs.shape[1]):
            p = probs[r, k]
            if p > 0.0:
                acc += p * np.log(p)
        out[r] = -acc
    return out


def entropy_rows(probs):
    """Entropy along the last axis for arbitrary leading shape."""
    p = np.ascontiguousarray(probs, dtype=np.float64)
    lead = p.shape[:-1]
    flat = p.reshape(-1, p.shape[-1])
    return entropy_rows_2d(flat).reshape(lead)
