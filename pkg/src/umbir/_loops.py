"""Compiled inner loops over run-length column storage.

A matrix column ``i`` is a set of runs ``b``: ``length[i, b]`` consecutive
rows starting at ``start[i, b]``, values at ``values[ptr[i, b]:...]``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def matvec(start, length, ptr, values, x, n_rows):
    y = np.zeros(n_rows)
    n_cols, n_runs = start.shape
    for i in range(n_cols):
        xi = x[i]
        if xi == 0.0:
            continue
        for b in range(n_runs):
            r0 = start[i, b]
            p0 = ptr[i, b]
            for t in range(length[i, b]):
                y[r0 + t] += values[p0 + t] * xi
    return y


@njit(cache=True)
def rmatvec(start, length, ptr, values, y):
    n_cols, n_runs = start.shape
    x = np.zeros(n_cols)
    for i in range(n_cols):
        acc = 0.0
        for b in range(n_runs):
            r0 = start[i, b]
            p0 = ptr[i, b]
            for t in range(length[i, b]):
                acc += values[p0 + t] * y[r0 + t]
        x[i] = acc
    return x


@njit(cache=True)
def column_norms2(start, length, ptr, values):
    n_cols, n_runs = start.shape
    out = np.zeros(n_cols)
    for i in range(n_cols):
        acc = 0.0
        for b in range(n_runs):
            p0 = ptr[i, b]
            for t in range(length[i, b]):
                v = values[p0 + t]
                acc += v * v
        out[i] = acc
    return out


@njit(cache=True)
def run_extents(T, lam, record_start, fs, n_taps, M):
    """First row and length of each (voxel, receiver) run inside [0, M)."""
    N, K = T.shape
    first = np.zeros((N, K), dtype=np.int64)
    count = np.zeros((N, K), dtype=np.int64)
    for i in range(N):
        for j in range(K):
            if lam[i, j] == 0.0 or not math.isfinite(T[i, j]):
                continue
            x0 = (T[i, j] - record_start) * fs
            m0 = math.ceil(x0)
            m1 = math.ceil(x0 + n_taps)
            if m0 < 0:
                m0 = 0
            if m1 > M:
                m1 = M
            if m1 > m0:
                first[i, j] = m0
                count[i, j] = m1 - m0
    return first, count


@njit(cache=True)
def fill_runs(T, gamma, lam, first, count, ptr, values, table, gamma_step,
              record_start, fs, oversample, n_taps):
    """Write lam * h~(gamma, t_m - T) for every run, bilinear in (gamma, time)."""
    N, K = T.shape
    n_fine = table.shape[1]
    for i in range(N):
        for j in range(K):
            n = count[i, j]
            if n == 0:
                continue
            x0 = (T[i, j] - record_start) * fs
            g = gamma[i, j] / gamma_step
            k0 = int(math.floor(g))
            wg = g - k0
            a = lam[i, j]
            p0 = ptr[i, j]
            m0 = first[i, j]
            for t in range(n):
                f = (m0 + t - x0) * oversample
                if f < 0.0 or f >= n_taps * oversample:
                    values[p0 + t] = 0.0
                    continue
                i0 = int(math.floor(f))
                if i0 > n_fine - 2:
                    i0 = n_fine - 2
                wt = f - i0
                v0 = table[k0, i0] * (1.0 - wt) + table[k0, i0 + 1] * wt
                v1 = table[k0 + 1, i0] * (1.0 - wt) + table[k0 + 1, i0 + 1] * wt
                values[p0 + t] = a * (v0 * (1.0 - wg) + v1 * wg)


# ---------------------------------------------------------------------------
# QGGMRF potential, used inside the ICD loop
# ---------------------------------------------------------------------------

@njit(cache=True)
def qggmrf_rho(delta, sigma, p, q, T):
    ad = abs(delta)
    if ad == 0.0:
        return 0.0
    r = q - p
    ur = (ad / (T * sigma)) ** r
    return ad ** q / (p * sigma ** p * (T * sigma) ** r * (1.0 + ur))


@njit(cache=True)
def qggmrf_surrogate(delta, sigma, p, q, T):
    """rho'(delta) / (2 delta), with its limit at delta = 0 (q = 2)."""
    ad = abs(delta)
    r = q - p
    ur = (ad / (T * sigma)) ** r
    scale = 2.0 * sigma ** p * (T * sigma) ** r
    if ad == 0.0:
        if q == 2.0:
            return q / p / scale
        return np.inf
    return ad ** (q - 2.0) / scale * (q / p + ur) / (1.0 + ur) ** 2


@njit(cache=True)
def prior_cost(x, nbr, bw, nsig, p, q, T):
    """Sum over unordered cliques of b * rho(x_s - x_r)."""
    N, C = nbr.shape
    acc = 0.0
    for s in range(N):
        for c in range(C):
            r = nbr[s, c]
            if r > s:
                acc += bw[s, c] * qggmrf_rho(x[s] - x[r], nsig[s, c], p, q, T)
    return acc


@njit(cache=True)
def icd_pass(order, x, e, start, length, ptr, values, norms2, inv_sigma2,
             nbr, bw, nsig, p, q, T, use_prior, relax):
    """One ICD pass in the given voxel order; updates x and residual e in place.

    ``relax`` scales each step towards the surrogate minimizer; any value in
    (0, 2) still decreases the surrogate, hence the cost.
    """
    C = nbr.shape[1]
    n_runs = start.shape[1]
    for k in range(order.shape[0]):
        i = order[k]
        theta2 = norms2[i] * inv_sigma2
        dot = 0.0
        for b in range(n_runs):
            r0 = start[i, b]
            p0 = ptr[i, b]
            for t in range(length[i, b]):
                dot += values[p0 + t] * e[r0 + t]
        theta1 = -dot * inv_sigma2
        xi = x[i]
        num = theta2 * xi - theta1
        den = theta2
        if use_prior:
            for c in range(C):
                r = nbr[i, c]
                if r < 0:
                    continue
                w = 2.0 * bw[i, c] * qggmrf_surrogate(xi - x[r], nsig[i, c], p, q, T)
                num += w * x[r]
                den += w
        if den <= 0.0:
            continue
        d = relax * (num / den - xi)
        xnew = xi + d
        if d == 0.0:
            continue
        x[i] = xnew
        for b in range(n_runs):
            r0 = start[i, b]
            p0 = ptr[i, b]
            for t in range(length[i, b]):
                e[r0 + t] -= values[p0 + t] * d
