"""Independent reference computations used by the tests.

Nothing here imports the package's ray tracing, kernels or solver.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid


def fermat_one_way(thick, speed, h0, h1, n=41, refinements=3):
    """Minimum travel time from height ``h0`` at depth 0 to height ``h1`` at the stack bottom.

    Brute-force grid search over the crossing heights at each internal
    interface, then ``refinements`` rounds of zooming on the best cell.
    The optimal path is monotone in height, so crossings are searched in
    [min(h0, h1), max(h0, h1)].
    """
    thick = np.asarray(thick, float)
    speed = np.asarray(speed, float)
    L = len(thick)
    if L == 1:
        return float(np.hypot(thick[0], h1 - h0) / speed[0])
    lo_b, hi_b = min(h0, h1), max(h0, h1)
    lo = np.full(L - 1, lo_b)
    hi = np.full(L - 1, hi_b)
    best = None
    for _ in range(refinements + 1):
        axes = [np.linspace(lo[k], hi[k], n) for k in range(L - 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = [np.full(mesh[0].shape, h0)] + list(mesh) + [np.full(mesh[0].shape, h1)]
        t = np.zeros(mesh[0].shape)
        for l in range(L):
            t += np.hypot(thick[l], pts[l + 1] - pts[l]) / speed[l]
        idx = np.unravel_index(np.argmin(t), t.shape)
        best = float(t[idx])
        for k in range(L - 1):
            step = (hi[k] - lo[k]) / (n - 1)
            c = axes[k][idx[k]]
            lo[k] = max(lo_b, c - 2 * step)
            hi[k] = min(hi_b, c + 2 * step)
    return best


def fermat_round_trip(thick, speed, h_t, h_v, h_r, **kw):
    """Transmitter -> voxel at the stack bottom -> receiver, both legs minimized."""
    return fermat_one_way(thick, speed, h_t, h_v, **kw) + fermat_one_way(thick, speed, h_r, h_v, **kw)


def quadrature_kernel(pulse, fs, gamma, t, n_freq=40001):
    """h(gamma, t) by trapezoid quadrature of the inverse Fourier integral.

    The spectrum of the sampled pulse is evaluated directly (DTFT) and the
    real-valued inverse integral runs over [0, fs/2] on a dense grid.
    """
    pulse = np.asarray(pulse, float)
    n = np.arange(len(pulse))
    f = np.linspace(0.0, fs / 2, n_freq)
    S = np.concatenate([np.exp(-2j * np.pi * np.outer(fc, n) / fs) @ pulse
                        for fc in np.array_split(f, max(1, n_freq // 2000))])
    H = S * np.exp(-gamma * f)
    out = []
    for tk in np.atleast_1d(t):
        integrand = np.real(H * np.exp(2j * np.pi * f * tk))
        out.append(2 * trapezoid(integrand, f) / fs)
    return np.array(out)


def dense_map_cost(A, D, y, x, g, sigma, pairs, rho_fn):
    """Cost evaluated with dense matrices and an explicit clique loop."""
    e = y - A @ x - (D @ g if D is not None else 0.0)
    total = 0.5 * float(e @ e) / sigma ** 2
    for s, r, b, sig in pairs:
        total += b * rho_fn(x[s] - x[r], sig)
    return total


def qggmrf_rho(d, sig, p, q, T):
    """Potential written out directly from its definition."""
    d = np.abs(np.asarray(d, float))
    u = (d / (T * sig)) ** (q - p)
    return d ** p / (p * sig ** p) * u / (1 + u)
