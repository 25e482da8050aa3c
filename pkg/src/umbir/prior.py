"""Spatially varying QGGMRF prior.

    rho(d) = |d|^p / (p s^p) * |d/(T s)|^(q-p) / (1 + |d/(T s)|^(q-p))

with clique scale ``s = sigma0 * sqrt(nu_s nu_r)`` growing with distance
from the sensor assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .media import ArrayGeometry, ImageGrid

_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def eight_neighborhood():
    """8-connected offsets with weights proportional to 1/distance, summing to 1."""
    w = np.array([1.0 / np.hypot(dr, dc) for dr, dc in _OFFSETS])
    w /= w.sum()
    return tuple((off, float(b)) for off, b in zip(_OFFSETS, w))


@dataclass(frozen=True)
class QggmrfParams:
    p: float = 1.1
    q: float = 2.0
    T: float = 0.01
    sigma0: float = 2.0
    nu: float = 10.0
    a: float = 2.0
    neighborhood: tuple = field(default_factory=eight_neighborhood)

    def __post_init__(self):
        if not (1 < self.p <= self.q and self.q == 2):
            raise ValueError(f"need 1 < p <= q = 2, got p={self.p}, q={self.q}")
        for name in ("T", "sigma0", "nu", "a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        weights = np.array([b for _, b in self.neighborhood])
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError("neighborhood weights must be >= 0 and sum to 1")


def rho(delta, sigma, params: QggmrfParams):
    d = np.abs(np.asarray(delta, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    p, q, T = params.p, params.q, params.T
    r = q - p
    ur = (d / (T * sigma)) ** r
    return d ** q / (p * sigma ** p * (T * sigma) ** r * (1 + ur))


def rho_prime(delta, sigma, params: QggmrfParams):
    delta = np.asarray(delta, dtype=float)
    d = np.abs(delta)
    sigma = np.asarray(sigma, dtype=float)
    p, q, T = params.p, params.q, params.T
    r = q - p
    ur = (d / (T * sigma)) ** r
    # |d|^(p-1) u^r written as |d|^(q-1) / (T s)^r to stay finite at 0
    mag = d ** (q - 1) / (sigma ** p * (T * sigma) ** r) * (q / p + ur) / (1 + ur) ** 2
    return np.sign(delta) * mag


def surrogate_coeff(delta, sigma, params: QggmrfParams):
    """Curvature of the symmetric quadratic bound: rho'(delta) / (2 delta).

    At delta = 0 this is the limit rho''(0) / 2, finite because q = 2.
    """
    d = np.abs(np.asarray(delta, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    p, q, T = params.p, params.q, params.T
    r = q - p
    ur = (d / (T * sigma)) ** r
    return (q / p + ur) / (1 + ur) ** 2 / (2 * sigma ** p * (T * sigma) ** r)


@dataclass(frozen=True)
class VarianceField:
    nu_s: np.ndarray  # (rows, cols)
    sigma0: float

    def clique_sigma(self, s, r):
        flat = self.nu_s.ravel()
        return self.sigma0 * np.sqrt(flat[s] * flat[r])


def variance_field(grid: ImageGrid, geometry: ArrayGeometry, nu: float, a: float,
                   sigma0: float = 1.0) -> VarianceField:
    if not nu > 0 or not a > 0:
        raise ValueError("nu and a must be > 0")
    centers = grid.centers()
    d = np.linalg.norm(centers - geometry.reference_point, axis=1)
    dmax = d.max()
    ratio = d / dmax if dmax > 0 else np.zeros_like(d)
    nu_s = 1 + (nu - 1) * ratio ** a
    return VarianceField(nu_s.reshape(grid.shape), sigma0)


@dataclass(frozen=True)
class CliqueTable:
    """Per-voxel neighbor lists for ICD: ``nbr[s, c]`` (-1 if absent), weight, scale."""

    nbr: np.ndarray
    weight: np.ndarray
    sigma: np.ndarray

    def pairs(self):
        """Unordered cliques as (s, r, b, sigma) arrays."""
        s, c = np.nonzero(self.nbr > np.arange(len(self.nbr))[:, None])
        return s, self.nbr[s, c], self.weight[s, c], self.sigma[s, c]


def clique_table(grid: ImageGrid, params: QggmrfParams, field_: VarianceField) -> CliqueTable:
    """Truncated (non-wrapping) neighborhoods; border voxels keep interior weights."""
    rows, cols = grid.shape
    N = rows * cols
    C = len(params.neighborhood)
    nbr = np.full((N, C), -1, dtype=np.int64)
    weight = np.zeros((N, C))
    rr, cc = np.divmod(np.arange(N), cols)
    for k, ((dr, dc), b) in enumerate(params.neighborhood):
        r2, c2 = rr + dr, cc + dc
        ok = (r2 >= 0) & (r2 < rows) & (c2 >= 0) & (c2 < cols)
        nbr[ok, k] = r2[ok] * cols + c2[ok]
        weight[ok, k] = b
    nu = field_.nu_s.ravel()
    safe = np.where(nbr >= 0, nbr, 0)
    sigma = np.where(nbr >= 0, field_.sigma0 * np.sqrt(nu[:, None] * nu[safe]), 1.0)
    return CliqueTable(nbr, weight, sigma)


def prior_cost(x, cliques: CliqueTable, params: QggmrfParams) -> float:
    s, r, b, sig = cliques.pairs()
    x = np.asarray(x, dtype=float).ravel()
    return float(np.sum(b * rho(x[s] - x[r], sig, params)))
