"""Ray paths through parallel layers: Snell chains, vertical reach, delays.

A ray is described by its angle in a seed layer.  Outbound rays are seeded
in the first layer (at the transducer face) and refract downwards; return
rays are seeded in the deepest layer they cross (at the voxel) and refract
upwards.  Either way ``sin(theta_l) / c_l`` is constant along the chain.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .media import ArrayGeometry, ImageGrid, LayeredMedium, path_thickness

log = logging.getLogger(__name__)

Direction = Literal["outbound", "return"]

#: Distance kept from the critical angle when bracketing the bisection.
CRITICAL_MARGIN = 1e-6


class TotalInternalReflection(ValueError):
    pass


class UnreachableTarget(ValueError):
    pass


def _seed_index(medium: LayeredMedium, direction: Direction) -> int:
    if direction == "outbound":
        return 0
    if direction == "return":
        return len(medium) - 1
    raise ValueError(f"unknown direction {direction!r}")


def snell_chain(medium: LayeredMedium, theta: float, direction: Direction = "outbound") -> np.ndarray:
    """Angles in every layer (ordered 1..L) for a ray with seed angle ``theta``.

    ``theta`` is the angle in layer 1 for outbound rays and in layer L for
    return rays.
    """
    if not abs(theta) < np.pi / 2:
        raise ValueError("seed angle must satisfy |theta| < pi/2")
    c = medium.speed
    L = len(c)
    angles = np.empty(L)
    if direction == "outbound":
        order = range(L)
    elif direction == "return":
        order = range(L - 1, -1, -1)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    prev = None
    for l in order:
        if prev is None:
            angles[l] = theta
        else:
            arg = np.sin(angles[prev]) * c[l] / c[prev]
            if abs(arg) > 1.0:
                raise TotalInternalReflection(
                    f"total internal reflection entering layer {l + 1} (sin argument {arg:.6f})"
                )
            angles[l] = np.arcsin(arg)
        prev = l
    return angles


def vertical_reach(medium: LayeredMedium, theta: float, direction: Direction = "outbound") -> float:
    """Height change of a ray crossing the whole stack: sum of eta_l tan(theta_l)."""
    angles = snell_chain(medium, theta, direction)
    return float(np.sum(medium.thickness * np.tan(angles)))


def critical_angle(medium: LayeredMedium, direction: Direction = "outbound") -> float:
    """Largest seed angle for which the ray still crosses every layer."""
    c = medium.speed
    ratio = c[_seed_index(medium, direction)] / c.max()
    return float(np.arcsin(min(ratio, 1.0)))


def solve_angle(medium: LayeredMedium, dz: float, direction: Direction = "outbound",
                tol_z: float = 1e-7) -> float:
    """Seed angle whose vertical reach equals ``dz`` (half-interval search).

    Negative ``dz`` is solved by symmetry.  Raises :class:`UnreachableTarget`
    when ``|dz|`` is beyond the reach at the critical angle.
    """
    sign = -1.0 if dz < 0 else 1.0
    target = abs(dz)
    if target == 0.0:
        return 0.0
    lo, hi = 0.0, critical_angle(medium, direction) - CRITICAL_MARGIN
    if vertical_reach(medium, hi, direction) < target:
        raise UnreachableTarget(f"vertical offset {dz} m beyond maximum reach")
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        z = vertical_reach(medium, mid, direction)
        if abs(z - target) <= tol_z:
            break
        if z < target:
            lo = mid
        else:
            hi = mid
    return sign * mid


def layer_delays(medium: LayeredMedium, chain) -> np.ndarray:
    """One-way travel time through each layer for the given angle chain."""
    chain = np.asarray(chain, dtype=float)
    return medium.thickness * np.sqrt(1.0 + np.tan(chain) ** 2) / medium.speed


# ---------------------------------------------------------------------------
# vectorized solver used for whole tables
# ---------------------------------------------------------------------------

def _reach_batch(theta, c_seed, thick, speed):
    p = np.sin(theta) / c_seed
    s = p[:, None] * speed[None, :]
    active = thick > 0
    s = np.where(active, s, 0.0)
    return np.sum(thick * s / np.sqrt(1.0 - s * s), axis=1)


def _solve_batch(thick, speed, seed_speed, dz, tol_z):
    """Solve seed angles for many stacks at once.

    ``thick`` is (n, L) path thickness (zero for layers not crossed),
    ``seed_speed`` (n,) the speed of each row's seed layer.  Returns signed
    angles and a reachability mask.
    """
    n = len(dz)
    sign = np.where(dz < 0, -1.0, 1.0)
    target = np.abs(dz)
    cmax = np.max(np.where(thick > 0, speed[None, :], 0.0), axis=1)
    cmax = np.maximum(cmax, seed_speed)
    theta_crit = np.arcsin(np.minimum(seed_speed / cmax, 1.0))
    lo = np.zeros(n)
    hi = theta_crit - CRITICAL_MARGIN
    ok = _reach_batch(hi, seed_speed, thick, speed) >= target
    hi = np.where(ok, hi, 0.0)
    mid = 0.5 * (lo + hi)
    todo = ok & (target > 0)
    mid[~todo] = 0.0
    for _ in range(200):
        if not todo.any():
            break
        idx = np.flatnonzero(todo)
        m = 0.5 * (lo[idx] + hi[idx])
        z = _reach_batch(m, seed_speed[idx], thick[idx], speed)
        mid[idx] = m
        done = np.abs(z - target[idx]) <= tol_z
        below = z < target[idx]
        lo[idx] = np.where(below, m, lo[idx])
        hi[idx] = np.where(below, hi[idx], m)
        todo[idx[done]] = False
    return sign * mid, ok


def _chain_batch(theta, seed_speed, thick, speed):
    """Angles (n, L) for seed angles; zero-thickness layers get angle 0."""
    p = np.sin(theta) / seed_speed
    s = np.where(thick > 0, p[:, None] * speed[None, :], 0.0)
    return np.arcsin(np.clip(s, -1.0, 1.0))


@dataclass(frozen=True)
class DelayTable:
    """Round-trip delays and dispersion for every (voxel, receiver) pair.

    Arrays are indexed ``[v, j]``.  Unreachable pairs hold NaN delays and
    are flagged ``False`` in ``reachable``.  ``lam`` is filled in by the
    system model (None until then).
    """

    T: np.ndarray
    gamma: np.ndarray
    theta_t1: np.ndarray   # (N,)
    theta_r1: np.ndarray   # (N, K)
    reachable: np.ndarray  # (N, K) bool
    n_path_layers: np.ndarray  # (N,) layers actually crossed
    lam: np.ndarray | None = None

    @property
    def shape(self):
        return self.T.shape

    def with_lambda(self, lam):
        return replace(self, lam=np.asarray(lam, dtype=float))


def delay_table_points(medium: LayeredMedium, geometry: ArrayGeometry, points,
                       tol_z: float = 1e-7) -> DelayTable:
    """Delay table for arbitrary (depth, height) points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    face, h_t = geometry.transmitter
    depth = points[:, 0] - face
    if np.any(depth <= 0) or np.any(depth > medium.total_depth * (1 + 1e-12)):
        raise ValueError("all points must lie inside the medium")
    heights = points[:, 1]
    speed = medium.speed
    alpha = medium.attenuation
    thick = path_thickness(medium, depth)
    active = thick > 0
    n_layers = active.sum(axis=1)
    deepest = n_layers - 1
    N = len(points)
    K = geometry.n_receivers

    theta_t1, ok_t = _solve_batch(thick, speed, np.full(N, speed[0]), heights - h_t, tol_z)
    chain_t = _chain_batch(theta_t1, speed[0], thick, speed)
    Tt = thick / (speed * np.cos(chain_t))

    h_r = geometry.receiver_heights
    thick_r = np.repeat(thick, K, axis=0)
    seed_r = np.repeat(speed[deepest], K)
    dz_r = (h_r[None, :] - heights[:, None]).ravel()
    theta_rL, ok_r = _solve_batch(thick_r, speed, seed_r, dz_r, tol_z)
    chain_r = _chain_batch(theta_rL, seed_r, thick_r, speed)
    Tr = thick_r / (speed * np.cos(chain_r))

    Tt_rep = np.repeat(Tt, K, axis=0)
    T = (Tt_rep + Tr).sum(axis=1).reshape(N, K)
    gamma = ((Tt_rep + Tr) * (speed * alpha)).sum(axis=1).reshape(N, K)
    theta_r1 = chain_r[:, 0].reshape(N, K)
    reachable = ok_t[:, None] & ok_r.reshape(N, K)
    T = np.where(reachable, T, np.nan)
    gamma = np.where(reachable, gamma, np.nan)
    n_bad = int((~reachable).sum())
    if n_bad:
        log.info("%d of %d voxel/receiver pairs beyond the critical angle", n_bad, N * K)
    return DelayTable(T, gamma, theta_t1, theta_r1, reachable, n_layers)


def delay_table(medium: LayeredMedium, geometry: ArrayGeometry, grid: ImageGrid,
                tol_z: float | None = None) -> DelayTable:
    """Delay table for every voxel center of ``grid``; ``tol_z`` defaults to pitch/100."""
    if tol_z is None:
        tol_z = grid.pitch / 100
    return delay_table_points(medium, geometry, grid.centers(), tol_z)


def direct_arrival_delays(geometry: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Transmitter-to-receiver delay and dispersion through the embedding fluid."""
    tx = np.asarray(geometry.transmitter)
    rx = np.asarray(geometry.receivers)
    tau = np.linalg.norm(rx - tx, axis=1) / geometry.embedding_speed
    gamma = geometry.embedding_attenuation * geometry.embedding_speed * tau
    return tau, gamma


# ---------------------------------------------------------------------------
# on-disk cache
# ---------------------------------------------------------------------------

def table_key(medium, geometry, grid, tol_z=None) -> str:
    h = hashlib.sha256(repr((medium, geometry, grid, tol_z)).encode())
    return h.hexdigest()[:20]


def cached_delay_table(medium, geometry, grid, cache_dir=None, tol_z=None) -> DelayTable:
    if cache_dir is None:
        return delay_table(medium, geometry, grid, tol_z)
    path = Path(cache_dir) / f"delays-{table_key(medium, geometry, grid, tol_z)}.npz"
    if path.exists():
        with np.load(path) as z:
            return DelayTable(z["T"], z["gamma"], z["theta_t1"], z["theta_r1"],
                              z["reachable"], z["n_path_layers"])
    table = delay_table(medium, geometry, grid, tol_z)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, T=table.T, gamma=table.gamma, theta_t1=table.theta_t1,
             theta_r1=table.theta_r1, reachable=table.reachable,
             n_path_layers=table.n_path_layers)
    tmp.replace(path)
    return table
