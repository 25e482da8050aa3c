"""Polar stitching of per-view depth profiles at a fixed height."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .media import ImageGrid


@dataclass(frozen=True)
class PanoramaSpec:
    angles: tuple               # view azimuths, degrees, strictly increasing
    height: float               # meters
    interpolation: str = "linear"

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        if a.ndim != 1 or len(a) == 0:
            raise ValueError("need at least one view angle")
        if np.any(np.diff(a) <= 0):
            raise ValueError("view angles must be strictly increasing")
        if self.interpolation not in ("nearest", "linear"):
            raise ValueError("interpolation must be 'nearest' or 'linear'")


@dataclass
class Panorama:
    raster: np.ndarray          # (n, n) Cartesian map, borehole axis at the center
    mask: np.ndarray            # True where a value was placed
    pitch: float
    radius: float               # half-width of the map, meters

    def coordinates(self):
        n = self.raster.shape[0]
        c = (np.arange(n) + 0.5) * self.pitch - self.radius
        X, Y = np.meshgrid(c, -c)
        return X, Y


def extract_profiles(images, grid: ImageGrid, height: float) -> np.ndarray:
    """Row at ``height`` from each image, shape (views, cols)."""
    lo, hi = grid.origin[1], grid.origin[1] + grid.rows * grid.pitch
    if not lo <= height < hi:
        raise ValueError(f"height {height} m outside the field of view [{lo}, {hi})")
    r = grid.row_of_height(height)
    out = []
    for img in images:
        img = np.asarray(img, dtype=float)
        if img.shape != grid.shape:
            raise ValueError("all images must share the grid")
        out.append(img[r])
    return np.array(out)


def _full_circle(angles):
    if len(angles) < 2:
        return False
    step = np.diff(angles).mean()
    return abs(angles[-1] - angles[0] + step - 360.0) < 1e-6 * 360


def stitch_panorama(images, grid: ImageGrid, spec: PanoramaSpec, center_offset: float = 0.0) -> Panorama:
    """Place each view's profile along its azimuth and resample to a square map.

    Radius of column c is ``center_offset + depth_c``.  Along the radius the
    nearest profile sample is taken, never interpolated; between spokes the
    value is the nearest spoke or a linear blend of the two bracketing
    spokes.  Views covering a full turn wrap around.
    """
    angles = np.asarray(spec.angles, dtype=float)
    images = list(images)
    if len(images) != len(angles):
        raise ValueError(f"{len(images)} images for {len(angles)} angles")
    prof = extract_profiles(images, grid, spec.height)
    radii = center_offset + grid.depths
    R = radii[-1] + grid.pitch / 2
    n = 2 * int(np.ceil(R / grid.pitch))
    pitch = grid.pitch
    half = n * pitch / 2
    c = (np.arange(n) + 0.5) * pitch - half
    X, Y = np.meshgrid(c, -c)
    rho = np.hypot(X, Y)
    psi = np.degrees(np.arctan2(Y, X)) % 360.0

    ridx = np.rint((rho - radii[0]) / pitch).astype(int)
    on_r = (ridx >= 0) & (ridx < len(radii))
    ridx = np.clip(ridx, 0, len(radii) - 1)

    wrap = _full_circle(angles)
    a0 = angles[0]
    rel = (psi - a0) % 360.0            # azimuth measured from the first spoke
    spokes = angles - a0
    if wrap:
        spokes_ext = np.append(spokes, 360.0)
        prof_ext = np.vstack([prof, prof[:1]])
    else:
        spokes_ext, prof_ext = spokes, prof

    if len(angles) == 1:
        # one spoke: cells whose center lies within half a cell of the ray
        dist = np.minimum(rel, 360.0 - rel)
        tol = np.degrees(pitch / np.maximum(rho, pitch)) / 2
        inside = dist <= tol
        val = prof[0][ridx]
    else:
        span = spokes_ext[-1]
        inside = rel <= span + 1e-9
        k = np.clip(np.searchsorted(spokes_ext, rel, side="right") - 1, 0, len(spokes_ext) - 2)
        t = (rel - spokes_ext[k]) / (spokes_ext[k + 1] - spokes_ext[k])
        t = np.clip(t, 0.0, 1.0)
        lo = prof_ext[k, ridx]
        hi = prof_ext[k + 1, ridx]
        if spec.interpolation == "nearest":
            val = np.where(t < 0.5, lo, hi)
        else:
            val = (1 - t) * lo + t * hi
    mask = inside & on_r
    return Panorama(np.where(mask, val, 0.0), mask, pitch, half)


def ridge_radius(pan: Panorama, n_azimuths: int = 90, span=(0.0, 360.0)) -> np.ndarray:
    """Radius of the strongest value along rays at evenly spaced azimuths (NaN if empty)."""
    X, Y = pan.coordinates()
    rho = np.hypot(X, Y)
    psi = np.degrees(np.arctan2(Y, X)) % 360.0
    out = []
    width = max(360.0 / n_azimuths / 2, 1.0)
    for a in np.linspace(span[0], span[1], n_azimuths, endpoint=False):
        d = np.abs((psi - a + 180.0) % 360.0 - 180.0)
        sel = pan.mask & (d <= width)
        if not sel.any():
            out.append(np.nan)
            continue
        vals = np.where(sel, pan.raster, -np.inf)
        i = np.unravel_index(np.argmax(vals), vals.shape)
        out.append(rho[i])
    return np.array(out)
