"""Image quality numbers against a known phantom."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .media import ImageGrid


def true_wall_columns(x_true) -> np.ndarray:
    """Column of the strongest reflector in each row, -1 where the row is empty."""
    x_true = np.asarray(x_true)
    cols = np.argmax(np.abs(x_true), axis=1)
    return np.where(np.abs(x_true).max(axis=1) > 0, cols, -1)


def wall_columns(image, signed=True) -> np.ndarray:
    """Per-row argmax over depth (of the value, or of the magnitude)."""
    a = np.asarray(image, dtype=float)
    return np.argmax(a if signed else np.abs(a), axis=1)


def band_wall_depth(image, grid: ImageGrid, rows=None, signed=True) -> float:
    """Depth at the peak of the depth profile averaged over ``rows``."""
    a = np.asarray(image, dtype=float)
    sel = a if rows is None else a[rows]
    prof = sel.mean(axis=0)
    return float(grid.depths[np.argmax(prof if signed else np.abs(prof))])


def artifact_energy(image, x_true, radius: int = 2) -> float:
    """Fraction of image energy outside the true support dilated by ``radius`` voxels."""
    a = np.asarray(image, dtype=float)
    total = float(np.sum(a * a))
    if total == 0:
        return 0.0
    support = np.asarray(x_true) != 0
    if radius > 0:
        support = ndimage.binary_dilation(support, np.ones((2 * radius + 1,) * 2, bool))
    return float(np.sum(a[~support] ** 2)) / total


@dataclass
class Report:
    wall_depth: float           # band-averaged estimate, meters
    true_wall_depth: float
    localization_error: float   # mean per-row |column error|, voxels
    median_error: float
    frac_within_1: float
    frac_within_2: float
    rmse: float
    artifact_energy: float

    def as_dict(self):
        return asdict(self)


def metrics(image, x_true, grid: ImageGrid, band=None, signed=True, dilation=2) -> Report:
    """Compare an image with ground truth on the same grid.

    Row-wise errors use only rows that contain a reflector.  ``band`` picks
    rows for the averaged depth estimate (all wall rows by default).
    """
    a = np.asarray(image, dtype=float)
    x_true = np.asarray(x_true, dtype=float).reshape(grid.shape)
    if a.shape != grid.shape:
        raise ValueError(f"image {a.shape} does not match grid {grid.shape}")
    truth = true_wall_columns(x_true)
    rows = truth >= 0
    if band is None:
        band = rows
    if rows.any():
        err = np.abs(wall_columns(a, signed)[rows] - truth[rows])
        loc, med = float(err.mean()), float(np.median(err))
        w1, w2 = float(np.mean(err <= 1)), float(np.mean(err <= 2))
        est = band_wall_depth(a, grid, band, signed)
        true_depth = float(grid.depths[np.bincount(truth[band & rows]).argmax()]) if (band & rows).any() else np.nan
    else:
        loc = med = w1 = w2 = est = true_depth = np.nan
    rmse = float(np.sqrt(np.mean((a - x_true) ** 2)))
    return Report(est, true_depth, loc, med, w1, w2, rmse, artifact_energy(a, x_true, dilation))
