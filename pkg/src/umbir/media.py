"""Layered medium, sensor geometry and reconstruction grid.

Coordinates are 2D points ``(depth, height)`` in meters.  Depth is measured
perpendicular to the sensor array, starting at the transducer face
(depth 0); height runs along the receiver line.  Layers are parallel slabs
stacked along depth.

Voxels are indexed row-major: ``v = row * cols + col``, where ``row`` indexes
height and ``col`` indexes depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Layer:
    """One slab of the medium.

    ``attenuation`` is in s/m so that ``speed * attenuation * |f|`` times a
    traversal time gives the amplitude exponent.
    """

    thickness: float
    speed: float
    attenuation: float
    impedance: float
    name: str = ""

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"layer thickness must be > 0, got {self.thickness}")
        if not self.speed > 0:
            raise ValueError(f"layer speed must be > 0, got {self.speed}")
        if not self.attenuation >= 0:
            raise ValueError(f"layer attenuation must be >= 0, got {self.attenuation}")
        if not self.impedance > 0:
            raise ValueError(f"layer impedance must be > 0, got {self.impedance}")

    @classmethod
    def from_density(cls, thickness, speed, attenuation, density, name=""):
        return cls(thickness, speed, attenuation, density * speed, name)


@dataclass(frozen=True)
class LayeredMedium:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ValueError("medium needs at least one layer")

    def __len__(self):
        return len(self.layers)

    @property
    def thickness(self) -> np.ndarray:
        return np.array([l.thickness for l in self.layers])

    @property
    def speed(self) -> np.ndarray:
        return np.array([l.speed for l in self.layers])

    @property
    def attenuation(self) -> np.ndarray:
        return np.array([l.attenuation for l in self.layers])

    @property
    def impedance(self) -> np.ndarray:
        return np.array([l.impedance for l in self.layers])

    @property
    def total_depth(self) -> float:
        return float(np.sum(self.thickness))

    @property
    def interfaces(self) -> np.ndarray:
        """Depths of the layer tops plus the bottom, length L + 1."""
        return np.concatenate([[0.0], np.cumsum(self.thickness)])

    def truncated(self, depth: float) -> "LayeredMedium":
        """The stack a ray crosses to reach ``depth``, last layer cut at ``depth``.

        A zero-thickness remainder (``depth`` on an interface) is dropped.
        """
        idx = layer_of_depth(self, depth)
        thick = path_thickness(self, depth)
        layers = []
        for l, eta in zip(self.layers[: idx + 1], thick[: idx + 1]):
            if eta > 0:
                layers.append(Layer(eta, l.speed, l.attenuation, l.impedance, l.name))
        return LayeredMedium(tuple(layers))


def layer_of_depth(medium: LayeredMedium, depth: float) -> int:
    """Zero-based index of the layer containing ``depth``.

    Interfaces belong to the deeper layer; ``depth == total_depth`` maps to
    the last layer.
    """
    tops = medium.interfaces
    if depth < 0 or depth > tops[-1] * (1 + 1e-12):
        raise ValueError(f"depth {depth} outside medium [0, {tops[-1]}]")
    idx = int(np.searchsorted(tops[1:], depth, side="right"))
    return min(idx, len(medium) - 1)


def path_thickness(medium: LayeredMedium, depth) -> np.ndarray:
    """Per-layer thickness traversed going straight down to ``depth``.

    Vectorized over ``depth``; returns shape ``depth.shape + (L,)``.  Layers
    below the one containing the depth get zero.
    """
    depth = np.asarray(depth, dtype=float)
    tops = medium.interfaces
    d = depth[..., None]
    return np.clip(d - tops[:-1], 0.0, medium.thickness)


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmitter, receiver line and embedding fluid.

    ``center_offset`` is the distance from the borehole axis to the
    transducer face; it only matters for panoramic stitching and for
    phantoms specified by distance from the borehole center.
    """

    transmitter: tuple[float, float]
    pointing_angle: float
    receivers: tuple[tuple[float, float], ...]
    embedding_speed: float
    embedding_attenuation: float = 0.0
    center_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "transmitter", tuple(float(v) for v in self.transmitter))
        object.__setattr__(
            self, "receivers", tuple(tuple(float(v) for v in r) for r in self.receivers)
        )
        if len(self.receivers) < 1:
            raise ValueError("need at least one receiver")
        if not np.isfinite(self.pointing_angle) or abs(self.pointing_angle) >= np.pi / 2:
            raise ValueError("pointing angle must satisfy |theta_p| < pi/2")
        face = self.transmitter[0]
        for r in self.receivers:
            if abs(r[0] - face) > 1e-12:
                raise ValueError("receivers must lie on the transmitter face (same depth)")
        if not self.embedding_speed > 0:
            raise ValueError("embedding speed must be > 0")
        if self.embedding_attenuation < 0:
            raise ValueError("embedding attenuation must be >= 0")

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def receiver_heights(self) -> np.ndarray:
        return np.array([r[1] for r in self.receivers])

    @property
    def reference_point(self) -> np.ndarray:
        """Midpoint between transmitter and the receiver-array center."""
        rx = np.mean(np.asarray(self.receivers), axis=0)
        return 0.5 * (np.asarray(self.transmitter) + rx)

    @classmethod
    def linear_array(cls, transmitter_height, pointing_angle, first_height, spacing,
                     count, embedding_speed, embedding_attenuation=0.0, center_offset=0.0):
        heights = first_height + spacing * np.arange(count)
        return cls(
            transmitter=(0.0, transmitter_height),
            pointing_angle=pointing_angle,
            receivers=tuple((0.0, float(h)) for h in heights),
            embedding_speed=embedding_speed,
            embedding_attenuation=embedding_attenuation,
            center_offset=center_offset,
        )


@dataclass(frozen=True)
class ImageGrid:
    """Reconstruction grid.  ``origin`` is the (depth, height) corner of voxel 0."""

    rows: int
    cols: int
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one voxel")
        if not self.pitch > 0:
            raise ValueError("pitch must be > 0")

    @property
    def n_voxels(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def fov(self) -> tuple[float, float]:
        """(height, depth) extent in meters."""
        return (self.rows * self.pitch, self.cols * self.pitch)

    @property
    def depth_extent(self) -> tuple[float, float]:
        return (self.origin[0], self.origin[0] + self.cols * self.pitch)

    @property
    def depths(self) -> np.ndarray:
        """Depth of each column center."""
        return self.origin[0] + (np.arange(self.cols) + 0.5) * self.pitch

    @property
    def heights(self) -> np.ndarray:
        """Height of each row center."""
        return self.origin[1] + (np.arange(self.rows) + 0.5) * self.pitch

    def centers(self) -> np.ndarray:
        """(N, 2) array of voxel centers in index order."""
        dd, hh = np.meshgrid(self.depths, self.heights)
        return np.stack([dd.ravel(), hh.ravel()], axis=1)

    def refined(self, factor: int) -> "ImageGrid":
        return ImageGrid(self.rows * factor, self.cols * factor, self.pitch / factor, self.origin)

    def nearest_voxel(self, point) -> int:
        depth, height = point
        col = int(np.floor((depth - self.origin[0]) / self.pitch))
        row = int(np.floor((height - self.origin[1]) / self.pitch))
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"point {point} outside grid")
        return row * self.cols + col

    def column_of_depth(self, depth: float) -> int:
        col = int(np.floor((depth - self.origin[0]) / self.pitch))
        if not 0 <= col < self.cols:
            raise ValueError(f"depth {depth} outside grid")
        return col

    def row_of_height(self, height: float) -> int:
        row = int(np.floor((height - self.origin[1]) / self.pitch))
        if not 0 <= row < self.rows:
            raise ValueError(f"height {height} outside grid")
        return row


def voxel_center(grid: ImageGrid, v: int) -> np.ndarray:
    if not 0 <= v < grid.n_voxels:
        raise IndexError(f"voxel index {v} out of range [0, {grid.n_voxels})")
    row, col = divmod(int(v), grid.cols)
    return np.array([
        grid.origin[0] + (col + 0.5) * grid.pitch,
        grid.origin[1] + (row + 0.5) * grid.pitch,
    ])


def check_medium_covers_grid(medium: LayeredMedium, grid: ImageGrid) -> None:
    """The medium must reach the far edge of the grid (to within one pitch)."""
    far = grid.depth_extent[1]
    if abs(medium.total_depth - far) > grid.pitch + 1e-12:
        raise ValueError(
            f"layer thicknesses sum to {medium.total_depth:.6g} m but grid far edge is "
            f"{far:.6g} m (tolerance one pitch, {grid.pitch:g} m)"
        )
    if grid.origin[0] < 0:
        raise ValueError("grid starts in front of the transducer face")


TABLE_I_MEDIUM = LayeredMedium((
    Layer(0.073, 1500.0, 0.0, 997.0 * 1500.0, "water"),
    Layer(0.006, 2800.0, 0.0, 1180.0 * 2800.0, "plexiglas"),
    Layer(0.12, 2620.0, 0.0, 1970.0 * 2620.0, "concrete"),
))
