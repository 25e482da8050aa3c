import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from umbir.media import ImageGrid
from umbir.panorama import PanoramaSpec, extract_profiles, ridge_radius, stitch_panorama

GRID = ImageGrid(40, 30, 0.003, (0.06, 0.0))


def wall_image(col, rows=GRID.rows):
    x = np.zeros(GRID.shape)
    x[:rows, col] = 1.0
    return x


def test_spec_validation():
    with pytest.raises(ValueError):
        PanoramaSpec((10.0, 5.0), 0.05)
    with pytest.raises(ValueError):
        PanoramaSpec((), 0.05)
    with pytest.raises(ValueError):
        PanoramaSpec((0.0,), 0.05, "cubic")


def test_errors():
    with pytest.raises(ValueError):
        stitch_panorama([wall_image(5)], GRID, PanoramaSpec((0.0,), 0.5))
    with pytest.raises(ValueError):
        stitch_panorama([wall_image(5)] * 2, GRID, PanoramaSpec((0.0,), 0.05))
    with pytest.raises(ValueError):
        extract_profiles([np.zeros((3, 3))], GRID, 0.05)


def test_single_view_is_one_spoke():
    img = np.zeros(GRID.shape)
    r = GRID.row_of_height(0.05)
    img[r] = np.arange(1, GRID.cols + 1)
    pan = stitch_panorama([img], GRID, PanoramaSpec((30.0,), 0.05))
    X, Y = pan.coordinates()
    ang = np.degrees(np.arctan2(Y[pan.mask], X[pan.mask])) % 360
    assert pan.mask.sum() >= GRID.cols
    assert np.all(np.abs(ang - 30.0) < 10.0)
    assert np.all(pan.raster[~pan.mask] == 0)
    assert set(np.unique(pan.raster[pan.mask])) <= set(img[r])


@pytest.mark.parametrize("interp", ["nearest", "linear"])
def test_constant_depth_wall_is_circle(interp):
    col = 18
    angles = tuple(np.linspace(0.0, 360.0, 24, endpoint=False))
    pan = stitch_panorama([wall_image(col)] * 24, GRID, PanoramaSpec(angles, 0.05, interp), 0.02)
    radii = ridge_radius(pan, 72)
    assert np.all(np.abs(radii - (0.02 + GRID.depths[col])) <= GRID.pitch)


def test_half_turn_covers_upper_half():
    angles = tuple(np.linspace(0.0, 180.0, 37))
    pan = stitch_panorama([wall_image(10)] * 37, GRID, PanoramaSpec(angles, 0.05))
    X, Y = pan.coordinates()
    assert np.all(Y[pan.mask] >= -GRID.pitch)
    assert np.isnan(ridge_radius(pan, 8, (225.0, 315.0))).all()


@settings(max_examples=20)
@given(st.lists(st.floats(-5.0, 5.0), min_size=GRID.cols, max_size=GRID.cols), st.integers(2, 12))
def test_values_conserved(profile, n_views):
    """Stitched values are the extracted samples or blends between spokes, never new radial values."""
    img = np.zeros(GRID.shape)
    img[GRID.row_of_height(0.05)] = profile
    angles = tuple(np.linspace(0.0, 180.0, n_views))
    pan = stitch_panorama([img] * n_views, GRID, PanoramaSpec(angles, 0.05, "nearest"))
    assert set(np.unique(pan.raster[pan.mask])) <= set(np.asarray(profile, dtype=float))
    lin = stitch_panorama([img] * n_views, GRID, PanoramaSpec(angles, 0.05, "linear"))
    assert np.allclose(lin.raster, pan.raster)   # identical spokes: blending changes nothing
