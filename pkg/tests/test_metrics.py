import numpy as np
import pytest

from umbir.media import ImageGrid
from umbir.metrics import artifact_energy, band_wall_depth, metrics, true_wall_columns, wall_columns

GRID = ImageGrid(20, 15, 0.003, (0.06, 0.0))


def wall(cols):
    x = np.zeros(GRID.shape)
    x[np.arange(GRID.rows), cols] = 1.0
    return x


def test_identity():
    x = wall(np.full(20, 7))
    r = metrics(x, x, GRID)
    assert r.localization_error == 0 and r.rmse == 0
    assert r.frac_within_1 == 1.0 and r.artifact_energy == 0.0
    assert r.wall_depth == r.true_wall_depth == pytest.approx(GRID.depths[7])


def test_zero_image_rmse(rng):
    x = rng.standard_normal(GRID.shape)
    r = metrics(np.zeros(GRID.shape), x, GRID)
    assert r.rmse == pytest.approx(np.linalg.norm(x) / np.sqrt(GRID.n_voxels))
    assert r.artifact_energy == 0.0


def test_offsets_counted():
    x = wall(np.full(20, 7))
    img = wall(np.r_[np.full(10, 7), np.full(5, 8), np.full(5, 10)])
    r = metrics(img, x, GRID)
    assert r.localization_error == pytest.approx((5 * 1 + 5 * 3) / 20)
    assert r.frac_within_1 == 0.75 and r.frac_within_2 == 0.75
    assert r.median_error == pytest.approx(0.5)


def test_signed_vs_magnitude():
    x = wall(np.full(20, 7))
    img = 0.5 * x
    img[:, 2] = -1.0
    assert metrics(img, x, GRID).frac_within_1 == 1.0
    assert metrics(img, x, GRID, signed=False).frac_within_1 == 0.0


def test_artifact_energy_dilation():
    x = wall(np.full(20, 7))
    img = x.copy()
    img[:, 9] = 1.0                 # two columns away: inside the dilated support
    assert artifact_energy(img, x, 2) == 0.0
    assert artifact_energy(img, x, 1) == pytest.approx(0.5)
    img[:, 0] = 1.0
    assert artifact_energy(img, x, 2) == pytest.approx(1 / 3)


def test_helpers():
    x = wall(np.full(20, 4))
    x[3] = 0
    t = true_wall_columns(x)
    assert t[3] == -1 and t[0] == 4
    assert np.all(wall_columns(x)[t >= 0] == 4)
    assert band_wall_depth(x, GRID, rows=np.arange(5, 10)) == pytest.approx(GRID.depths[4])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        metrics(np.zeros((3, 3)), np.zeros(GRID.shape), GRID)
