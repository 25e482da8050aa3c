import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from umbir.io import (FormatError, atomic_write, read_image, read_measurements, sidecar_path, to_gray,
                      write_image, write_measurements, write_pgm, write_ppm)
from umbir.media import ImageGrid
from umbir.pulse import PulseSpec

SPECS = [PulseSpec(29e3, 200e-6, 2e6, 50), PulseSpec(58e3, 50e-6, 2e6, 30)]


def traces(rng, K=3, specs=SPECS):
    return [rng.standard_normal((K, s.record_length)).astype(np.float32) for s in specs]


def test_measurement_round_trip(tmp_path, rng):
    tr = traces(rng)
    path = tmp_path / "m.umbm"
    write_measurements(path, SPECS, tr)
    back = read_measurements(path)
    assert back.S == 2 and back.K == 3
    for a, b in zip(tr, back.traces):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(SPECS, back.specs):
        assert a == b
    raw = path.read_bytes()
    assert raw[:4] == b"UMBM"
    assert len(raw) - raw.index(tr[0].tobytes()) == 4 * 3 * (50 + 30)


@settings(max_examples=25)
@given(st.integers(1, 5), st.lists(st.integers(1, 40), min_size=1, max_size=4), st.integers(0, 2 ** 31))
def test_measurement_round_trip_property(tmp_path_factory, K, lengths, seed):
    rng = np.random.default_rng(seed)
    specs = [PulseSpec(30e3 + 1e3 * i, 50e-6, 1e6, M) for i, M in enumerate(lengths)]
    tr = traces(rng, K, specs)
    path = tmp_path_factory.mktemp("m") / "x.umbm"
    write_measurements(path, specs, tr)
    back = read_measurements(path)
    assert all(np.array_equal(a, b) for a, b in zip(tr, back.traces))


def test_measurement_layout_little_endian(tmp_path):
    tr = [np.arange(100, dtype=np.float32).reshape(2, 50), np.zeros((2, 30), np.float32)]
    path = tmp_path / "m.umbm"
    write_measurements(path, SPECS, tr)
    raw = path.read_bytes()
    payload = raw[len(raw) - 4 * 160:]
    assert struct.unpack("<3f", payload[:12]) == (0.0, 1.0, 2.0)
    assert struct.unpack_from("<f", payload, 4 * 50)[0] == 50.0     # receiver 1 follows receiver 0


@pytest.mark.parametrize("where", ["header", "payload"])
def test_checksum_detects_corruption(tmp_path, rng, where):
    path = tmp_path / "m.umbm"
    write_measurements(path, SPECS, traces(rng))
    raw = bytearray(path.read_bytes())
    raw[12 if where == "header" else -5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="checksum"):
        read_measurements(path)


def test_bad_files(tmp_path, rng):
    path = tmp_path / "m.umbm"
    path.write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_measurements(path)
    write_measurements(path, SPECS, traces(rng))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_measurements(path)
    with pytest.raises(ValueError):
        write_measurements(tmp_path / "x", SPECS, traces(rng)[:1])
    with pytest.raises(ValueError):
        write_measurements(tmp_path / "x", SPECS, [np.zeros((3, 49)), np.zeros((3, 30))])
    mixed = [SPECS[0], PulseSpec(58e3, 50e-6, 4e6, 30)]
    with pytest.raises(ValueError):
        write_measurements(tmp_path / "x", mixed, traces(rng))


def test_image_round_trip(tmp_path, rng):
    grid = ImageGrid(7, 5, 0.003, (0.06, -0.01))
    img = rng.standard_normal(grid.shape).astype(np.float32)
    path = tmp_path / "a.umbi"
    write_image(path, grid, img, {"profile": "cc-kwave", "cost_history": np.arange(3.0)})
    back = read_image(path)
    assert back.grid == grid
    assert back.raster.tobytes() == img.tobytes()
    assert back.meta == {"profile": "cc-kwave", "cost_history": [0.0, 1.0, 2.0]}
    assert json.loads(sidecar_path(path).read_text())["profile"] == "cc-kwave"
    with pytest.raises(ValueError):
        write_image(path, grid, img[:3])


def test_image_truncated(tmp_path):
    grid = ImageGrid(3, 3, 0.01)
    path = tmp_path / "a.umbi"
    write_image(path, grid, np.ones(grid.shape))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_image(path)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    path = tmp_path / "out.bin"
    with pytest.raises(RuntimeError):
        with atomic_write(path) as f:
            f.write(b"partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
    path.write_bytes(b"old")
    with pytest.raises(RuntimeError):
        with atomic_write(path) as f:
            f.write(b"new")
            raise RuntimeError("boom")
    assert path.read_bytes() == b"old" and len(list(tmp_path.iterdir())) == 1


def test_gray_mapping():
    g = to_gray(np.array([[-2.0, 0.0, 2.0]]))
    assert g.tolist() == [[0, 128, 255]]
    assert to_gray(np.array([[1.0, 3.0]]), signed=False).tolist() == [[0, 255]]
    assert np.all(to_gray(np.zeros((2, 2))) == 128)


def test_pgm_ppm(tmp_path, rng):
    img = rng.standard_normal((4, 6))
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n6 4\n255\n") and len(raw) == len(b"P5\n6 4\n255\n") + 24
    write_ppm(tmp_path / "a.ppm", img)
    raw = (tmp_path / "a.ppm").read_bytes()
    assert raw.startswith(b"P6\n6 4\n255\n") and len(raw) == len(b"P6\n6 4\n255\n") + 72
