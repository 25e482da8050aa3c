import numpy as np
import pytest
from hypothesis import given, strategies as st

from umbir.media import ArrayGeometry, ImageGrid, Layer, LayeredMedium
from umbir.pulse import KernelBank, PulseSpec, make_pulse
from umbir.raypath import DelayTable, delay_table
from umbir.system import (BeamParams, RunMatrix, amplitude_table, apodization, build_A, build_D,
                          build_system, load_system, save_system, stack_multifrequency,
                          transmission_factor)


def adjoint_gap(M, rng):
    x = rng.standard_normal(M.shape[1])
    y = rng.standard_normal(M.shape[0])
    lhs = float(M.matvec(x) @ y)
    rhs = float(x @ M.rmatvec(y))
    return abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y))


def one_voxel_table(T, gamma=0.0, lam=1.0):
    return DelayTable(np.array([[T]]), np.array([[gamma]]), np.zeros(1), np.zeros((1, 1)),
                      np.ones((1, 1), bool), np.ones(1, int)).with_lambda([[lam]])


def test_apodization_examples():
    beam = BeamParams(8.0, 0.3)
    assert apodization(0.3, 0.0, beam) == pytest.approx(1.0)
    assert apodization(0.3, np.pi / 2, beam) == pytest.approx(0.0, abs=1e-30)
    assert apodization(0.3 + 2.0, 0.0, beam) == 0.0          # back lobe clamped
    assert apodization(0.3 + 0.2, 0.1, beam) == pytest.approx(np.cos(0.2) ** 8 * np.cos(0.1) ** 2)


def test_transmission_examples():
    single = LayeredMedium((Layer(0.1, 1500, 0, 1.5e6),))
    assert transmission_factor(single) == 1.0
    matched = LayeredMedium((Layer(0.1, 1500, 0, 2e6), Layer(0.1, 2500, 0, 2e6)))
    assert transmission_factor(matched) == pytest.approx(1.0)
    z1, z2 = 997 * 1500.0, 1970 * 2620.0
    wc = LayeredMedium((Layer(0.1, 1500, 0, z1), Layer(0.1, 2620, 0, z2)))
    assert transmission_factor(wc) == pytest.approx(2 * z2 / (z1 + z2) * 2 * z1 / (z1 + z2))
    assert transmission_factor(wc, 1.0, n_layers=1) == 1.0


def test_single_voxel_column_is_scaled_pulse():
    spec = PulseSpec(100e3, 40e-6, 2e6, 200, record_start=1e-5)
    bank = KernelBank(spec)
    T = spec.record_start + 37 / spec.fs
    A = build_A(one_voxel_table(T, lam=0.7), spec, None, BeamParams(), bank)
    col = A.column(0)
    s = make_pulse(spec)[: bank.n_taps]           # window keeps the first n_taps samples
    assert np.allclose(col[37:37 + len(s)], 0.7 * s, atol=1e-6)
    assert np.allclose(col[:37], 0.0)
    assert np.allclose(col[37 + len(s):], 0.0, atol=1e-6)


def test_arrival_before_record_is_empty():
    spec = PulseSpec(100e3, 40e-6, 2e6, 200, record_start=1e-3)
    A = build_A(one_voxel_table(1e-5), spec, None, BeamParams())
    assert A.nnz == 0


def test_adjoint_small(small_medium, small_geometry, small_grid, small_spec, small_beam, rng):
    sys_ = build_system(small_medium, small_geometry, small_grid, small_spec, small_beam)
    assert adjoint_gap(sys_.A, rng) <= 1e-9
    assert adjoint_gap(sys_.D, rng) <= 1e-9
    dense = sys_.A.to_dense()
    x = rng.standard_normal(sys_.N)
    y = rng.standard_normal(sys_.A.n_rows)
    assert np.allclose(sys_.A.matvec(x), dense @ x)
    assert np.allclose(sys_.A.rmatvec(y), dense.T @ y)
    assert np.allclose(sys_.A.to_scipy().toarray(), dense)


def test_column_structure(small_medium, small_geometry, small_grid, small_spec, small_beam):
    sys_ = build_system(small_medium, small_geometry, small_grid, small_spec, small_beam)
    A = sys_.A
    n_taps = KernelBank(small_spec).n_taps
    assert np.all(A.length <= n_taps + 1)
    assert np.all(np.isfinite(A.values))
    M = small_spec.record_length
    for j in range(A.n_runs):
        used = A.length[:, j] > 0
        assert np.all(A.start[used, j] >= j * M)
        assert np.all(A.start[used, j] + A.length[used, j] <= (j + 1) * M)


def test_lambda_bounds(small_medium, small_geometry, small_grid, small_beam):
    tab = delay_table(small_medium, small_geometry, small_grid)
    lam = amplitude_table(small_medium, tab, small_beam)
    assert np.all(lam >= 0)
    assert np.all(lam <= transmission_factor(small_medium) + 1e-15)
    assert np.all(lam[~tab.reachable] == 0)


def test_D_examples(small_spec):
    geom = ArrayGeometry((0.0, 0.0), 0.0, ((0.0, 0.0), (0.0, 0.02)), 1500.0)
    bank = KernelBank(small_spec)
    D = build_D(geom, small_spec, bank)
    s = make_pulse(small_spec)[: bank.n_taps]
    assert np.allclose(D.column(0)[: len(s)], s, atol=1e-6)   # zero distance: undelayed kernel
    geom15 = ArrayGeometry.linear_array(0.0, 0.0, 0.05, 0.025, 15, 1500.0)
    D15 = build_D(geom15, PulseSpec(29e3, 200e-6, 2e6, 1000))
    assert D15.shape == (15000, 15)
    for j in range(15):
        col = D15.column(j)
        nz = np.flatnonzero(col)
        assert nz.min() >= j * 1000 and nz.max() < (j + 1) * 1000


def test_D_least_squares_recovers_g(small_geometry, small_spec, rng):
    D = build_D(small_geometry, small_spec)
    g = rng.standard_normal(D.shape[1])
    dense = D.to_dense()
    est, *_ = np.linalg.lstsq(dense, D.matvec(g), rcond=None)
    assert np.allclose(est, g, rtol=1e-6, atol=1e-9)


def test_stack_examples(small_medium, small_geometry, small_grid, small_beam, rng):
    specs = [PulseSpec(f, 40e-6, 2e6, 300) for f in (80e3, 100e3, 120e3)]
    tab = delay_table(small_medium, small_geometry, small_grid)
    systems = [build_system(small_medium, small_geometry, small_grid, s, small_beam, tab) for s in specs]
    one = stack_multifrequency(systems[:1])
    x = rng.standard_normal(systems[0].N)
    assert np.array_equal(one.A.matvec(x), systems[0].A.matvec(x))
    mf, y = stack_multifrequency(systems, [np.ones(s.A.n_rows) * k for k, s in enumerate(systems)])
    assert mf.A.shape == (3 * 4 * 300, small_grid.n_voxels)
    assert mf.D.shape == (3 * 4 * 300, 12)
    assert np.allclose(mf.A.matvec(x), np.concatenate([s.A.matvec(x) for s in systems]))
    assert np.array_equal(mf.block(2, y), np.full(1200, 2.0))
    assert adjoint_gap(mf.A, rng) <= 1e-9 and adjoint_gap(mf.D, rng) <= 1e-9
    with pytest.raises(ValueError):
        stack_multifrequency(systems, [np.ones(3)] * 3)


def test_receiver_permutation_keeps_gram(small_medium, small_grid, small_spec, small_beam):
    heights = [0.01, 0.02, 0.035]
    g1 = ArrayGeometry((0.0, 0.02), 0.1, tuple((0.0, h) for h in heights), 1500.0)
    g2 = ArrayGeometry((0.0, 0.02), 0.1, tuple((0.0, h) for h in heights[::-1]), 1500.0)
    A1 = build_system(small_medium, g1, small_grid, small_spec, small_beam).A.to_dense()
    A2 = build_system(small_medium, g2, small_grid, small_spec, small_beam).A.to_dense()
    M = small_spec.record_length
    perm = np.concatenate([np.arange(j * M, (j + 1) * M) for j in (2, 1, 0)])
    assert np.allclose(A1[perm], A2, atol=1e-7)
    assert np.allclose(A1.T @ A1, A2.T @ A2, rtol=1e-5, atol=1e-6)


def test_system_cache_round_trip(tmp_path, small_medium, small_geometry, small_grid, small_beam):
    specs = [PulseSpec(f, 40e-6, 2e6, 300) for f in (80e3, 120e3)]
    tab = delay_table(small_medium, small_geometry, small_grid)
    mf = stack_multifrequency([build_system(small_medium, small_geometry, small_grid, s, small_beam, tab)
                               for s in specs])
    path = tmp_path / "sys.umbr"
    save_system(path, mf)
    back = load_system(path, specs)
    for a, b in ((mf.A, back.A), (mf.D, back.D)):
        assert np.array_equal(a.to_dense(), b.to_dense())
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_system(path, specs)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_runmatrix_adjoint_property(n_cols, n_runs, seed):
    rng = np.random.default_rng(seed)
    n_rows = 50
    # runs of one column never overlap
    start = np.arange(n_runs)[None, :] * 10 + rng.integers(0, 5, (n_cols, n_runs))
    length = rng.integers(0, 6, (n_cols, n_runs))
    ptr = np.zeros(n_cols * n_runs, dtype=np.int64)
    np.cumsum(length.ravel()[:-1], out=ptr[1:])
    values = rng.standard_normal(int(length.sum()))
    M = RunMatrix(n_rows, start, length, ptr.reshape(n_cols, n_runs), values)
    assert adjoint_gap(M, rng) <= 1e-9
    dense = M.to_dense()
    assert np.allclose(M.column_norms2(), (dense ** 2).sum(axis=0))
