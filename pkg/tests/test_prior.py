import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import qggmrf_rho
from umbir.media import ArrayGeometry, ImageGrid
from umbir.prior import (QggmrfParams, clique_table, eight_neighborhood, prior_cost, rho,
                         rho_prime, surrogate_coeff, variance_field)

ps = st.floats(1.01, 1.99)
Ts = st.floats(1e-3, 10.0)
sigmas = st.floats(1e-2, 10.0)
deltas = st.floats(-50.0, 50.0)


def test_param_validation():
    with pytest.raises(ValueError):
        QggmrfParams(p=1.0)
    with pytest.raises(ValueError):
        QggmrfParams(q=1.5)
    with pytest.raises(ValueError):
        QggmrfParams(T=0.0)
    with pytest.raises(ValueError):
        QggmrfParams(neighborhood=(((0, 1), 0.5),))


def test_rho_basic():
    P = QggmrfParams()
    assert rho(0.0, 1.0, P) == 0.0
    d = np.random.default_rng(0).standard_normal(100) * 3
    assert np.array_equal(rho(d, 0.7, P), rho(-d, 0.7, P))


@given(deltas, sigmas, ps, Ts)
def test_rho_matches_definition(d, s, p, T):
    P = QggmrfParams(p=p, T=T)
    assert float(rho(d, s, P)) == pytest.approx(float(qggmrf_rho(d, s, p, 2.0, T)), rel=1e-10, abs=1e-300)


def test_rho_large_delta_asymptote():
    for p in (1.1, 1.5, 1.9):
        P = QggmrfParams(p=p, T=0.01)
        s = 0.5
        d = P.T * s * 100 ** (1 / (2 - p)) * 1.01    # |d/(T s)|^(q-p) > 99
        assert rho(d, s, P) == pytest.approx(d ** p / (p * s ** p), rel=0.01)


@pytest.mark.parametrize("p", [1.1, 1.5, 1.9])
def test_convexity(p):
    P = QggmrfParams(p=p, T=0.5)
    d = np.linspace(-5, 5, 20001)
    r = rho(d, 1.0, P)
    assert np.min(r[:-2] - 2 * r[1:-1] + r[2:]) >= -1e-12


@given(deltas, sigmas, ps, Ts)
def test_rho_prime_finite_difference(d, s, p, T):
    P = QggmrfParams(p=p, T=T)
    h = 1e-6 * max(1.0, abs(d))
    fd = (rho(d + h, s, P) - rho(d - h, s, P)) / (2 * h)
    an = rho_prime(d, s, P)
    assert abs(an - fd) <= 1e-6 * max(abs(an), abs(fd)) + 1e-9 * float(rho(max(abs(d), h), s, P)) / h


def test_rho_prime_odd_and_signed():
    P = QggmrfParams()
    assert rho_prime(0.0, 1.0, P) == 0.0
    d = np.linspace(-3, 3, 61)
    assert np.allclose(rho_prime(d, 0.4, P), -rho_prime(-d, 0.4, P))
    assert np.all(np.sign(rho_prime(d, 0.4, P)) == np.sign(d))


def test_quadratic_limit_coefficient():
    # p = q = 2 is outside the admissible range, so evaluate the formula directly:
    # rho = d^2 / (4 s^2) for T -> inf and the bound curvature is rho'/(2d) = 1/(4 s^2)
    P = QggmrfParams(p=1.999999, T=1e6)
    s = 0.3
    assert surrogate_coeff(0.7, s, P) == pytest.approx(1 / (4 * s ** 2), rel=1e-4)
    assert rho(0.7, s, P) == pytest.approx(0.7 ** 2 / (4 * s ** 2), rel=1e-4)


@given(st.lists(st.tuples(deltas, deltas), min_size=1, max_size=20), sigmas, ps, Ts)
def test_majorization(pairs, s, p, T):
    P = QggmrfParams(p=p, T=T)
    for D, d in pairs:
        bound = surrogate_coeff(D, s, P) * (d - D) ** 2 + rho(D, s, P) + rho_prime(D, s, P) * (d - D)
        target = rho(d, s, P)
        assert bound >= target - 1e-12 * max(1.0, abs(target))


def test_majorization_thousand_draws():
    rng = np.random.default_rng(7)
    D = rng.normal(0, 3, 1000)
    d = rng.normal(0, 3, 1000)
    P = QggmrfParams(p=1.1, T=0.01)
    s = 0.8
    bound = surrogate_coeff(D, s, P) * (d - D) ** 2 + rho(D, s, P) + rho_prime(D, s, P) * (d - D)
    assert np.all(bound >= rho(d, s, P) - 1e-12 * np.maximum(1, rho(d, s, P)))


@given(deltas, sigmas, ps, Ts)
def test_surrogate_tangency_and_positive(D, s, p, T):
    P = QggmrfParams(p=p, T=T)
    assert surrogate_coeff(D, s, P) > 0
    # symmetric bound b (d^2 - D^2) + rho(D) also majorizes and touches at d = D
    h = 1e-6 * max(1.0, abs(D))
    q = lambda d: surrogate_coeff(D, s, P) * (d * d - D * D) + rho(D, s, P)
    assert q(D) == pytest.approx(float(rho(D, s, P)), rel=1e-12, abs=1e-300)
    assert (q(D + h) - q(D - h)) / (2 * h) == pytest.approx(float(rho_prime(D, s, P)), rel=1e-5, abs=1e-9)


def test_surrogate_continuous_at_zero():
    P = QggmrfParams(p=1.3, T=0.2)
    c0 = surrogate_coeff(0.0, 1.0, P)
    for d in (1e-8, -1e-8):
        assert surrogate_coeff(d, 1.0, P) == pytest.approx(c0, rel=1e-4)


@given(st.floats(0.01, 5.0), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_rho_decreasing_in_sigma(d, s1, s2):
    P = QggmrfParams(p=1.1, T=0.01)
    if abs(s1 - s2) < 1e-9:
        return
    lo, hi = sorted((s1, s2))
    assert rho(d, lo, P) > rho(d, hi, P)


def test_neighborhood_weights():
    nb = eight_neighborhood()
    w = np.array([b for _, b in nb])
    assert w.sum() == pytest.approx(1.0)
    assert w[1] / w[0] == pytest.approx(np.sqrt(2))


def geom_at(h):
    return ArrayGeometry((0.0, h), 0.0, ((0.0, h),), 1500.0)


def test_variance_field_examples():
    grid = ImageGrid(1, 101, 0.01)
    vf = variance_field(grid, geom_at(0.005), 1.0, 2.0, 0.5)
    assert np.all(vf.nu_s == 1.0)
    vf = variance_field(grid, geom_at(0.005), 10.0, 2.0, 0.5)
    assert vf.nu_s[0, -1] == pytest.approx(10.0)
    assert np.all(np.diff(vf.nu_s[0]) > 0)
    # centers at distance 0, 1, 2 from the reference point: the middle one is at half range
    g3 = ImageGrid(1, 3, 1.0, (-0.5, 0.0))
    assert variance_field(g3, geom_at(0.5), 10.0, 2.0).nu_s[0, 1] == pytest.approx(3.25)
    assert vf.clique_sigma(0, 1) == pytest.approx(0.5 * np.sqrt(vf.nu_s[0, 0] * vf.nu_s[0, 1]))


def test_clique_table_and_cost():
    grid = ImageGrid(3, 4, 0.01)
    P = QggmrfParams(p=1.2, T=0.3, sigma0=0.7, nu=1.0)
    vf = variance_field(grid, geom_at(0.0), 1.0, 1.0, 0.7)
    ct = clique_table(grid, P, vf)
    assert (ct.nbr[0] >= 0).sum() == 3                 # corner voxel
    assert (ct.nbr[5] >= 0).sum() == 8                 # interior voxel
    s, r, b, sig = ct.pairs()
    assert len(s) == (2 * 4 * 3 - 3 - 4) + 2 * 2 * 3   # straight plus diagonal cliques
    x = np.random.default_rng(1).standard_normal(12)
    ref = sum(bb * qggmrf_rho(x[a] - x[c], ss, 1.2, 2.0, 0.3) for a, c, bb, ss in zip(s, r, b, sig))
    assert prior_cost(x, ct, P) == pytest.approx(ref, rel=1e-12)
    assert prior_cost(np.full(12, 3.3), ct, P) == 0.0
