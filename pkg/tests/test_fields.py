import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbpls.fields import (
    Field3,
    Grid3,
    LeakageError,
    bp_multiplier,
    convolve_bp,
    convolve_coulomb,
    dual_norm,
    inner_h1f,
    inner_l2,
    minus_laplacian,
    quad,
    read_snapshot,
    spectral_derivative,
    write_snapshot,
)
from sbpls.oracles import (
    bp_of_gaussian,
    coulomb_of_gaussian,
    direct_convolution,
    gaussian_source,
    smooth_random_field,
)


def gaussian(grid, s=0.8):
    x, y, z = grid.offsets()
    return Field3(grid, np.exp(-(x**2 + y**2 + z**2) / (2 * s * s)))


def test_grid_geometry():
    g = Grid3((1.0, -2.0, 0.5), 4.0, 32)
    assert g.h == pytest.approx(0.25)
    assert g.shape == (32, 32, 32)
    assert g.axis.min() == pytest.approx(-4.0)
    pts = g.scaled_points(0.5)
    assert pts.shape == (32, 32, 32, 3)
    assert np.allclose(pts[16, 16, 16], [0.5, -1.0, 0.25])


def test_laplacian_of_gaussian():
    # wide enough that the periodic images are below 1e-15
    g = Grid3((0.0, 0.0, 0.0), 8.0, 64)
    s = 0.9
    u = gaussian(g, s)
    x, y, z = g.offsets()
    r2 = x**2 + y**2 + z**2
    exact = (3 / s**2 - r2 / s**4) * u.values
    assert np.max(np.abs(minus_laplacian(u).values - exact)) < 1e-8


def test_derivative_of_gaussian():
    g = Grid3((0.0, 0.0, 0.0), 6.0, 64)
    u = gaussian(g)
    x, _, _ = g.offsets()
    d = spectral_derivative(u, 0).values
    assert np.max(np.abs(d + x / 0.64 * u.values)) < 1e-8


@given(seed=st.integers(0, 2**31 - 1))
def test_h1_inner_symmetric_positive(grid32, seed):
    rng = np.random.default_rng(seed)
    a, b = smooth_random_field(grid32, rng), smooth_random_field(grid32, rng)
    assert inner_h1f(a, b) == pytest.approx(inner_h1f(b, a), rel=1e-12)
    assert inner_h1f(a, a) > inner_l2(a, a) > 0


@given(seed=st.integers(0, 2**31 - 1))
def test_dual_norm_cauchy_schwarz(grid32, seed):
    rng = np.random.default_rng(seed)
    r, w = smooth_random_field(grid32, rng), smooth_random_field(grid32, rng)
    assert abs(quad(r * w)) <= dual_norm(r) * np.sqrt(inner_h1f(w, w)) * (1 + 1e-10)


def test_leakage_detected(grid32):
    g = Grid3((0.0, 0.0, 0.0), 4.0, 16)
    wide = gaussian(g, 2.0)
    with pytest.raises(LeakageError):
        wide.check()


def test_bp_matches_direct_sum():
    g = Grid3((0.0, 0.0, 0.0), 6.0, 16)
    f = gaussian_source(g, 0.7)
    for eps in (1.0, 0.3):
        a, b = convolve_bp(f, eps).values, direct_convolution(f, "bp", eps).values
        assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-12


def test_coulomb_matches_direct_sum():
    g = Grid3((0.0, 0.0, 0.0), 6.0, 16)
    f = gaussian_source(g, 0.7)
    a, b = convolve_coulomb(f).values, direct_convolution(f, "coulomb").values
    assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-12


def test_far_field():
    g = Grid3((0.0, 0.0, 0.0), 8.0, 64)
    f = gaussian_source(g, 0.25)
    phi = convolve_bp(f, 1.0)
    c = g.n // 2
    for r in (3.0, 5.0):
        i = c + int(round(r / g.h))
        assert phi.values[i, c, c] == pytest.approx(float(bp_of_gaussian(r, 0.25)), rel=1e-2)
    coul = convolve_coulomb(f)
    i = c + int(round(5.0 / g.h))
    assert coul.values[i, c, c] == pytest.approx(float(coulomb_of_gaussian(5.0, 0.25)), rel=1e-2)


@given(k=st.floats(1e-3, 50.0), eps=st.floats(0.01, 1.0))
def test_bp_multiplier_dominated_by_coulomb(k, eps):
    # kappa(eps x) <= 1 / (eps |x|), and the transforms keep that order
    m = float(bp_multiplier(np.array(k * k), eps))
    assert 0 < m <= 4 * np.pi / (eps * k * k) * (1 + 1e-12)


def test_bp_multiplier_monotone():
    k2 = np.linspace(0.01, 100, 500)
    assert np.all(np.diff(bp_multiplier(k2, 0.5)) < 0)


def test_snapshot_roundtrip(tmp_path, grid32, rng):
    f = smooth_random_field(grid32, rng)
    path = tmp_path / "u.bin"
    write_snapshot(f, path, label="probe")
    g, label = read_snapshot(path)
    assert label == "probe"
    assert g.grid == f.grid
    np.testing.assert_array_equal(g.values, f.values)


def test_field_arithmetic_grid_mismatch(grid32):
    a = grid32.zeros()
    b = Grid3((1.0, 0.0, 0.0), 8.0, 32).zeros()
    with pytest.raises(ValueError):
        a + b
    assert np.all((2.0 * a + 1.0).values == 1.0)


@given(s=st.floats(0.2, 2.0), eps=st.floats(0.1, 2.0))
def test_bp_of_gaussian_is_continuous_at_origin(s, eps):
    vals = bp_of_gaussian(np.array([0.0, 1e-5]), s, eps)
    assert np.all(np.isfinite(vals))
    assert vals[0] == pytest.approx(vals[1], rel=1e-6)
