import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbpls.ground_state import (
    constants,
    read_profile,
    rescale,
    solve_ground_state,
    theta_exponent,
    write_profile,
)
from sbpls.oracles import shooting_oracle_u0


def test_p3_profile_value_at_origin(prof3):
    # the cubic ground state in 3D has U(0) ~= 4.3373
    assert prof3.u0 == pytest.approx(4.33738, abs=2e-5)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_residual_and_nehari(p):
    prof = solve_ground_state(p)
    assert prof.ode_residual() < 1e-8
    gc = constants(prof)
    assert abs(gc.h1sq - gc.lp1) / gc.lp1 < 1e-6


def test_positive_and_decreasing(prof2):
    r = np.linspace(0, 20, 400)
    u = prof2(r)
    assert np.all(u > 0)
    assert np.all(np.diff(u) < 0)
    assert prof2(0.0, 1) == pytest.approx(0.0, abs=1e-12)


def test_tail_is_yukawa_like(prof2):
    r = np.array([12.0, 16.0, 24.0, 40.0])
    ratio = prof2(r) * r * np.exp(r)
    assert np.ptp(ratio) / ratio.mean() < 1e-2


def test_second_integrator_agrees(prof2):
    assert abs(shooting_oracle_u0(2.0) - prof2.u0) < 1e-6


def test_profile_file_roundtrip(tmp_path, prof2):
    path = tmp_path / "profile.txt"
    write_profile(prof2, path)
    header, r, u = read_profile(path)
    assert header["p"] == 2.0
    np.testing.assert_array_equal(r, prof2.r)
    np.testing.assert_array_equal(u, prof2.u)


@given(lam=st.floats(0.3, 3.0))
def test_rescale_solves_mass_equation(prof2, lam):
    # U_lam(r) = lam^{2/(p-1)} U(lam r) solves -u'' - 2u'/r + lam^2 u = u^p
    q = rescale(prof2, lam)
    r = np.linspace(0.5, 8.0 / lam, 40)
    assert np.allclose(q(r), lam ** 2.0 * prof2(lam * r), rtol=1e-12, atol=0)
    res = -q(r, 2) - 2 * q(r, 1) / r + lam**2 * q(r) - q(r) ** 2
    assert np.max(np.abs(res)) < 1e-6 * max(1.0, lam**4)


@given(lam=st.floats(0.5, 2.0))
def test_energy_constant_scaling(prof2, lam):
    # C0(lam) = C0(1) lam^(2 theta), i.e. C0 V^theta with lam^2 = V
    c1 = constants(prof2).C0
    cl = constants(rescale(prof2, lam)).C0
    assert cl == pytest.approx(c1 * lam ** (2 * theta_exponent(2.0)), rel=1e-7)


def test_moments_parity(prof2):
    gc = constants(prof2)
    assert np.all(gc.momentsA[:, 1::2] == 0)
    assert np.all(gc.momentsB[:, 0::2, :] == 0)
    off = gc.momentsB.copy()
    for i in range(3):
        off[i, :, i] = 0
    assert np.all(off == 0)
    # second moment of U^2 is isotropic and equals a third of int r^2 U^2
    r2 = 4 * math.pi * prof2.radial_integral(lambda r, u, du: r**4 * u**2)
    assert np.allclose(gc.momentsA[:, 2], r2 / 3, rtol=1e-12)


def test_bad_exponent():
    with pytest.raises(ValueError):
        solve_ground_state(5.0)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_tail_bound(p):
    # r e^r U(r) rises toward its limit, so the bound fitted on [3, 5] needs a 1 % margin
    prof = solve_ground_state(p)
    fit = np.linspace(3.0, 5.0, 41)
    C = np.max(prof(fit) * fit * np.exp(fit))
    r = np.linspace(5.0, 25.0, 200)
    assert np.all(prof(r) <= 1.01 * C * np.exp(-r) / r)
