import numpy as np
import pytest
from hypothesis import given, strategies as st

from nvensemble.physics import (DEFAULT_CONSTANTS, CenterParams, PhysicalConstants, branch_frequencies,
                                complex_excitation, lorentzian, paired_excitation,
                                single_center_excitation, zfs_frequency)

D = 2870.685


def test_constants_and_invariants():
    c = DEFAULT_CONSTANTS
    assert (c.d0, c.c_t, c.c_eperp, c.c_epar, c.ge_mub) == (2870.685, -0.0786, 0.170, 0.0035, 28.7)
    assert c.c_epar / c.c_eperp == pytest.approx(1 / 48.6, rel=1e-3)
    with pytest.raises(ValueError):
        PhysicalConstants(c_t=0.01)
    with pytest.raises(ValueError):
        PhysicalConstants(ge_mub=0.0)


@pytest.mark.parametrize("dt, ez, expected", [(0, 0, 2870.685), (10, 0, 2869.899), (0, 1, 2870.6885)])
def test_zfs_frequency(dt, ez, expected):
    assert zfs_frequency(dt, ez) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("e1, expected", [(0, (D, D)), (5, (D - 5, D + 5)), (-3, (D + 3, D - 3))])
def test_branch_frequencies(e1, expected):
    assert branch_frequencies(D, e1) == pytest.approx(expected, abs=1e-12)


def test_center_params_validation():
    with pytest.raises(ValueError):
        CenterParams(D, 0, 0, 0, gamma=0.0, lambda_eff=0.1)
    with pytest.raises(ValueError):
        CenterParams(D, 0, 0, 0, gamma=0.1, lambda_eff=-0.1)
    with pytest.raises(ValueError):
        CenterParams(0.0, 0, 0, 0, gamma=0.1, lambda_eff=0.1)


def test_resonant_value():
    p = CenterParams(D, 0.0, 0.0, 0.0, gamma=0.3, lambda_eff=0.05)
    assert single_center_excitation(D, p) == pytest.approx(0.05 ** 2 / 0.3 ** 2, rel=1e-14)


def test_no_drive_is_zero():
    p = CenterParams(D, 2.0, 1.0, 3.0, gamma=0.3, lambda_eff=0.0)
    assert np.all(single_center_excitation(np.linspace(D - 30, D + 30, 101), p) == 0)


def test_value_at_d_with_strain():
    p = CenterParams(D, 4.0, 0.0, 0.0, gamma=0.5, lambda_eff=0.2)
    assert single_center_excitation(D, p) == pytest.approx(0.04 / (16 + 0.25), rel=1e-13)


def test_two_lorentzian_pair():
    # the mirrored pair is two equal Lorentzians at D -+ E1, each of peak lam^2/gamma^2 / 2
    p = CenterParams(D, 3.7, 0.0, 0.0, gamma=0.4, lambda_eff=0.29)
    w = np.linspace(D - 20, D + 20, 201)
    ref = 0.5 * (0.29 / 0.4) ** 2 * (lorentzian(w, D - 3.7, 0.4) + lorentzian(w, D + 3.7, 0.4))
    np.testing.assert_allclose(paired_excitation(w, p), ref, rtol=1e-12)


params = st.builds(
    CenterParams,
    d=st.floats(2800, 2950), e1=st.floats(-20, 20), e2=st.floats(-20, 20), j=st.floats(-200, 200),
    gamma=st.floats(1e-3, 10), lambda_eff=st.floats(0, 2),
)


@given(params, st.floats(2500, 3300))
def test_excitation_non_negative_and_finite(p, w):
    v = single_center_excitation(w, p)
    assert np.isfinite(v) and v >= 0
    assert np.isfinite(paired_excitation(w, p)) and paired_excitation(w, p) >= 0


@given(params)
def test_real_form_matches_complex_form(p):
    w = np.linspace(p.d - 40, p.d + 40, 81)
    np.testing.assert_allclose(single_center_excitation(w, p), complex_excitation(w, p), rtol=1e-9, atol=0)


@given(params, st.floats(0, 30))
def test_strain_mirror_symmetry_without_field(p, delta):
    # without a field a single center is one Lorentzian at d - e1; reflecting
    # the detuning is the same as reflecting e1
    p = CenterParams(p.d, p.e1, 0.0, 0.0, p.gamma, p.lambda_eff)
    m = CenterParams(p.d, -p.e1, 0.0, 0.0, p.gamma, p.lambda_eff)
    a = single_center_excitation(p.d + delta, p)
    b = single_center_excitation(p.d - delta, m)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-300)
    assert paired_excitation(p.d + delta, p) == pytest.approx(paired_excitation(p.d - delta, p), rel=1e-9)


@given(params)
def test_quadratic_in_drive(p):
    w = np.linspace(p.d - 10, p.d + 10, 21)
    q = CenterParams(p.d, p.e1, p.e2, p.j, p.gamma, 2 * p.lambda_eff)
    if p.lambda_eff > 1e-100:  # avoid underflow of lam**2
        np.testing.assert_allclose(single_center_excitation(w, q) / single_center_excitation(w, p), 4.0,
                                   rtol=1e-14)


@given(params, st.floats(0, 30))
def test_pair_even_in_detuning(p, delta):
    a = paired_excitation(p.d + delta, p)
    b = paired_excitation(p.d - delta, p)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-300)
