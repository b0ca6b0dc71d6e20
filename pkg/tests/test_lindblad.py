import numpy as np
import pytest

from nvensemble.lindblad import (SX, SY, SZ, jump_operators, liouvillian, lindblad_steady_state_oracle,
                                 rotating_frame_hamiltonian, steady_state)
from nvensemble.physics import CenterParams, single_center_excitation

D = 2870.685


def test_spin_matrices():
    np.testing.assert_allclose(SX @ SY - SY @ SX, 1j * SZ, atol=1e-15)
    np.testing.assert_allclose(SX @ SX + SY @ SY + SZ @ SZ, 2 * np.eye(3), atol=1e-15)


def test_zero_drive_stays_in_ground_state():
    p = CenterParams(D, 1.0, 0.5, 2.0, gamma=0.4, lambda_eff=0.0)
    assert np.all(np.abs(lindblad_steady_state_oracle(p, 0.004, np.linspace(D - 5, D + 5, 11))) < 1e-14)


def test_resonant_limit():
    p = CenterParams(D, 0.0, 0.0, 0.0, gamma=0.5, lambda_eff=0.005)
    ratio = lindblad_steady_state_oracle(p, 0.0005, D) / single_center_excitation(D, p)
    assert ratio == pytest.approx(1.0, abs=0.01)


def test_steady_state_is_a_density_matrix():
    p = CenterParams(D, 2.0, 1.0, 1.5, gamma=0.3, lambda_eff=0.003)
    h = rotating_frame_hamiltonian(p, D + 0.7, 0.001)
    rho = steady_state(liouvillian(h, jump_operators(0.3, 0.003)))
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_invalid_rates_rejected():
    p = CenterParams(D, 0.0, 0.0, 0.0, gamma=0.5, lambda_eff=0.005)
    with pytest.raises(ValueError):
        lindblad_steady_state_oracle(p, 0.0, D)


def test_sweep_agrees_with_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(5):
        g = rng.uniform(0.1, 2.0)
        p = CenterParams(D + rng.uniform(-1, 1), rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5),
                         gamma=g, lambda_eff=0.01 * g)
        w = np.linspace(p.d - 20, p.d + 20, 201)
        a = single_center_excitation(w, p)
        o = lindblad_steady_state_oracle(p, g / 100, w)
        assert np.max(np.abs(o - a) / a) <= 0.02
