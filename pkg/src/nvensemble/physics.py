"""Single-center physics of the NV ground-state triplet.

All frequencies are ordinary frequencies in MHz (the 2*pi factors of angular
frequencies are dropped everywhere).  Temperatures are offsets in kelvin and
electric fields are in V/um.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    """Spin-Hamiltonian coefficients of the NV- ground state.

    ``ge_mub`` defaults to 28.7 MHz/mT, slightly above the textbook free
    electron value (about 28.03 MHz/mT); pass a different value if needed.
    """

    d0: float = 2870.685  # MHz
    c_t: float = -0.0786  # MHz/K
    c_eperp: float = 0.170  # MHz per V/um
    c_epar: float = 0.0035  # MHz per V/um
    ge_mub: float = 28.7  # MHz/mT

    def __post_init__(self):
        for name in ("d0", "c_eperp", "c_epar", "ge_mub"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.c_t < 0:
            raise ValueError(f"c_t must be negative, got {self.c_t}")


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class CenterParams:
    """Realized parameters of one center plus the drive and linewidth.

    ``j`` is the axial Zeeman term (g mu_B B_z) and ``e2`` doubles as the
    transverse bright/dark coupling J'.  ``lambda_eff`` is the effective
    drive obtained in the weak-relaxation limit.
    """

    d: float
    e1: float
    e2: float
    j: float
    gamma: float
    lambda_eff: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.lambda_eff >= 0:
            raise ValueError(f"lambda_eff must be non-negative, got {self.lambda_eff}")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")


def zfs_frequency(delta_t=0.0, eps_z=0.0, consts: PhysicalConstants = DEFAULT_CONSTANTS):
    """Zero-field splitting in MHz for a temperature offset and axial field."""
    return consts.d0 + consts.c_t * delta_t + consts.c_epar * eps_z


def branch_frequencies(d, e1):
    """Resonances of the bright (``wb``) and dark (``wd``) superpositions."""
    return d - e1, d + e1


def _excitation(omega, d, e1, e2, j, gamma, lam):
    # |lam (w - wd + i g)/Z|^2 + |lam (J - iJ')/Z|^2 with
    # Z = (w - wb + i g)(w - wd + i g) - (J^2 + J'^2), written in real form.
    # Detuning first: omega - (d - e1) would round d - e1 near 2870 MHz.
    x = omega - d
    p = x + e1
    q = x - e1
    k = j * j + e2 * e2
    zr = p * q - gamma * gamma - k
    zi = gamma * (p + q)
    return lam * lam * (q * q + gamma * gamma + k) / (zr * zr + zi * zi)


def single_center_excitation(omega, p: CenterParams):
    """Weak-drive excited-state population of one center at drive ``omega``.

    Evaluates the steady-state solution of the three-level master equation
    in the limit of vanishing energy relaxation, with the drive coupling only
    to the bright state.  ``omega`` may be a scalar or an array (MHz).

    The result is non-negative for every real ``omega`` because ``Z`` has
    imaginary part ``2*gamma*(omega - d)`` and real part
    ``(omega - d)**2 - e1**2 - gamma**2 - k``, which cannot vanish together.
    """
    omega = np.asarray(omega, dtype=float)
    return _excitation(omega, p.d, p.e1, p.e2, p.j, p.gamma, p.lambda_eff)


def complex_excitation(omega, p: CenterParams):
    """Reference evaluation of :func:`single_center_excitation` with complex
    arithmetic, kept for cross-checking the real-valued fast path."""
    omega = np.asarray(omega, dtype=float)
    wb, wd = branch_frequencies(p.d, p.e1)
    g = 1j * p.gamma
    z = (omega - wb + g) * (omega - wd + g) - (p.j ** 2 + p.e2 ** 2)
    bright = p.lambda_eff * (omega - wd + g) / z
    mixed = p.lambda_eff * (p.j - 1j * p.e2) / z
    return np.abs(bright) ** 2 + np.abs(mixed) ** 2


def paired_excitation(omega, p: CenterParams):
    """Average response of a center and its strain mirror (``e1 -> -e1``).

    Mirroring ``e1`` swaps the bright and dark resonances while leaving ``Z``
    unchanged, so the pair is cheap to evaluate.  With ``j = e2 = 0`` the
    result is the equal-weight pair of Lorentzians at ``d - e1`` and
    ``d + e1``.
    """
    omega = np.asarray(omega, dtype=float)
    return _paired(omega, p.d, p.e1, p.e2, p.j, p.gamma, p.lambda_eff)


def _paired(omega, d, e1, e2, j, gamma, lam):
    x = omega - d
    p = x + e1
    q = x - e1
    k = j * j + e2 * e2
    zr = p * q - gamma * gamma - k
    zi = gamma * (p + q)
    num = 0.5 * (p * p + q * q) + gamma * gamma + k
    return lam * lam * num / (zr * zr + zi * zi)


def lorentzian(omega, center, hwhm):
    """Unit-peak Lorentzian ``hwhm**2 / ((omega - center)**2 + hwhm**2)``."""
    omega = np.asarray(omega, dtype=float)
    return hwhm * hwhm / ((omega - center) ** 2 + hwhm * hwhm)
