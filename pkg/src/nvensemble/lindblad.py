"""Numerical steady state of the driven three-level master equation.

This is the brute-force counterpart of
:func:`nvensemble.physics.single_center_excitation`: the rotating-frame
Hamiltonian is assembled from spin-1 matrices, the Liouvillian is vectorised
into a 9x9 matrix and the steady state is found with a dense solve.  It is
slow and only meant as a reference.
"""
from __future__ import annotations

import numpy as np

from .physics import CenterParams

# basis order |+1>, |0>, |-1>
SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2)
SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / np.sqrt(2)
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)

KET_0 = np.array([0, 1, 0], dtype=complex)
KET_B = np.array([1, 0, 1], dtype=complex) / np.sqrt(2)
KET_D = np.array([1, 0, -1], dtype=complex) / np.sqrt(2)


def _ketbra(a, b):
    return np.outer(a, b.conj())


def rotating_frame_hamiltonian(p: CenterParams, omega, drive):
    """Rotating-frame Hamiltonian (MHz) with drive matrix element ``drive``.

    The transverse strain enters with the sign that puts the bright state at
    ``d - e1``, matching the closed-form solution.
    """
    sz2 = SZ @ SZ
    return ((p.d - omega) * sz2
            - p.e1 * (SX @ SX - SY @ SY)
            + p.e2 * (SX @ SY + SY @ SX)
            + p.j * SZ
            + drive * SX)


def jump_operators(dephasing, energy_relax):
    """(rate, operator) pairs: bright/dark dephasing and relaxation to |0>."""
    return [
        (dephasing, _ketbra(KET_B, KET_D)),
        (dephasing, _ketbra(KET_D, KET_B)),
        (energy_relax, _ketbra(KET_0, KET_B)),
        (energy_relax, _ketbra(KET_0, KET_D)),
    ]


def liouvillian(h, jumps):
    """Row-major vectorised generator of
    ``-i[H, rho] + sum_j g_j (2 L rho L^+ - L^+ L rho - rho L^+ L)``."""
    n = h.shape[0]
    eye = np.eye(n)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, op in jumps:
        ldl = op.conj().T @ op
        sup += rate * (2 * np.kron(op, op.conj())
                       - np.kron(ldl, eye) - np.kron(eye, ldl.T))
    return sup


def steady_state(sup, n=3):
    """Unit-trace null vector of ``sup`` as an ``n x n`` density matrix."""
    a = sup.copy()
    b = np.zeros(n * n, dtype=complex)
    a[0, :] = 0
    a[0, [i * n + i for i in range(n)]] = 1
    b[0] = 1
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Liouvillian has no unique steady state; check the rates") from exc
    if not np.all(np.isfinite(x)):
        raise ValueError("Liouvillian has no unique steady state; check the rates")
    return x.reshape(n, n)


def lindblad_steady_state_oracle(p: CenterParams, energy_relax, omega):
    """Excited population ``1 - <0|rho_ss|0>`` from the full master equation.

    The bare drive is set from the effective one through
    ``lambda = lambda_eff * sqrt(G' / (G + G'))`` so that the result converges
    to the closed form as ``energy_relax`` and the drive go to zero.

    Parameters
    ----------
    p : CenterParams
        Center parameters; ``p.gamma`` is the dephasing rate.
    energy_relax : float
        Relaxation rate back to |0> (MHz), must be positive.
    omega : float or array_like
        Drive frequency (MHz).
    """
    if not energy_relax > 0:
        raise ValueError(f"energy_relax must be positive, got {energy_relax}")
    drive = p.lambda_eff * np.sqrt(energy_relax / (p.gamma + energy_relax))
    jumps = jump_operators(p.gamma, energy_relax)
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty(omegas.shape)
    for i, w in enumerate(omegas):
        rho = steady_state(liouvillian(rotating_frame_hamiltonian(p, w, drive), jumps))
        # excited populations summed directly instead of 1 - rho_00 for accuracy
        out[i] = rho[0, 0].real + rho[2, 2].real
    return out if np.ndim(omega) else out[0]
