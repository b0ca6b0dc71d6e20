"""Closed-form strain averages of the paired single-center response.

The strain-mirrored pair response depends on the transverse strain only
through ``E1**2 + E2**2`` and on the axial Zeeman term through ``J**2``.
For Lorentzian ``E1`` and ``E2`` (both HWHM ``w``) and a Lorentzian shift of
``D`` (HWHM ``delta``) the average is elementary::

    <E> = (lam**2 / gamma) * Im[z * psi],   z = x + i (gamma + delta)
    psi = (1 - 2y + (4/pi) y atan(y)) / (a**2 - w**2),   y = w / a
    a = sqrt(J**2 - z**2 - w**2)

with ``x = omega - D``; ``a = w`` is a removable singularity.  What is left
is the one-dimensional average over the axial field, done by Monte Carlo in
``simulate`` or by a fixed quadrature in :func:`expected_excitation`.
"""
from __future__ import annotations

import cmath

import numba as nb
import numpy as np

from .sampling import NoiseParams

DEFAULT_FIELD_NODES = 1024
# exact zero detuning sits on a removable branch cut; nudge it off
_X_NUDGE = 1e-9
_TWO_OVER_PI = 2.0 / np.pi


@nb.njit(cache=True, fastmath=True)
def _ratio(y):
    # (1 - 2y + (4/pi) y atan y) / (1 - y^2); series around y = 1
    e = y - 1.0
    if abs(e) < 1e-3:
        return (0.5 - 1.0 / np.pi - 0.25 * e + (1.0 / (3.0 * np.pi) + 0.125) * e * e
                - (1.0 / (3.0 * np.pi) + 0.0625) * e * e * e)
    return (1.0 - 2.0 * y + 2.0 * _TWO_OVER_PI * y * cmath.atan(y)) / (1.0 - y * y)


@nb.njit(cache=True, fastmath=True)
def strain_psi(s, w):
    """Mean of ``1 / (B (B + w))``, ``B = sqrt(E2**2 + s)``, over E2 ~ Lorentzian(0, w)."""
    if w == 0.0:
        return 1.0 / s
    a2 = s - w * w
    return _ratio(w / cmath.sqrt(a2)) / a2


@nb.njit(cache=True, fastmath=True)
def strain_mean(x, j, gamma, w, delta, lam):
    """Mean pair response over E1, E2 ~ Lorentzian(0, w) and the D shift."""
    if abs(x) < _X_NUDGE:
        x = _X_NUDGE
    z = complex(x, gamma + delta)
    return lam * lam / gamma * (z * strain_psi(j * j - z * z, w)).imag


@nb.njit(cache=True, fastmath=True)
def _field_sum(detuning, nodes, weights, gamma, w, delta, lam):
    m = detuning.shape[0]
    out = np.zeros(m)
    for k in range(nodes.shape[0]):
        for i in range(m):
            out[i] += weights[k] * strain_mean(detuning[i], nodes[k], gamma, w, delta, lam)
    return out


def mirror_groups(detuning):
    """Representative ``|x|`` per mirrored pair and the map back to the grid.

    Grid points whose ``|x|`` agree to 1e-9 MHz share one evaluation, taken
    at the first such point.
    """
    x = np.abs(np.asarray(detuning, dtype=float))
    _, first, inverse = np.unique(np.round(x, 9), return_index=True, return_inverse=True)
    return np.ascontiguousarray(x[first]), inverse.reshape(x.shape)


def field_centers(noise: NoiseParams, static_j):
    """Distinct ``|J|`` line centers (orientation plus hyperfine) and weights."""
    static_j = np.asarray(static_j, dtype=float)
    h = noise.hyperfine_split * np.array([-1.0, 0.0, 1.0])
    # the response is even in J and a Lorentzian at -c mirrors one at +c
    lines = np.abs((static_j[:, None] + h[None, :]).ravel())
    centers, counts = np.unique(lines, return_counts=True)
    return centers, counts / counts.sum()


def _cauchy_cdf(j, c, hw):
    return 0.5 + np.arctan((j - c) / hw) / np.pi


def _cauchy_pdf(j, c, hw):
    return hw / (np.pi * ((j - c) ** 2 + hw * hw))


def field_nodes(centers, center_weights, db, span, n):
    """Quadrature for the mean over ``J`` drawn from a Lorentzian mixture.

    ``J`` follows HWHM ``db`` Lorentzians at ``centers`` with the given
    weights.  Nodes are midpoints in the cumulative probability of that
    mixture blended half and half with a broad Lorentzian of HWHM ``span``
    centred on zero; the broad half keeps nodes dense at every ``|J|`` up to
    the largest detuning, where the response has resonances.
    """
    centers = np.asarray(centers, dtype=float)
    center_weights = np.asarray(center_weights, dtype=float)
    if db == 0.0:
        return centers.copy(), center_weights.copy()

    def cdf(j):
        lines = _cauchy_cdf(j[:, None], centers[None, :], db) @ center_weights
        return 0.5 * (lines + _cauchy_cdf(j, 0.0, span))

    u = (np.arange(n) + 0.5) / n
    # the mixture is at least half a Lorentzian of HWHM `span` around zero, so
    # twice that Lorentzian's quantiles, shifted past every center, bracket u
    reach = np.max(np.abs(centers)) + 1.0
    lo = -reach + 2.0 * max(db, span) * np.tan(np.pi * (u / 2.0 - 0.5))
    hi = reach + 2.0 * max(db, span) * np.tan(np.pi * u / 2.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
            break
    j = 0.5 * (lo + hi)
    target = _cauchy_pdf(j[:, None], centers[None, :], db) @ center_weights
    density = 0.5 * (target + _cauchy_pdf(j, 0.0, span))
    return j, target / (density * n)


def expected_excitation(freqs, noise: NoiseParams, lambda_eff, base_d, static_j,
                        n_nodes=DEFAULT_FIELD_NODES):
    """Ensemble-mean excitation without sampling noise.

    Strain and the D shift are averaged in closed form and the Lorentzian
    field spread around the orientation/hyperfine lines by
    :func:`field_nodes`.  The result is a smooth function of every width.
    The response is even in the detuning, so mirrored grid points are
    evaluated once.
    """
    x = np.asarray(freqs, dtype=float) - base_d
    ax, inverse = mirror_groups(x)
    centers, cw = field_centers(noise, static_j)
    span = max(float(ax.max()), noise.gamma)
    nodes, weights = field_nodes(centers, cw, float(noise.db), span, n_nodes)
    out = _field_sum(ax, nodes, weights, float(noise.gamma), float(noise.de),
                     float(noise.de * noise.z_strain_factor), float(lambda_eff))
    return out[inverse]
