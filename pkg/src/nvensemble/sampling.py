"""Random center realizations and crystal-axis field projections.

Every center ``k`` of an ensemble is driven by five uniforms (D shift, E1,
E2, field, hyperfine line) that depend only on ``(seed, k)``, so any prefix,
slice or parallel split of an ensemble is bit-identical to the serial
result.  Two generators provide them:

``"sobol"`` (default)
    Point ``k`` of a five-dimensional Owen-scrambled Sobol sequence whose
    scrambling is seeded from ``SeedSequence(seed)``.  Randomized
    quasi-Monte Carlo: unbiased, with much lower variance than independent
    draws for the smooth averages taken here.
``"pcg64"``
    Independent draws; centers are grouped into blocks of ``BLOCK_SIZE``
    and block ``b`` uses ``PCG64(SeedSequence(seed, spawn_key=(b,)))``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .physics import DEFAULT_CONSTANTS

BLOCK_SIZE = 1024
N_UNIFORMS = 5  # D shift, E1, E2, field, hyperfine line

# unit vectors of the four NV orientations in the cubic frame
NV_AXES = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
]) / np.sqrt(3.0)

EARTH_FIELD_MT = 0.045


@dataclass(frozen=True)
class NoiseParams:
    """Ensemble noise widths, all HWHM in MHz.

    gamma : homogeneous broadening
    db : spread of the axial Zeeman frequency
    de : spread of the transverse strain terms E1 and E2
    hyperfine_split : spacing of the nitrogen hyperfine triplet
    z_strain_factor : width of the D shift relative to ``de``
    """

    gamma: float
    db: float
    de: float
    hyperfine_split: float = 2.3
    z_strain_factor: float = 1.0 / 50.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        for name in ("db", "de", "hyperfine_split"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative width, got {value}")
        if not 0 < self.z_strain_factor <= 1:
            raise ValueError(f"z_strain_factor must lie in (0, 1], got {self.z_strain_factor}")

    def replace(self, **changes):
        values = {**self.__dict__, **changes}
        return NoiseParams(**values)


@dataclass(frozen=True)
class CenterSample:
    d: float
    e1: float
    e2: float
    j: float


@dataclass(frozen=True)
class FieldVector:
    """Magnetic field in mT, cubic crystal frame."""

    bx: float
    by: float
    bz: float

    def __post_init__(self):
        if not all(np.isfinite([self.bx, self.by, self.bz])):
            raise ValueError("field components must be finite")

    @classmethod
    def from_direction(cls, magnitude, direction):
        v = np.asarray(direction, dtype=float)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("field direction must be non-zero")
        v = magnitude * v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_polar(cls, magnitude, theta_deg, phi_deg):
        t, f = np.radians(theta_deg), np.radians(phi_deg)
        return cls.from_direction(magnitude, [np.sin(t) * np.cos(f), np.sin(t) * np.sin(f), np.cos(t)])

    @property
    def magnitude(self):
        return float(np.linalg.norm(self.as_array()))

    def as_array(self):
        return np.array([self.bx, self.by, self.bz])


def earth_field(direction=(1, 1, 1)):
    """Geomagnetic-strength field (0.045 mT) along ``direction``."""
    return FieldVector.from_direction(EARTH_FIELD_MT, direction)


def project_field(b: FieldVector, ge_mub=DEFAULT_CONSTANTS.ge_mub):
    """Axial Zeeman frequencies (MHz) of the four NV orientations."""
    return ge_mub * (NV_AXES @ b.as_array())


def lorentzian_sample(center, hwhm, u):
    """Inverse-CDF draw from a Lorentzian; ``u`` must lie strictly in (0, 1)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    if np.any(np.asarray(hwhm) < 0):
        raise ValueError("hwhm must be non-negative")
    offset = np.tan(np.pi * (u - 0.5))
    out = center + np.where(np.asarray(hwhm) == 0, 0.0, hwhm * offset)
    return out if out.ndim else float(out)


SOBOL_BITS = 32
UNIFORM_METHODS = ("sobol", "pcg64")


def _open_unit(u, step=2.0 ** -53):
    # generator output lies on a lattice in [0, 1); shift by half a step
    return u + 0.5 * step


def _pcg64_uniforms(seed, n, start):
    out = np.empty((n, N_UNIFORMS))
    first, last = start // BLOCK_SIZE, (start + n - 1) // BLOCK_SIZE
    pos = 0
    for block in range(first, last + 1) if n else ():
        ss = np.random.SeedSequence(seed, spawn_key=(block,))
        draws = np.random.Generator(np.random.PCG64(ss)).random((BLOCK_SIZE, N_UNIFORMS))
        lo = max(start - block * BLOCK_SIZE, 0)
        hi = min(start + n - block * BLOCK_SIZE, BLOCK_SIZE)
        out[pos:pos + hi - lo] = draws[lo:hi]
        pos += hi - lo
    return _open_unit(out)


def _sobol_uniforms(seed, n, start):
    if start + n > 2 ** SOBOL_BITS:
        raise ValueError(f"at most 2**{SOBOL_BITS} centers per ensemble")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    engine = qmc.Sobol(N_UNIFORMS, scramble=True, bits=SOBOL_BITS, seed=rng)
    if start:
        engine.fast_forward(start)
    with warnings.catch_warnings():
        # balance is best for powers of two, but any count is unbiased
        warnings.filterwarnings("ignore", message="The balance properties", category=UserWarning)
        u = engine.random(n) if n else np.empty((0, N_UNIFORMS))
    return _open_unit(u, 2.0 ** -SOBOL_BITS)


def center_uniforms(seed, n, start=0, method="sobol"):
    """``(n, 5)`` open-interval uniforms for centers ``start .. start+n-1``."""
    if n < 0 or start < 0:
        raise ValueError("n and start must be non-negative")
    if method == "sobol":
        return _sobol_uniforms(seed, n, start)
    if method == "pcg64":
        return _pcg64_uniforms(seed, n, start)
    raise ValueError(f"method must be one of {UNIFORM_METHODS}, got {method!r}")


def hyperfine_offsets(noise: NoiseParams, u):
    """Map uniforms to triplet offsets ``-a, 0, +a`` with equal probability."""
    line = np.minimum(np.floor(3.0 * np.asarray(u)), 2.0) - 1.0
    return line * noise.hyperfine_split


def centers_from_uniforms(noise: NoiseParams, base_d, static_j, u):
    """Vectorised :func:`sample_center` driven by a ``(n, 5)`` uniform array.

    Returns arrays ``(d, e1, e2, j_random)``; the field projection
    ``static_j`` is added to ``j_random``.
    """
    u = np.asarray(u)
    d = lorentzian_sample(base_d, noise.de * noise.z_strain_factor, u[:, 0])
    e1 = lorentzian_sample(0.0, noise.de, u[:, 1])
    e2 = lorentzian_sample(0.0, noise.de, u[:, 2])
    j = static_j + lorentzian_sample(0.0, noise.db, u[:, 3]) + hyperfine_offsets(noise, u[:, 4])
    return np.atleast_1d(d), np.atleast_1d(e1), np.atleast_1d(e2), np.atleast_1d(j)


def sample_center(noise: NoiseParams, base_d, static_j, rng):
    """Draw one :class:`CenterSample` using a ``numpy.random.Generator``."""
    u = _open_unit(rng.random((1, N_UNIFORMS)))
    d, e1, e2, j = centers_from_uniforms(noise, base_d, static_j, u)
    return CenterSample(float(d[0]), float(e1[0]), float(e2[0]), float(j[0]))


def sample_centers(noise: NoiseParams, base_d, static_j, seed, n, start=0, method="sobol"):
    """Draw centers ``start .. start+n-1`` of the ensemble identified by ``seed``."""
    return centers_from_uniforms(noise, base_d, static_j, center_uniforms(seed, n, start, method))
