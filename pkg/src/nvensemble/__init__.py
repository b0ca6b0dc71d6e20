"""Ensemble ODMR spectra of NV centers in diamond: simulation, fitting and
thermometry sensitivity."""
from .physics import DEFAULT_CONSTANTS, CenterParams, PhysicalConstants, zfs_frequency
from .sampling import FieldVector, NoiseParams, earth_field, project_field
from .simulate import SimulationConfig, Spectrum, simulate_spectrum

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONSTANTS", "CenterParams", "PhysicalConstants", "zfs_frequency",
    "FieldVector", "NoiseParams", "earth_field", "project_field",
    "SimulationConfig", "Spectrum", "simulate_spectrum", "__version__",
]
