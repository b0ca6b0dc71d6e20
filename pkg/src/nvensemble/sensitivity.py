"""Temperature sensitivity versus NV concentration.

Concentrations are in units of 1e17 cm^-3 throughout.  The sensitivity of a
measurement that tracks the zero-field splitting through the steepest point
of a spectrum is::

    eta = sigma / (C_max * |c_T| * sqrt(N / N_ref) * sqrt(OD_ND))

with ``C_max`` the largest slope of the signal (per MHz), ``c_T`` the
temperature coefficient of D (MHz/K) and ``N`` the NV concentration.  The
measurement time is absorbed in the per-sqrt(Hz) convention of ``sigma``.
``sigma`` itself is an apparatus property, so it is calibrated: the shipped
calibration pins ``eta(5.0, dip) = 0.76 mK/sqrt(Hz)``.  Every other value of
a sweep is a model output relative to that anchor.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field as dc_field, fields, replace
from importlib import resources

import numpy as np

from .physics import DEFAULT_CONSTANTS, PhysicalConstants, zfs_frequency
from .sampling import FieldVector, NoiseParams, project_field
from .simulate import DEFAULT_LAMBDA_EFF, DEFAULT_SEED, SimulationConfig, simulate_spectrum

log = logging.getLogger(__name__)

MODES = ("dip", "peak001", "peakArb")
CALIBRATION_CONCENTRATION = 5.0
CALIBRATION_ETA_MK = 0.76
DEFAULT_CALIBRATION = "default_calibration.txt"


class UndefinedSensitivityError(ValueError):
    """The spectrum has no slope, so no frequency shift can be resolved."""


class CalibrationError(ValueError):
    """Calibration file violates the schema; ``problems`` lists every issue."""

    def __init__(self, problems, path=None):
        self.problems = list(problems)
        head = f"{path}: " if path else ""
        super().__init__(head + "invalid calibration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class ScalingLaws:
    """Affine dependence of the noise widths on concentration.

    Widths in MHz, slopes in MHz per 1e17 cm^-3.  The defaults are a
    synthetic calibration chosen so that the dip-mode optimum lies near
    5e17 cm^-3; replace them with fits of measured spectra.
    """

    gamma_intercept: float = 0.24
    gamma_slope: float = 0.012
    db_intercept: float = 1.8
    db_slope: float = 0.09
    de_intercept: float = 0.96
    de_slope: float = 0.048

    def __post_init__(self):
        problems = [f"{f.name} must be a finite non-negative number, got {getattr(self, f.name)!r}"
                    for f in fields(self)
                    if not (math.isfinite(getattr(self, f.name)) and getattr(self, f.name) >= 0)]
        if not problems and self.gamma_intercept == 0 and self.gamma_slope == 0:
            problems.append("gamma_intercept and gamma_slope cannot both be zero")
        if problems:
            raise ValueError("; ".join(problems))


DEFAULT_LAWS = ScalingLaws()


@dataclass(frozen=True)
class SensitivityConfig:
    """Measurement model and the spectra used to find ``C_max``.

    Each mode's spectrum covers ``window`` MHz either side of its line on
    ``n_points`` points: the zero-field splitting for ``dip``, the upper
    line of a ``peak_field_mt`` field along [001] for ``peak001`` and, for
    ``peakArb``, the upper line of orientation ``arb_axis`` in a field of the
    same size pointing along the polar angles ``arb_theta_deg``,
    ``arb_phi_deg``.
    """

    sigma: float = 1.0
    od_nd: float = 6000.0
    ref_concentration: float = 9.2
    volume: float = 0.1  # um^3
    lambda_eff: float = DEFAULT_LAMBDA_EFF
    peak_field_mt: float = 5.0
    arb_theta_deg: float = 30.0
    arb_phi_deg: float = 60.0
    arb_axis: int = 0
    window: float = 10.0
    n_points: int = 401
    n_samples: int = 4096
    constants: PhysicalConstants = dc_field(default=DEFAULT_CONSTANTS)

    def __post_init__(self):
        problems = []
        if not self.sigma > 0:
            problems.append(f"sigma must be positive, got {self.sigma}")
        if not self.od_nd >= 1:
            problems.append(f"od_nd must be >= 1, got {self.od_nd}")
        if not self.ref_concentration > 0:
            problems.append(f"ref_concentration must be positive, got {self.ref_concentration}")
        if not self.volume > 0:
            problems.append(f"volume must be positive, got {self.volume}")
        if not self.peak_field_mt > 0:
            problems.append(f"peak_field_mt must be positive, got {self.peak_field_mt}")
        if self.arb_axis not in (0, 1, 2, 3):
            problems.append(f"arb_axis must be 0..3, got {self.arb_axis}")
        if not self.window > 0:
            problems.append(f"window must be positive, got {self.window}")
        if int(self.n_points) != self.n_points or self.n_points < 3:
            problems.append(f"n_points must be an integer >= 3, got {self.n_points}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            problems.append(f"n_samples must be a positive integer, got {self.n_samples}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def c_t(self):
        return self.constants.c_t


@dataclass(frozen=True)
class SensitivityPoint:
    nv_concentration: float
    eta_dip: float
    eta_peak001: float
    eta_peak_arb: float

    def eta(self, mode):
        return {"dip": self.eta_dip, "peak001": self.eta_peak001, "peakArb": self.eta_peak_arb}[mode]


@dataclass
class SweepResult:
    points: list
    mode: str
    argmin_concentration: float
    argmin_eta: float
    sigma: float

    def best(self, mode):
        """(concentration, eta) minimising the given mode."""
        etas = [p.eta(mode) for p in self.points]
        i = int(np.argmin(etas))
        return self.points[i].nv_concentration, etas[i]


def noise_at_concentration(laws: ScalingLaws, nv_conc, hyperfine_split=2.3):
    """Noise widths at ``nv_conc``.

    Assumes the spin concentration equals the NV concentration (every P1
    donor has given its electron to an NV and carries no spin).
    """
    if not nv_conc > 0:
        raise ValueError(f"nv_conc must be positive, got {nv_conc}")
    return NoiseParams(
        gamma=laws.gamma_intercept + laws.gamma_slope * nv_conc,
        db=laws.db_intercept + laws.db_slope * nv_conc,
        de=laws.de_intercept + laws.de_slope * nv_conc,
        hyperfine_split=hyperfine_split,
    )


def max_gradient(spectrum):
    """Largest ``|d values / d freqs|`` over interior points (central differences)."""
    f = np.asarray(spectrum.freqs, dtype=float)
    v = np.asarray(spectrum.values, dtype=float)
    if f.size < 3:
        raise ValueError("max_gradient needs at least 3 grid points")
    return float(np.max(np.abs((v[2:] - v[:-2]) / (f[2:] - f[:-2]))))


def sensitivity(c_max, cfg: SensitivityConfig, nv_conc):
    """Sensitivity in mK/sqrt(Hz) for a slope ``c_max`` (signal per MHz)."""
    if not c_max > 0:
        raise UndefinedSensitivityError(f"maximum gradient must be positive, got {c_max}")
    if not nv_conc > 0:
        raise ValueError(f"nv_conc must be positive, got {nv_conc}")
    kelvin = cfg.sigma / (c_max * abs(cfg.c_t) * math.sqrt(nv_conc / cfg.ref_concentration)
                          * math.sqrt(cfg.od_nd))
    return 1e3 * kelvin


def volume_scaled(eta, from_volume, to_volume):
    """Sensitivity for a different detection volume (``eta`` scales as ``1/sqrt(V)``)."""
    if not (from_volume > 0 and to_volume > 0):
        raise ValueError("volumes must be positive")
    return eta * math.sqrt(from_volume / to_volume)


def mode_config(mode, cfg: SensitivityConfig):
    """Simulation config of one measurement strategy, plus its N divisor."""
    d = zfs_frequency(0.0, 0.0, cfg.constants)
    common = dict(n_points=int(cfg.n_points), n_samples=int(cfg.n_samples), lambda_eff=cfg.lambda_eff,
                  contrast=1.0, baseline=1.0, normalize_to_peak=False, constants=cfg.constants)
    if mode == "dip":
        return SimulationConfig(freq_start=d - cfg.window, freq_stop=d + cfg.window, **common), 1.0
    if mode == "peak001":
        field = FieldVector(0.0, 0.0, cfg.peak_field_mt)
        line = d + project_field(field, cfg.constants.ge_mub)[0]
        return SimulationConfig(freq_start=line - cfg.window, freq_stop=line + cfg.window,
                                field=field, **common), 1.0
    if mode == "peakArb":
        field = FieldVector.from_polar(cfg.peak_field_mt, cfg.arb_theta_deg, cfg.arb_phi_deg)
        line = d + abs(project_field(field, cfg.constants.ge_mub)[cfg.arb_axis])
        # only one of the four orientations is measured
        return SimulationConfig(freq_start=line - cfg.window, freq_stop=line + cfg.window,
                                field=field, axes=cfg.arb_axis, **common), 4.0
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def mode_eta(mode, noise: NoiseParams, cfg: SensitivityConfig, nv_conc, seed=DEFAULT_SEED):
    sim, divisor = mode_config(mode, cfg)
    c_max = max_gradient(simulate_spectrum(sim, noise, seed))
    return sensitivity(c_max, cfg, nv_conc / divisor)


def default_concentrations():
    """20 log-spaced values over [0.5, 50] plus the calibration point 5.0."""
    return sorted(set(np.geomspace(0.5, 50.0, 20).tolist()) | {CALIBRATION_CONCENTRATION})


def sweep(laws: ScalingLaws, cfg: SensitivityConfig, concentrations=None, mode="dip",
          seed=DEFAULT_SEED):
    """Sensitivity of all three strategies at every concentration.

    Every spectrum reuses ``seed`` (common random numbers), so the curve is
    smooth in the concentration.  The argmin refers to ``mode``.
    """
    concentrations = default_concentrations() if concentrations is None else list(concentrations)
    if not concentrations:
        raise ValueError("concentration list is empty")
    if any(not c > 0 for c in concentrations):
        raise ValueError("concentrations must be positive")
    if any(b <= a for a, b in zip(concentrations, concentrations[1:])):
        raise ValueError("concentrations must be strictly ascending")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    points = []
    for c in concentrations:
        noise = noise_at_concentration(laws, c)
        etas = [mode_eta(m, noise, cfg, c, seed) for m in MODES]
        log.debug("n=%.4g eta=%s", c, etas)
        points.append(SensitivityPoint(float(c), *etas))
    result = SweepResult(points, mode, 0.0, 0.0, cfg.sigma)
    result.argmin_concentration, result.argmin_eta = result.best(mode)
    return result


def calibrate_sigma(laws: ScalingLaws, cfg: SensitivityConfig, nv_conc=CALIBRATION_CONCENTRATION,
                    target_eta=CALIBRATION_ETA_MK, seed=DEFAULT_SEED):
    """``sigma`` that makes the dip-mode sensitivity at ``nv_conc`` equal ``target_eta``."""
    unit = replace(cfg, sigma=1.0)
    return target_eta / mode_eta("dip", noise_at_concentration(laws, nv_conc), unit, nv_conc, seed)


# calibration file: key -> (dataclass, field)
_LAW_KEYS = {
    "gamma_intercept_mhz": "gamma_intercept",
    "gamma_slope_mhz_per_1e17_cm3": "gamma_slope",
    "db_intercept_mhz": "db_intercept",
    "db_slope_mhz_per_1e17_cm3": "db_slope",
    "de_intercept_mhz": "de_intercept",
    "de_slope_mhz_per_1e17_cm3": "de_slope",
}
_CFG_KEYS = {
    "sigma_per_sqrt_hz": "sigma",
    "od_nd": "od_nd",
    "ref_concentration_1e17_cm3": "ref_concentration",
    "volume_um3": "volume",
}
_INFO_KEYS = ("calibration_concentration_1e17_cm3", "calibration_eta_mk_per_sqrt_hz", "seed")


@dataclass(frozen=True)
class Calibration:
    laws: ScalingLaws
    config: SensitivityConfig
    info: dict = dc_field(default_factory=dict)


def write_calibration(path, laws: ScalingLaws, cfg: SensitivityConfig, info=None):
    lines = ["# sensitivity calibration (key=value; concentrations in 1e17 cm^-3)"]
    for key, name in _CFG_KEYS.items():
        lines.append(f"{key}={getattr(cfg, name)!r}")
    for key, name in _LAW_KEYS.items():
        lines.append(f"{key}={getattr(laws, name)!r}")
    for key, value in (info or {}).items():
        lines.append(f"{key}={value!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_calibration(text, source=None, base: SensitivityConfig = SensitivityConfig()):
    """Parse calibration text; every schema problem is collected before raising."""
    problems = []
    values = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            problems.append(f"line {lineno}: expected key=value, got {raw!r}")
            continue
        if key not in _LAW_KEYS and key not in _CFG_KEYS and key not in _INFO_KEYS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        try:
            number = float(value)
        except ValueError:
            problems.append(f"line {lineno}: {key} is not a number: {value.strip()!r}")
            continue
        if not math.isfinite(number):
            problems.append(f"line {lineno}: {key} must be finite")
            continue
        values[key] = number
    for key in list(_LAW_KEYS) + list(_CFG_KEYS):
        if key not in seen:
            problems.append(f"missing key {key!r}")
    for key, name in _LAW_KEYS.items():
        if key in values and values[key] < 0:
            problems.append(f"{key} must be non-negative, got {values[key]}")
    checks = {"sigma_per_sqrt_hz": lambda v: v > 0, "od_nd": lambda v: v >= 1,
              "ref_concentration_1e17_cm3": lambda v: v > 0, "volume_um3": lambda v: v > 0}
    for key, ok in checks.items():
        if key in values and not ok(values[key]):
            problems.append(f"{key} out of range: {values[key]}")
    if problems:
        raise CalibrationError(problems, source)
    laws = ScalingLaws(**{name: values[key] for key, name in _LAW_KEYS.items()})
    cfg = replace(base, **{name: values[key] for key, name in _CFG_KEYS.items()})
    info = {k: values[k] for k in _INFO_KEYS if k in values}
    return Calibration(laws, cfg, info)


def load_calibration(path=None, base: SensitivityConfig = SensitivityConfig()):
    """Read a calibration file, or the shipped default when ``path`` is None."""
    if path is None:
        text = resources.files("nvensemble.data").joinpath(DEFAULT_CALIBRATION).read_text()
        return parse_calibration(text, DEFAULT_CALIBRATION, base)
    with open(path) as fh:
        return parse_calibration(fh.read(), str(path), base)


def write_sweep_csv(result: SweepResult, path):
    """Sweep table plus a trailing ``#`` summary line naming the optimum."""
    with open(path, "w", newline="") as fh:
        fh.write("nv_conc_1e17_cm3,eta_dip_mk,eta_peak001_mk,eta_peakarb_mk\n")
        for p in result.points:
            fh.write(f"{p.nv_concentration!r},{p.eta_dip!r},{p.eta_peak001!r},{p.eta_peak_arb!r}\n")
        fh.write(f"# argmin mode={result.mode} nv_conc_1e17_cm3={result.argmin_concentration!r} "
                 f"eta_mk={result.argmin_eta!r}; absolute scale fixed by calibrating sigma="
                 f"{result.sigma!r}, not predicted\n")


def sweep_to_dict(result: SweepResult):
    return {"points": [asdict(p) for p in result.points], "mode": result.mode,
            "argmin_concentration": result.argmin_concentration, "argmin_eta": result.argmin_eta,
            "sigma": result.sigma}
