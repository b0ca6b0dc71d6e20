"""Staged estimation of the ensemble noise widths from measured spectra.

Stages, each a multi-start downhill-simplex search over one width:

1. ``gamma`` from the central feature of the zero-field spectrum (a window
   of +-3 MHz around the zero-field splitting), other widths held;
2. ``db`` from the line width of the in-field spectrum;
3. ``de`` from the full zero-field spectrum;

followed by an optional joint polish of all three widths on both spectra.

The signal model is ``baseline - contrast * E(omega)``.  For any trial
widths the two nuisance parameters enter linearly and are solved exactly by
least squares, so every simplex only moves the widths.  The signal model
is the noise-free ensemble mean by default; the Monte Carlo models
reuse one seed for all evaluations.  Either way the objective is a
deterministic function of the widths.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import asdict, dataclass, field as dc_field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .averaging import DEFAULT_FIELD_NODES, expected_excitation
from .physics import DEFAULT_CONSTANTS, PhysicalConstants, zfs_frequency
from .sampling import FieldVector, NoiseParams, project_field
from .simulate import DEFAULT_LAMBDA_EFF, ensemble_excitation

log = logging.getLogger(__name__)

DEFAULT_FIT_SEED = 7
MIN_POINTS = 20
GAMMA_WINDOW_MHZ = 3.0
FLAT_TOLERANCE = 1e-3
RESTART_FACTORS = 10.0 ** np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
# widths are searched in log space; this keeps db/de from collapsing to -inf
MIN_WIDTH = 1e-4
MODELS = ("expected", "conditional", "direct")
SCAN_GRID = {
    "gamma": tuple(np.geomspace(0.05, 5.0, 5)),
    "db": tuple(np.geomspace(0.05, 5.0, 5)),
    "de": tuple(np.geomspace(0.2, 20.0, 5)),
}
SCAN_NODES = 256


class SpectrumFormatError(ValueError):
    """Malformed spectrum file; ``line`` is the first offending line (1-based)."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


class ParseError(SpectrumFormatError):
    pass


class OrderingError(SpectrumFormatError):
    pass


class TooFewPointsError(SpectrumFormatError):
    pass


class FitError(RuntimeError):
    """A fit stage failed; ``stage`` names it."""

    def __init__(self, message, stage=None):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage


class FlatSpectrumError(FitError):
    pass


class InsufficientSpanError(FitError):
    pass


class ConvergenceError(FitError):
    pass


@dataclass
class ExperimentalSpectrum:
    freqs: np.ndarray
    values: np.ndarray
    label: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.freqs.ndim != 1 or self.freqs.shape != self.values.shape:
            raise ValueError("freqs and values must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.freqs)) and np.all(np.isfinite(self.values))):
            raise ValueError("spectrum contains non-finite values")
        if len(self.freqs) < MIN_POINTS:
            raise TooFewPointsError(f"need at least {MIN_POINTS} points, got {len(self.freqs)}")
        if np.any(np.diff(self.freqs) <= 0):
            raise OrderingError("frequencies must be strictly increasing")

    @classmethod
    def from_spectrum(cls, spectrum, label=""):
        return cls(spectrum.freqs.copy(), spectrum.values.copy(), label)

    def shifted(self, offset):
        return ExperimentalSpectrum(self.freqs, self.values + offset, self.label, dict(self.meta))


def load_spectrum(path, normalize=True):
    """Read a two-column ``freq_mhz,intensity`` CSV.

    A non-numeric first row is treated as a header.  Values are min-max
    rescaled to [0, 1] unless the spectrum is flat; the original range is
    kept in ``meta``.
    """
    freqs, values = [], []
    prev = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, found {len(row)}", path, lineno)
            try:
                f, v = float(row[0]), float(row[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"non-numeric cell in {row!r}", path, lineno) from None
            if not (np.isfinite(f) and np.isfinite(v)):
                raise ParseError(f"non-finite value in {row!r}", path, lineno)
            if prev is not None and f <= prev:
                raise OrderingError(f"frequency {f} does not increase (previous {prev})", path, lineno)
            prev = f
            freqs.append(f)
            values.append(v)
    if len(freqs) < MIN_POINTS:
        raise TooFewPointsError(f"need at least {MIN_POINTS} data rows, got {len(freqs)}", path)
    values = np.array(values)
    lo, hi = float(values.min()), float(values.max())
    meta = {"source": str(path), "raw_min": lo, "raw_max": hi, "normalized": False}
    if normalize and hi > lo:
        values = (values - lo) / (hi - lo)
        meta["normalized"] = True
    return ExperimentalSpectrum(np.array(freqs), values, label=str(path), meta=meta)


@dataclass(frozen=True)
class FitSettings:
    """Model settings shared by every stage.

    ``model="expected"`` compares the data with the noise-free ensemble mean
    (:func:`nvensemble.averaging.expected_excitation`, ``n_nodes`` field
    nodes).  ``"conditional"`` and ``"direct"`` use the Monte Carlo
    estimators of the simulator with ``n_samples`` centers drawn from the
    fixed ``seed`` (common random numbers across evaluations).
    """

    n_samples: int = 10_000
    seed: int = DEFAULT_FIT_SEED
    lambda_eff: float = DEFAULT_LAMBDA_EFF
    temperature_offset: float = 0.0
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    gamma_window: float = GAMMA_WINDOW_MHZ
    xatol: float = 1e-4
    maxiter: int = 400
    restarts: tuple = tuple(RESTART_FACTORS)
    model: str = "expected"
    n_nodes: int = DEFAULT_FIELD_NODES

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")

    @property
    def center(self):
        return zfs_frequency(self.temperature_offset, 0.0, self.constants)


@dataclass
class StageResult:
    stage: str
    noise: NoiseParams
    contrast: float
    baseline: float
    residual: float
    initial_residual: float
    n_evals: int

    def as_dict(self):
        out = asdict(self)
        out["noise"] = asdict(self.noise)
        return out


@dataclass
class FitResult:
    noise: NoiseParams
    contrast: float
    baseline: float
    residual: float
    seed: int
    stage_trace: list = dc_field(default_factory=list)
    in_field_contrast: Optional[float] = None
    in_field_baseline: Optional[float] = None

    def key_values(self):
        return {
            "gamma_mhz": self.noise.gamma,
            "db_mhz": self.noise.db,
            "de_mhz": self.noise.de,
            "contrast": self.contrast,
            "baseline": self.baseline,
            "residual": self.residual,
            "seed": self.seed,
        }


def _check_dynamic_range(spec: ExperimentalSpectrum, stage):
    lo, hi = spec.values.min(), spec.values.max()
    scale = max(abs(lo), abs(hi))
    if scale == 0 or (hi - lo) / scale < FLAT_TOLERANCE:
        raise FlatSpectrumError("spectrum is flat (relative dynamic range below 1e-3)", stage)


def linear_nuisance(model, data):
    """Best ``(contrast, baseline, rms)`` for ``data ~ baseline - contrast * model``."""
    a = np.column_stack([np.ones_like(model), -model])
    coef, *_ = np.linalg.lstsq(a, data, rcond=None)
    resid = data - a @ coef
    return float(coef[1]), float(coef[0]), float(np.sqrt(np.mean(resid * resid)))


class _Target:
    """One spectrum plus the orientation offsets of its simulation."""

    def __init__(self, spec, static_j, settings: FitSettings, mask=None):
        self.freqs = spec.freqs if mask is None else spec.freqs[mask]
        self.values = spec.values if mask is None else spec.values[mask]
        self.static_j = np.asarray(static_j, dtype=float)
        self.settings = settings

    def model(self, noise):
        s = self.settings
        if s.model == "expected":
            return expected_excitation(self.freqs, noise, s.lambda_eff, s.center, self.static_j, s.n_nodes)
        exc, _ = ensemble_excitation(self.freqs, noise, s.lambda_eff, s.center, self.static_j,
                                     s.seed, s.n_samples, s.model)  # sobol points
        return exc

    def misfit(self, noise):
        return linear_nuisance(self.model(noise), self.values)


def _noise_from(base: NoiseParams, names, logw):
    return base.replace(**{n: float(max(np.exp(x), MIN_WIDTH)) for n, x in zip(names, logw)})


def _minimize(targets, base, names, starts, settings, stage):
    """Multi-start simplex over ``log(width)`` of ``names``; lowest misfit wins,
    earlier start breaks ties."""

    def objective(logw):
        noise = _noise_from(base, names, logw)
        return sum(t.misfit(noise)[2] ** 2 * len(t.values) for t in targets)

    best = None
    n_evals = 0
    for x0 in starts:
        x0 = np.log(np.maximum(np.atleast_1d(x0), MIN_WIDTH))
        simplex = np.vstack([x0] + [x0 + 0.3 * np.eye(len(x0))[i] for i in range(len(x0))])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": settings.xatol,
                                "fatol": np.inf, "maxiter": settings.maxiter * len(x0)})
        n_evals += res.nfev
        log.debug("%s start %s -> %s (f=%.6g, %s)", stage, np.exp(x0), np.exp(res.x), res.fun, res.message)
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        raise ConvergenceError(f"simplex did not converge: {best.message}", stage)
    return _noise_from(base, names, best.x), n_evals


def _stage(stage, targets, base: NoiseParams, names, settings, starts):
    initial = [t.misfit(base) for t in targets]
    noise, n_evals = _minimize(targets, base, names, starts, settings, stage)
    final = [t.misfit(noise) for t in targets]

    def total(fits):
        n = sum(len(t.values) for t in targets)
        return float(np.sqrt(sum(f[2] ** 2 * len(t.values) for f, t in zip(fits, targets)) / n))

    before, after = total(initial), total(final)
    if after > before:
        # a start at the initial point can only improve on it
        noise, final, after = base, initial, before
    return StageResult(stage, noise, final[0][0], final[0][1], after, before, n_evals), final


def _starts(value, settings):
    return [np.array([value * f]) for f in settings.restarts]


def _zero_field_target(spec, settings, window=None):
    mask = None
    if window is not None:
        mask = np.abs(spec.freqs - settings.center) <= window
    return _Target(spec, [0.0], settings, mask)


def fit_gamma(zero_field: ExperimentalSpectrum, init: NoiseParams, settings=FitSettings()):
    """Fit ``gamma`` (plus contrast/baseline) to the central feature."""
    stage = "gamma"
    _check_dynamic_range(zero_field, stage)
    c = settings.center
    if not zero_field.freqs[0] <= c <= zero_field.freqs[-1]:
        raise InsufficientSpanError(f"spectrum does not contain the zero-field splitting {c:.3f} MHz", stage)
    target = _zero_field_target(zero_field, settings, settings.gamma_window)
    if len(target.values) < 5:
        raise InsufficientSpanError("fewer than 5 points inside the central window", stage)
    result, _ = _stage(stage, [target], init, ["gamma"], settings, _starts(init.gamma, settings))
    return result


def _check_field_span(spec, static_j, settings, known, stage):
    c = settings.center
    margin = known.hyperfine_split + 1.0
    lines = np.concatenate([c - np.abs(static_j), c + np.abs(static_j)])
    if lines.min() - margin < spec.freqs[0] or lines.max() + margin > spec.freqs[-1]:
        raise InsufficientSpanError(
            f"spectrum [{spec.freqs[0]:.2f}, {spec.freqs[-1]:.2f}] MHz does not cover the split lines "
            f"at {lines.min():.2f} and {lines.max():.2f} MHz", stage)


def fit_inhomogeneous_field(in_field: ExperimentalSpectrum, field: FieldVector, known: NoiseParams,
                            settings=FitSettings()):
    """Fit ``db`` on the in-field spectrum with ``gamma`` and ``de`` held."""
    stage = "db"
    _check_dynamic_range(in_field, stage)
    static_j = project_field(field, settings.constants.ge_mub)
    _check_field_span(in_field, static_j, settings, known, stage)
    target = _Target(in_field, static_j, settings)
    result, _ = _stage(stage, [target], known, ["db"], settings, _starts(max(known.db, 0.05), settings))
    return result


def fit_strain(zero_field: ExperimentalSpectrum, known: NoiseParams, settings=FitSettings()):
    """Fit ``de`` on the full zero-field spectrum with ``gamma`` and ``db`` held."""
    stage = "de"
    _check_dynamic_range(zero_field, stage)
    target = _zero_field_target(zero_field, settings)
    result, _ = _stage(stage, [target], known, ["de"], settings, _starts(max(known.de, 0.05), settings))
    return result


def coarse_scan(zero_field: ExperimentalSpectrum, in_field: ExperimentalSpectrum, field: FieldVector,
                init: NoiseParams, settings=FitSettings(), grid=SCAN_GRID, n_nodes=SCAN_NODES):
    """Joint misfit on a log grid of widths; the best point if it beats ``init``.

    The staged searches are local, and the central-window ``gamma`` stage
    misleads when the held strain width is far off, so they start from the
    best point of this scan.
    """
    stage = "scan"
    _check_dynamic_range(zero_field, stage)
    _check_dynamic_range(in_field, stage)
    coarse = replace(settings, n_nodes=n_nodes)
    targets = [_zero_field_target(zero_field, coarse),
               _Target(in_field, project_field(field, settings.constants.ge_mub), coarse)]

    def cost(noise):
        return sum(t.misfit(noise)[2] ** 2 * len(t.values) for t in targets)

    n = sum(len(t.values) for t in targets)
    best, best_cost = init, cost(init)
    initial = best_cost
    for g, b, e in itertools.product(grid["gamma"], grid["db"], grid["de"]):
        trial = init.replace(gamma=g, db=b, de=e)
        c = cost(trial)
        if c < best_cost:
            best, best_cost = trial, c
    c, b, _ = targets[0].misfit(best)
    size = len(grid["gamma"]) * len(grid["db"]) * len(grid["de"]) + 1
    return StageResult(stage, best, c, b, float(np.sqrt(best_cost / n)), float(np.sqrt(initial / n)), size)


def fit_all(zero_field: ExperimentalSpectrum, in_field: ExperimentalSpectrum, field: FieldVector,
            init: NoiseParams, settings=FitSettings(), refine=True, scan=True):
    """Optionally seed from :func:`coarse_scan`, run the three stages, then
    (``refine``) polish all widths jointly.

    The joint pass starts from the staged estimate and minimises the summed
    squared misfit of both spectra, each with its own contrast and baseline.
    """
    if zero_field is None:
        raise FitError("zero-field spectrum is required", "input")
    if in_field is None:
        raise FitError("in-field spectrum is required to separate db from gamma", "input")
    if field is None:
        raise FitError("field configuration of the in-field spectrum is required", "input")

    trace = []
    noise = init
    if scan:
        res = coarse_scan(zero_field, in_field, field, init, settings)
        trace.append(res)
        noise = res.noise
    for step in ("gamma", "db", "de"):
        if step == "gamma":
            res = fit_gamma(zero_field, noise, settings)
        elif step == "db":
            res = fit_inhomogeneous_field(in_field, field, noise, settings)
        else:
            res = fit_strain(zero_field, noise, settings)
        trace.append(res)
        noise = res.noise
        log.info("stage %s: gamma=%.4g db=%.4g de=%.4g rms=%.4g", step, noise.gamma, noise.db,
                 noise.de, res.residual)

    zf = _zero_field_target(zero_field, settings)
    inf = _Target(in_field, project_field(field, settings.constants.ge_mub), settings)
    if refine:
        start = [np.array([noise.gamma, max(noise.db, 0.01), max(noise.de, 0.01)])]
        res, fits = _stage("joint", [zf, inf], noise, ["gamma", "db", "de"], settings, start)
        trace.append(res)
        noise = res.noise
    else:
        fits = [zf.misfit(noise), inf.misfit(noise)]

    zc, zb, zr = fits[0]
    ic, ib, _ = fits[1]
    return FitResult(noise, zc, zb, zr, settings.seed, trace, ic, ib)


def fitted_curve(spec: ExperimentalSpectrum, noise: NoiseParams, settings=FitSettings(), field=None):
    """Best-fit signal on ``spec``'s grid (contrast and baseline profiled)."""
    static_j = np.zeros(1) if field is None else project_field(field, settings.constants.ge_mub)
    model = _Target(spec, static_j, settings).model(noise)
    contrast, baseline, _ = linear_nuisance(model, spec.values)
    return baseline - contrast * model


def write_fit_outputs(result: FitResult, report_path, kv_path, extra=None):
    """Human-readable report plus a ``key=value`` file."""
    kv = result.key_values()
    with open(kv_path, "w") as fh:
        for k, v in kv.items():
            fh.write(f"{k}={v!r}\n")
    lines = ["ODMR noise-parameter fit", ""]
    for k, v in kv.items():
        lines.append(f"  {k:<10} {v!r}")
    if result.in_field_contrast is not None:
        lines.append(f"  in-field contrast {result.in_field_contrast!r}, baseline {result.in_field_baseline!r}")
    lines += ["", "stages:"]
    for st in result.stage_trace:
        lines.append(f"  {st.stage:<6} gamma={st.noise.gamma!r} db={st.noise.db!r} de={st.noise.de!r} "
                     f"rms {st.initial_residual!r} -> {st.residual!r} ({st.n_evals} evaluations)")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    with open(report_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_key_values(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out
