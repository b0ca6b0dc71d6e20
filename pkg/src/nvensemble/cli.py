"""Command-line interface: ``nvensemble {simulate,fit,sweep,project-field}``.

Each command reads one INI config file whose keys carry their unit
(``freq_start_mhz``, ``bz_mt`` ...).  Outputs are written atomically: on any
failure nothing is left behind, and the exit status is non-zero.

Exit codes: 0 success, 2 invalid config or arguments, 3 file I/O or
input-format error, 4 fit failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .fitting import (MODELS, FitError, FitSettings, SpectrumFormatError, fit_all,
                      fitted_curve, load_spectrum, write_fit_outputs)
from .physics import DEFAULT_CONSTANTS
from .sampling import NV_AXES, UNIFORM_METHODS, FieldVector, NoiseParams, project_field
from .sensitivity import (MODES, CalibrationError, SensitivityConfig, default_concentrations,
                          load_calibration, sweep, sweep_to_dict, write_sweep_csv)
from .simulate import (DEFAULT_LAMBDA_EFF, DEFAULT_SEED, ESTIMATORS, SimulationConfig,
                       simulate_spectrum, write_spectrum_csv)

log = logging.getLogger("nvensemble")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FIT = 4


class ConfigError(ValueError):
    """Invalid config; ``problems`` holds one ``section.key: message`` per issue."""

    def __init__(self, problems, path=None):
        self.problems = list(problems)
        head = f"{path}: " if path else ""
        super().__init__(head + "invalid config:\n  " + "\n  ".join(self.problems))


class _Reader:
    """Typed access to one config section that records every problem."""

    def __init__(self, parser, section, problems, allowed):
        self.name = section
        self.items = dict(parser.items(section)) if parser.has_section(section) else {}
        self.problems = problems
        for key in self.items:
            if key not in allowed:
                problems.append(f"{section}.{key}: unknown key")

    def __contains__(self, key):
        return key in self.items

    def _get(self, key, default, convert, kind):
        if key not in self.items:
            if default is _REQUIRED:
                self.problems.append(f"{self.name}.{key}: required")
            return None if default is _REQUIRED else default
        raw = self.items[key].strip()
        try:
            return convert(raw)
        except ValueError:
            self.problems.append(f"{self.name}.{key}: expected {kind}, got {raw!r}")
            return None if default is _REQUIRED else default

    def float(self, key, default=None):
        def conv(raw):
            value = float(raw)
            if not np.isfinite(value):
                raise ValueError
            return value
        return self._get(key, default, conv, "a finite number")

    def int(self, key, default=None):
        return self._get(key, default, int, "an integer")

    def bool(self, key, default=None):
        table = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

        def conv(raw):
            if raw.lower() not in table:
                raise ValueError
            return table[raw.lower()]
        return self._get(key, default, conv, "true or false")

    def choice(self, key, options, default=None):
        def conv(raw):
            if raw not in options:
                raise ValueError
            return raw
        return self._get(key, default, conv, "one of " + ", ".join(map(str, options)))

    def floats(self, key, default=None):
        def conv(raw):
            parts = [p for p in raw.replace(",", " ").split()]
            values = [float(p) for p in parts]
            if not all(np.isfinite(values)):
                raise ValueError
            return values
        return self._get(key, default, conv, "a list of numbers")

    def check(self, ok, key, message):
        if not ok:
            self.problems.append(f"{self.name}.{key}: {message}")


_REQUIRED = object()

SIMULATION_KEYS = {"freq_start_mhz", "freq_stop_mhz", "n_points", "n_samples", "lambda_eff_mhz",
                   "temperature_offset_k", "contrast", "baseline", "normalize_to_peak", "axes",
                   "estimator", "sampler"}
NOISE_KEYS = {"gamma_mhz", "db_mhz", "de_mhz", "hyperfine_split_mhz", "z_strain_factor"}
FIELD_KEYS = {"bx_mt", "by_mt", "bz_mt", "magnitude_mt", "direction", "theta_deg", "phi_deg"}
FIT_KEYS = {"init_gamma_mhz", "init_db_mhz", "init_de_mhz", "hyperfine_split_mhz", "lambda_eff_mhz",
            "temperature_offset_k", "gamma_window_mhz", "model", "n_samples", "n_nodes", "refine", "scan"}
SWEEP_KEYS = {"concentrations_1e17_cm3", "mode", "n_samples", "n_points", "window_mhz", "peak_field_mt",
              "lambda_eff_mhz", "arb_theta_deg", "arb_phi_deg", "arb_axis"}


def read_config(path, sections):
    """Parse ``path``; ``sections`` maps allowed section names to their keys."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"], path) from None
    problems = [f"{name}: unknown section" for name in parser.sections() if name not in sections]
    readers = {name: _Reader(parser, name, problems, keys) for name, keys in sections.items()}
    readers["_present"] = {name for name in parser.sections()}
    return readers, problems


def parse_field(r: _Reader, required=False):
    present = [k for k in FIELD_KEYS if k in r]
    if not present:
        if required:
            r.problems.append(f"{r.name}: a field is required (bx_mt/by_mt/bz_mt or magnitude_mt "
                              "with direction or theta_deg/phi_deg)")
        return None
    cartesian = {"bx_mt", "by_mt", "bz_mt"} & set(present)
    polar = {"theta_deg", "phi_deg"} & set(present)
    if cartesian:
        r.check(not ({"magnitude_mt", "direction"} | polar) & set(present), "bx_mt",
                "give either components or magnitude_mt with a direction, not both")
        b = [r.float(k, 0.0) for k in ("bx_mt", "by_mt", "bz_mt")]
        return FieldVector(*b)
    magnitude = r.float("magnitude_mt", _REQUIRED)
    if "direction" in r:
        r.check(not polar, "direction", "give direction or theta_deg/phi_deg, not both")
        direction = r.floats("direction")
        if direction is not None and (len(direction) != 3 or not any(direction)):
            r.check(False, "direction", "expected three components, not all zero")
            return None
        if magnitude is None or direction is None:
            return None
        return FieldVector.from_direction(magnitude, direction)
    theta, phi = r.float("theta_deg", _REQUIRED), r.float("phi_deg", _REQUIRED)
    if None in (magnitude, theta, phi):
        return None
    return FieldVector.from_polar(magnitude, theta, phi)


def _noise(r: _Reader):
    values = dict(gamma=r.float("gamma_mhz", _REQUIRED), db=r.float("db_mhz", _REQUIRED),
                  de=r.float("de_mhz", _REQUIRED), hyperfine_split=r.float("hyperfine_split_mhz", 2.3),
                  z_strain_factor=r.float("z_strain_factor", 1.0 / 50.0))
    r.check(values["gamma"] is None or values["gamma"] > 0, "gamma_mhz", "must be positive")
    for key, name in (("db_mhz", "db"), ("de_mhz", "de"), ("hyperfine_split_mhz", "hyperfine_split")):
        r.check(values[name] is None or values[name] >= 0, key, "must be non-negative")
    zf = values["z_strain_factor"]
    r.check(zf is None or 0 < zf <= 1, "z_strain_factor", "must lie in (0, 1]")
    return values


def load_simulation_config(path):
    readers, problems = read_config(path, {"simulation": SIMULATION_KEYS, "noise": NOISE_KEYS,
                                           "field": FIELD_KEYS})
    s, n = readers["simulation"], readers["noise"]
    if "noise" not in readers["_present"]:
        problems.append("noise: section is required")
    start, stop = s.float("freq_start_mhz", 2845.0), s.float("freq_stop_mhz", 2895.0)
    s.check(start < stop, "freq_start_mhz",
            f"must be below simulation.freq_stop_mhz (got {start!r} >= {stop!r})")
    axes = s.choice("axes", ("all", "0", "1", "2", "3"), "all")
    kw = dict(freq_start=start, freq_stop=stop, n_points=s.int("n_points", 501),
              n_samples=s.int("n_samples", 10_000), lambda_eff=s.float("lambda_eff_mhz", DEFAULT_LAMBDA_EFF),
              temperature_offset=s.float("temperature_offset_k", 0.0), contrast=s.float("contrast", 0.1),
              baseline=s.float("baseline", 1.0), normalize_to_peak=s.bool("normalize_to_peak", True),
              axes=axes if axes == "all" else int(axes),
              estimator=s.choice("estimator", ESTIMATORS, "conditional"),
              sampler=s.choice("sampler", UNIFORM_METHODS, "sobol"))
    s.check(kw["n_points"] >= 2, "n_points", "must be at least 2")
    s.check(kw["n_samples"] >= 1, "n_samples", "must be at least 1")
    s.check(kw["lambda_eff"] >= 0, "lambda_eff_mhz", "must be non-negative")
    s.check(0 < kw["contrast"] <= 1, "contrast", "must lie in (0, 1]")
    noise = _noise(n)
    field = parse_field(readers["field"])
    if problems:
        raise ConfigError(problems, path)
    try:
        return SimulationConfig(field=field, **kw), NoiseParams(**noise)
    except ValueError as exc:
        raise ConfigError([str(exc)], path) from None


def load_fit_config(path, seed):
    readers, problems = read_config(path, {"fit": FIT_KEYS, "field": FIELD_KEYS})
    f = readers["fit"]
    field = parse_field(readers["field"], required=True)
    init = dict(gamma=f.float("init_gamma_mhz", 1.0), db=f.float("init_db_mhz", 1.0),
                de=f.float("init_de_mhz", 3.0), hyperfine_split=f.float("hyperfine_split_mhz", 2.3))
    for key, name in (("init_gamma_mhz", "gamma"), ("init_db_mhz", "db"), ("init_de_mhz", "de")):
        f.check(init[name] > 0, key, "must be positive")
    f.check(init["hyperfine_split"] >= 0, "hyperfine_split_mhz", "must be non-negative")
    settings = dict(seed=seed, lambda_eff=f.float("lambda_eff_mhz", DEFAULT_LAMBDA_EFF),
                    temperature_offset=f.float("temperature_offset_k", 0.0),
                    gamma_window=f.float("gamma_window_mhz", 3.0), model=f.choice("model", MODELS, "expected"),
                    n_samples=f.int("n_samples", 10_000), n_nodes=f.int("n_nodes", 1024))
    f.check(settings["gamma_window"] > 0, "gamma_window_mhz", "must be positive")
    f.check(settings["n_samples"] >= 1, "n_samples", "must be at least 1")
    f.check(settings["n_nodes"] >= 1, "n_nodes", "must be at least 1")
    flags = dict(refine=f.bool("refine", True), scan=f.bool("scan", True))
    if problems:
        raise ConfigError(problems, path)
    return field, NoiseParams(**init), FitSettings(**settings), flags


def load_sweep_config(path):
    if path is None:
        return default_concentrations(), "dip", {}
    readers, problems = read_config(path, {"sweep": SWEEP_KEYS})
    s = readers["sweep"]
    concs = s.floats("concentrations_1e17_cm3", default_concentrations())
    if concs is not None:
        s.check(len(concs) > 0, "concentrations_1e17_cm3", "must not be empty")
        s.check(all(c > 0 for c in concs), "concentrations_1e17_cm3", "must be positive")
        s.check(all(b > a for a, b in zip(concs, concs[1:])), "concentrations_1e17_cm3",
                "must be strictly ascending")
    mode = s.choice("mode", MODES, "dip")
    overrides = {}
    for key, name, conv in (("n_samples", "n_samples", s.int), ("n_points", "n_points", s.int),
                            ("window_mhz", "window", s.float), ("peak_field_mt", "peak_field_mt", s.float),
                            ("lambda_eff_mhz", "lambda_eff", s.float), ("arb_theta_deg", "arb_theta_deg", s.float),
                            ("arb_phi_deg", "arb_phi_deg", s.float), ("arb_axis", "arb_axis", s.int)):
        if key in s:
            value = conv(key)
            if value is not None:
                overrides[name] = value
    if problems:
        raise ConfigError(problems, path)
    return concs, mode, overrides


class AtomicOutputs:
    """Stage files next to their targets; publish all or none."""

    def __init__(self):
        self.staged = []

    def path(self, target):
        target = Path(target)
        tmp = target.with_name(f".{target.name}.{os.getpid()}.tmp")
        self.staged.append((tmp, target))
        return tmp

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for tmp, target in self.staged:
                os.replace(tmp, target)
        else:
            for tmp, _ in self.staged:
                tmp.unlink(missing_ok=True)
        return False


def _hash(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_metadata(path, command, cfg_hash, seed, extra=None):
    meta = {"command": command, "config_hash": cfg_hash, "seed": int(seed), "version": __version__}
    meta.update(extra or {})
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_out(args):
    if args.out is None:
        raise ConfigError([f"--out is required for {args.command}"])


def run_simulate(args):
    _require_out(args)
    if args.config is None:
        raise ConfigError(["--config is required for simulate"])
    cfg, noise = load_simulation_config(args.config)
    spectrum = simulate_spectrum(cfg, noise, args.seed)
    with AtomicOutputs() as outs:
        write_spectrum_csv(spectrum, outs.path(args.out))
        write_metadata(outs.path(f"{args.out}.meta.json"), "simulate", spectrum.meta["config_hash"], args.seed,
                       {"n_points": int(cfg.n_points), "n_samples": int(cfg.n_samples),
                        "base_d_mhz": spectrum.meta["base_d_mhz"]})
    log.info("wrote %s", args.out)


def _write_curve(path, spec, model):
    with open(path, "w", newline="") as fh:
        fh.write("freq_mhz,data,model\n")
        for f, d, m in zip(spec.freqs, spec.values, model):
            fh.write(f"{float(f)!r},{float(d)!r},{float(m)!r}\n")


def run_fit(args):
    _require_out(args)
    missing = [flag for flag, value in (("--config", args.config), ("--zero-field", args.zero_field),
                                        ("--in-field", args.in_field)) if value is None]
    if missing:
        raise ConfigError([f"{flag} is required for fit" for flag in missing])
    field, init, settings, flags = load_fit_config(args.config, args.seed)
    zero = load_spectrum(args.zero_field)
    infield = load_spectrum(args.in_field)
    result = fit_all(zero, infield, field, init, settings, **flags)
    payload = {"field": asdict(field), "init": asdict(init), "flags": flags,
               "settings": {k: v for k, v in asdict(settings).items() if k != "constants"},
               "zero_field_sha256": _file_hash(args.zero_field), "in_field_sha256": _file_hash(args.in_field)}
    with AtomicOutputs() as outs:
        write_fit_outputs(result, outs.path(f"{args.out}.report.txt"), outs.path(args.out))
        _write_curve(outs.path(f"{args.out}.zero_field.csv"), zero, fitted_curve(zero, result.noise, settings))
        _write_curve(outs.path(f"{args.out}.in_field.csv"), infield,
                     fitted_curve(infield, result.noise, settings, field))
        write_metadata(outs.path(f"{args.out}.meta.json"), "fit", _hash(payload), args.seed,
                       {"zero_field_sha256": payload["zero_field_sha256"],
                        "in_field_sha256": payload["in_field_sha256"]})
    log.info("gamma=%r db=%r de=%r", result.noise.gamma, result.noise.db, result.noise.de)


def run_sweep(args):
    _require_out(args)
    concs, mode, overrides = load_sweep_config(args.config)
    calibration = load_calibration(args.calibration)
    try:
        cfg = SensitivityConfig(**{**asdict(calibration.config), **overrides,
                                   "constants": calibration.config.constants})
    except ValueError as exc:
        raise ConfigError([f"sweep: {exc}"], args.config) from None
    result = sweep(calibration.laws, cfg, concs, mode, args.seed)
    payload = {"config": {k: v for k, v in asdict(cfg).items() if k != "constants"},
               "laws": asdict(calibration.laws), "concentrations": concs, "mode": mode}
    with AtomicOutputs() as outs:
        write_sweep_csv(result, outs.path(args.out))
        write_metadata(outs.path(f"{args.out}.meta.json"), "sweep", _hash(payload), args.seed,
                       {"calibration": "default" if args.calibration is None else str(args.calibration),
                        "argmin_nv_conc_1e17_cm3": result.argmin_concentration,
                        "argmin_eta_mk": result.argmin_eta, "mode": mode})
    log.info("argmin %s: n=%r eta=%r mK/sqrt(Hz)", mode, result.argmin_concentration, result.argmin_eta)
    return sweep_to_dict(result)


def run_project_field(args):
    if args.config is None:
        raise ConfigError(["--config is required for project-field"])
    # any command's config may be reused; only [field] is read
    readers, problems = read_config(args.config, {"simulation": SIMULATION_KEYS, "noise": NOISE_KEYS,
                                                  "fit": FIT_KEYS, "sweep": SWEEP_KEYS, "field": FIELD_KEYS})
    field = parse_field(readers["field"], required=True)
    if problems:
        raise ConfigError(problems, args.config)
    proj = project_field(field, DEFAULT_CONSTANTS.ge_mub)
    lines = ["axis,ux,uy,uz,zeeman_mhz"]
    for i, (u, j) in enumerate(zip(NV_AXES, proj)):
        lines.append(f"{i},{float(u[0])!r},{float(u[1])!r},{float(u[2])!r},{float(j)!r}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
        return
    with AtomicOutputs() as outs:
        with open(outs.path(args.out), "w") as fh:
            fh.write(text)


COMMANDS = {"simulate": run_simulate, "fit": run_fit, "sweep": run_sweep, "project-field": run_project_field}


def build_parser():
    parser = argparse.ArgumentParser(prog="nvensemble", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "simulate an ensemble ODMR spectrum"),
                           ("fit", "fit gamma, dB and dE to a zero-field / in-field spectrum pair"),
                           ("sweep", "temperature sensitivity versus NV concentration"),
                           ("project-field", "Zeeman frequency of each NV orientation")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="INI config file (unit-suffixed keys)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                       help=f"random seed (default {DEFAULT_SEED})")
        p.add_argument("--out", type=Path, help="output path")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "fit":
            p.add_argument("--zero-field", type=Path, help="zero-field spectrum CSV (freq_mhz,intensity)")
            p.add_argument("--in-field", type=Path, help="in-field spectrum CSV (freq_mhz,intensity)")
        if name == "sweep":
            p.add_argument("--calibration", type=Path, help="calibration file (default: shipped calibration)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args)
    except (ConfigError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpectrumFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FitError as exc:
        print(f"error: fit failed in stage {exc.stage!r}: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
