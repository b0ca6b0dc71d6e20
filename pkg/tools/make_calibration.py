"""Regenerate the shipped sensitivity calibration.

Pins the dip-mode sensitivity at 5e17 cm^-3 to 0.76 mK/sqrt(Hz) with the
default scaling laws and measurement model.
"""
import argparse
from pathlib import Path

from nvensemble.sensitivity import (CALIBRATION_CONCENTRATION, CALIBRATION_ETA_MK, DEFAULT_CALIBRATION,
                                    DEFAULT_LAWS, SensitivityConfig, calibrate_sigma, write_calibration)
from nvensemble.simulate import DEFAULT_SEED
from dataclasses import replace

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src" / "nvensemble" / "data"
                                         / DEFAULT_CALIBRATION))
args = parser.parse_args()

cfg = SensitivityConfig()
sigma = calibrate_sigma(DEFAULT_LAWS, cfg, seed=DEFAULT_SEED)
write_calibration(args.out, DEFAULT_LAWS, replace(cfg, sigma=sigma),
                  {"calibration_concentration_1e17_cm3": CALIBRATION_CONCENTRATION,
                   "calibration_eta_mk_per_sqrt_hz": CALIBRATION_ETA_MK, "seed": DEFAULT_SEED})
print(f"sigma={sigma!r} -> {args.out}")
