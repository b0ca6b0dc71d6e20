import numpy as np
import pytest

from nvensemble.averaging import expected_excitation
from nvensemble.physics import lorentzian
from nvensemble.sampling import FieldVector, NoiseParams, earth_field
from nvensemble.simulate import (SimulationConfig, Spectrum, convergence_check, ensemble_excitation,
                                 field_config, simulate_spectrum, write_spectrum_csv)

D = 2870.685
SHARP = NoiseParams(gamma=0.2, db=0.5, de=5.0, hyperfine_split=2.3)


def zero_field(**kw):
    base = dict(freq_start=D - 20, freq_stop=D + 20, n_points=401, n_samples=10_000)
    base.update(kw)
    return SimulationConfig(**base)


def local_extrema(v):
    i = np.arange(1, len(v) - 1)
    return i[(v[i] > v[i - 1]) & (v[i] > v[i + 1])], i[(v[i] < v[i - 1]) & (v[i] < v[i + 1])]


def central_amplitude(values, freqs):
    c = int(np.argmin(np.abs(freqs - D)))
    maxima, minima = local_extrema(values)
    left, right = minima[minima < c].max(), minima[minima > c].min()
    return values[c] - 0.5 * (values[left] + values[right])


def test_config_validation():
    with pytest.raises(ValueError, match="freq_start"):
        SimulationConfig(freq_start=2900, freq_stop=2850)
    for bad in (dict(n_points=1), dict(n_samples=0), dict(contrast=0.0), dict(contrast=1.5),
                dict(lambda_eff=-1.0), dict(axes=4), dict(estimator="x"), dict(sampler="x")):
        with pytest.raises(ValueError):
            SimulationConfig(**bad)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [0.0])
    with pytest.raises(ValueError):
        Spectrum([2.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [0.0, np.nan])


@pytest.mark.parametrize("estimator", ["conditional", "direct"])
def test_degenerate_noise_is_closed_form(estimator):
    cfg = zero_field(n_samples=64, estimator=estimator, contrast=0.2, baseline=1.0)
    s = simulate_spectrum(cfg, NoiseParams(0.4, 0.0, 0.0, hyperfine_split=0.0), seed=1)
    np.testing.assert_allclose(s.values, 1.0 - 0.2 * lorentzian(cfg.freqs, D, 0.4), rtol=1e-12)
    np.testing.assert_allclose(s.excitation, (0.29 / 0.4) ** 2 * lorentzian(cfg.freqs, D, 0.4), rtol=1e-12)


def test_no_drive_is_flat():
    s = simulate_spectrum(zero_field(lambda_eff=0.0, baseline=0.7), SHARP, seed=3)
    assert np.all(s.values == 0.7)


def test_sharp_dip_structure():
    cfg = zero_field()
    s = simulate_spectrum(cfg, SHARP)
    c = int(np.argmin(np.abs(cfg.freqs - D)))
    maxima, minima = local_extrema(s.values)
    assert c in maxima
    assert np.any(minima < c) and np.any(minima > c)


def test_central_feature_shrinks_with_gamma():
    cfg = zero_field()
    amps = [central_amplitude(simulate_spectrum(cfg, SHARP.replace(gamma=g), seed=99).values, cfg.freqs)
            for g in (0.1, 0.5, 1.0, 2.0)]
    assert all(b <= a for a, b in zip(amps, amps[1:]))


def test_deterministic():
    cfg = zero_field(n_samples=2000)
    a = simulate_spectrum(cfg, SHARP, seed=5)
    b = simulate_spectrum(cfg, SHARP, seed=5)
    assert np.array_equal(a.values, b.values) and a.meta == b.meta
    assert not np.array_equal(a.values, simulate_spectrum(cfg, SHARP, seed=6).values)


@pytest.mark.parametrize("estimator, sampler", [("conditional", "sobol"), ("direct", "pcg64"),
                                                ("direct", "sobol")])
def test_symmetric_about_d(estimator, sampler):
    cfg = zero_field(n_samples=5000, estimator=estimator, sampler=sampler)
    s = simulate_spectrum(cfg, SHARP, seed=8)
    mirrored = s.values[::-1]
    assert np.all(np.abs(s.values - mirrored) <= 4 * np.maximum(s.stderr, s.stderr[::-1]) + 1e-15)


def test_in_field_line_separation():
    field = FieldVector(0.0, 0.0, 5.0)
    cfg = field_config(field, n_points=2001, n_samples=4000, margin=17.2)
    step = cfg.freqs[1] - cfg.freqs[0]
    s = simulate_spectrum(cfg, NoiseParams(0.3, 0.05, 0.3, hyperfine_split=2.3))
    lo = cfg.freqs < D
    f_lo = cfg.freqs[lo][np.argmin(s.values[lo])]
    f_hi = cfg.freqs[~lo][np.argmin(s.values[~lo])]
    assert abs((f_hi - f_lo) - 2 * 28.7 * 5.0 / np.sqrt(3)) <= step / 2


def test_normalized_values_in_range():
    cfg = zero_field(n_samples=3000, contrast=0.3, baseline=2.0)
    s = simulate_spectrum(cfg, SHARP)
    assert s.values.min() == pytest.approx(1.7, abs=1e-12)
    assert np.all((s.values >= 1.7 - 1e-12) & (s.values <= 2.0))


def test_zero_field_independent_of_axes():
    a = simulate_spectrum(zero_field(n_samples=2000), SHARP, seed=4)
    b = simulate_spectrum(zero_field(n_samples=2000, axes=2), SHARP, seed=4)
    assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize("field", [None, FieldVector(0.0, 0.0, 5.0), FieldVector.from_polar(5.0, 30, 60)])
def test_estimators_agree_with_expected_model(field):
    noise = NoiseParams(0.5, 1.0, 3.0)
    cfg = zero_field(n_points=161, field=field) if field is None else field_config(field, n_points=321)
    freqs = cfg.freqs
    exact = expected_excitation(freqs, noise, 0.29, D, cfg.static_j(), n_nodes=4096)
    cond, cerr = ensemble_excitation(freqs, noise, 0.29, D, cfg.static_j(), 3, 20_000, "conditional")
    direct, derr = ensemble_excitation(freqs, noise, 0.29, D, cfg.static_j(), 3, 20_000, "direct", "pcg64")
    scale = exact.max()
    assert np.max(np.abs(direct - exact) / np.maximum(derr, 1e-3 * scale)) < 5
    assert np.max(np.abs(cond - exact) / np.maximum(cerr, 1e-3 * scale)) < 5
    # conditioning plus quasi-random points removes most of the sampling error
    assert np.max(np.abs(cond - exact)) < 0.1 * np.max(np.abs(direct - exact))


def test_convergence_check():
    assert convergence_check(zero_field(n_samples=10), NoiseParams(0.4, 0.0, 0.0, hyperfine_split=0.0)) == 0.0
    assert convergence_check(zero_field(), SHARP) < 0.01
    assert convergence_check(zero_field(n_samples=1, estimator="direct"), SHARP) > 0.05
    # strain and hyperfine are averaged exactly, so even one center is close
    assert 0 < convergence_check(zero_field(n_samples=1), SHARP) < 0.05


def test_earth_field_preset():
    cfg = field_config(earth_field(), n_points=11)
    assert cfg.field.magnitude == pytest.approx(0.045)
    np.testing.assert_allclose(cfg.static_j(), 28.7 * 0.045 * np.array([1, -1 / 3, -1 / 3, -1 / 3]))


def test_csv_round_trip(tmp_path):
    s = simulate_spectrum(zero_field(n_points=51, n_samples=500), SHARP)
    path = tmp_path / "s.csv"
    write_spectrum_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "freq_mhz,signal" and len(lines) == 52
    data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
    assert np.array_equal(data[:, 0], s.freqs) and np.array_equal(data[:, 1], s.values)
