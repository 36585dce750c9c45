"""Acceptance gate: one block per criterion, each at its stated tolerance.

A summary line per criterion is printed at the end of the run (see
conftest.py).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.constants import c
from scipy.optimize import minimize_scalar

from chimag.cascade import Propagation, PropagationModel, Resonator, cascade_spectrum, reversed_swapped
from chimag.dispersion import WaveguideGeometry, cutoff_frequency, group_velocity
from chimag.errors import ChimagError
from chimag.fieldmap import CouplingPrefactor, FieldMap, SphereGeometry, kappa_profile
from chimag.fitting import FitProblem, fit_resonator
from chimag.io import (
    load_scenario,
    parse_touchstone,
    read_fieldmap_csv,
    read_spectrum_csv,
    write_spectrum_csv,
    write_touchstone,
)
from chimag.model import FrequencyGrid, ResonatorParams, TwoPortSpectrum, absorption, s_matrix_single

DATA = Path(__file__).parent / "data"
MHZ = 1e6
CRITICAL = ResonatorParams(6e9, 1.2 * MHZ, 2.4 * MHZ, 0.0)
S_NAMES = ("s11", "s21", "s12", "s22")


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# -- 1 ------------------------------------------------------------------------


@criterion(1, "unidirectional perfect absorption at critical chiral coupling")
def test_ac1_unidirectional_perfect_absorption():
    start = time.perf_counter()
    grid = FrequencyGrid(5.99e9, 6.01e9, 10001)
    spec = s_matrix_single(CRITICAL, grid)
    a21, a12 = absorption(spec)
    elapsed = time.perf_counter() - start
    i = int(np.flatnonzero(grid.frequencies == 6e9)[0])
    assert abs(a21[i] - 1.0) <= 1e-9
    assert np.max(np.abs(a12)) <= 1e-12
    assert elapsed < 1.0


# -- 2 ------------------------------------------------------------------------


@criterion(2, "achiral absorption ceiling of 50% at kappa = gamma_i")
def test_ac2_achiral_ceiling():
    gamma = 1.2 * MHZ

    def neg_peak(kappa_mhz):
        p = ResonatorParams(6e9, gamma, kappa_mhz * MHZ, kappa_mhz * MHZ)
        return -absorption(s_matrix_single(p, [6e9]))[0][0]

    best = minimize_scalar(neg_peak, bounds=(0.01, 20.0), method="bounded", options={"xatol": 1e-9})
    assert abs(-best.fun - 0.5) <= 1e-6
    assert best.x * MHZ == pytest.approx(gamma, rel=1e-4)
    # independent oracle: the closed form 2 gamma kappa / (gamma + kappa)^2
    for kappa in np.linspace(0.1, 10, 37) * MHZ:
        p = ResonatorParams(6e9, gamma, kappa, kappa)
        assert absorption(s_matrix_single(p, [6e9]))[0][0] == pytest.approx(
            2 * gamma * kappa / (gamma + kappa) ** 2, abs=1e-12
        )


# -- 3 ------------------------------------------------------------------------


@criterion(3, "pi phase step of S21 across a critically coupled resonance")
def test_ac3_pi_phase_step():
    delta = 1e-6 * CRITICAL.gamma_i
    spec = s_matrix_single(CRITICAL, [CRITICAL.f_m - delta, CRITICAL.f_m + delta])
    step = np.angle(spec.s21[1]) - np.angle(spec.s21[0])
    step = abs((step + math.pi) % (2 * math.pi) - math.pi) if abs(step) > math.pi else abs(step)
    assert abs(step - math.pi) <= 1e-3


# -- 4 ------------------------------------------------------------------------


@criterion(4, "energy bookkeeping: lossless unitarity and lossy passivity")
def test_ac4_energy_bookkeeping():
    rng = np.random.default_rng(4)
    for _ in range(100):
        f_m = rng.uniform(1e9, 1e10)
        kr, kl = rng.uniform(0.0, 20.0, 2) * MHZ
        width = 0.5 * (kr + kl) + 1.0
        grid = np.linspace(f_m - 30 * width, f_m + 30 * width, 10_000)
        spec = s_matrix_single(ResonatorParams(f_m, 0.0, kr, kl), grid)
        np.testing.assert_allclose(np.abs(spec.s21) ** 2 + np.abs(spec.s11) ** 2, 1.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(np.abs(spec.s12) ** 2 + np.abs(spec.s22) ** 2, 1.0, rtol=0, atol=1e-12)
        lossy = s_matrix_single(ResonatorParams(f_m, rng.uniform(0.01, 10.0) * MHZ, kr, kl), grid)
        a21, a12 = absorption(lossy, strict=False)
        assert a21.min() >= -1e-12 and a12.min() >= -1e-12


# -- 5 ------------------------------------------------------------------------


@criterion(5, "reciprocity for equal rates and transposition under direction swap")
def test_ac5_reciprocity_and_swap():
    rng = np.random.default_rng(5)
    grid = FrequencyGrid(5.97e9, 6.03e9, 3001)
    for _ in range(20):
        k = rng.uniform(0, 10) * MHZ
        spec = s_matrix_single(ResonatorParams(rng.uniform(5.98e9, 6.02e9), rng.uniform(0, 5) * MHZ, k, k), grid)
        assert np.array_equal(spec.s21, spec.s12)
    for _ in range(20):
        chain = []
        for _ in range(int(rng.integers(1, 5))):
            chain.append(Propagation(rng.uniform(0, 0.05)))
            kr, kl = rng.uniform(0, 5, 2) * MHZ
            chain.append(Resonator(ResonatorParams(rng.uniform(5.98e9, 6.02e9), rng.uniform(0.1, 3) * MHZ, kr, kl)))
        fwd = cascade_spectrum(chain, PropagationModel(), grid)
        back = cascade_spectrum(reversed_swapped(chain), PropagationModel(), grid)
        t = fwd.transposed()
        for name in S_NAMES:
            np.testing.assert_allclose(getattr(back, name), getattr(t, name), rtol=0, atol=1e-12)


# -- 6 ------------------------------------------------------------------------


def _synth(truth, n=801):
    half = 12 * truth.total_linewidth
    return s_matrix_single(truth, np.linspace(truth.f_m - half, truth.f_m + half, n))


def _rel(got, want, floor):
    return abs(got - want) / max(abs(want), floor)


@criterion(6, "fit round trip: noiseless, 1% noise Monte Carlo, and kappa_L = 0 recovery")
def test_ac6_noiseless_round_trip():
    rng = np.random.default_rng(6)
    for _ in range(100):
        gamma = rng.uniform(0.1, 10.0)
        kr, kl = rng.uniform(0.0, 20.0, 2)
        truth = ResonatorParams(6e9, gamma * MHZ, kr * MHZ, kl * MHZ)
        result = fit_resonator(FitProblem(_synth(truth)))
        assert result.converged
        floor = 1e-3 * truth.total_linewidth
        for name in ("gamma_i", "kappa_R", "kappa_L"):
            assert _rel(getattr(result.params, name), getattr(truth, name), floor) <= 1e-6
        assert _rel(result.params.f_m, truth.f_m, 0) <= 1e-6


@criterion(6, "fit round trip: noiseless, 1% noise Monte Carlo, and kappa_L = 0 recovery")
def test_ac6_noisy_monte_carlo():
    truth = ResonatorParams(6e9, 1.2 * MHZ, 1.37 * MHZ, 0.4 * MHZ)
    clean = _synth(truth)
    names = ("f_m", "gamma_i", "kappa_R", "kappa_L")
    covered = total = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        noisy = [getattr(clean, n) * (1.0 + 0.01 * rng.normal(size=len(clean))) for n in S_NAMES]
        data = TwoPortSpectrum(clean.freqs, *noisy, phase_known=frozenset())
        result = fit_resonator(FitProblem(data))
        assert result.converged
        for name in names:
            err = abs(getattr(result.params, name) - getattr(truth, name))
            assert err <= 0.05 * getattr(truth, name), (seed, name)
            covered += err <= 3 * result.stderr[name]
            total += 1
    assert covered / total >= 0.95


@criterion(6, "fit round trip: noiseless, 1% noise Monte Carlo, and kappa_L = 0 recovery")
def test_ac6_chiral_fit_from_magnitudes():
    truth = ResonatorParams(6e9, 1.2 * MHZ, 1.37 * MHZ, 0.0)
    clean = _synth(truth)
    data = TwoPortSpectrum(clean.freqs, clean.s11, clean.s21, clean.s12, clean.s22, phase_known=frozenset())
    result = fit_resonator(FitProblem(data))
    assert result.params.kappa_L / MHZ < 0.01
    assert result.params.kappa_R == pytest.approx(1.37 * MHZ, rel=1e-6)
    assert result.params.gamma_i == pytest.approx(1.2 * MHZ, rel=1e-6)


# -- 7 ------------------------------------------------------------------------


@criterion(7, "groove cutoff 9.86 GHz within 2% of 10 GHz; group velocity vanishes at cutoff")
def test_ac7_cutoff():
    geom = WaveguideGeometry(p=4.1e-3, h=7.6e-3)
    fc = cutoff_frequency(geom)
    assert round(fc / 1e9, 2) == 9.86
    assert abs(fc - 10e9) / 10e9 <= 0.02
    assert group_velocity(geom, 0.999 * fc) < 0.02 * c


# -- 8 ------------------------------------------------------------------------


def _product_form(cfg):
    """Reflectionless oracle: transmissions multiply, propagation adds phase."""
    f = cfg.sweep.frequencies
    s21 = np.ones(f.size, dtype=complex)
    s12 = np.ones(f.size, dtype=complex)
    for el in cfg.elements():
        if isinstance(el, Resonator):
            single = s_matrix_single(el.params, f)
            s21 = s21 * single.s21
            s12 = s12 * single.s12
        else:
            phase = np.exp(1j * 2 * np.pi * f / c * el.length)
            s21, s12 = s21 * phase, s12 * phase
    return s21, s12


@criterion(8, "two-resonator multi-colour and bidirectional absorption")
def test_ac8_two_resonators():
    multi = load_scenario((DATA / "two_sphere_multicolor.toml").read_text())
    spec = cascade_spectrum(multi.elements(), multi.propagation, multi.sweep)
    f = spec.freqs
    a21, a12 = absorption(spec)
    i1, i2 = int(np.argmax(a21)), int(np.argmax(a12))
    assert f[i1] == 5.99e9 and f[i2] == 6.01e9
    assert abs(a21[i1] - 1.0) <= 1e-9 and abs(a12[i2] - 1.0) <= 1e-9
    # each dip is one-way: the other direction keeps most of its power
    assert np.abs(spec.s12[i1]) ** 2 > 0.95 and np.abs(spec.s21[i2]) ** 2 > 0.95

    bidir = load_scenario((DATA / "two_sphere_bidirectional.toml").read_text())
    spec_b = cascade_spectrum(bidir.elements(), bidir.propagation, bidir.sweep)
    a21, a12 = absorption(spec_b)
    k = int(np.flatnonzero(spec_b.freqs == 6e9)[0])
    assert abs(a21[k] - 1.0) <= 1e-9 and abs(a12[k] - 1.0) <= 1e-9

    for cfg, s in ((multi, spec), (bidir, spec_b)):
        s21, s12 = _product_form(cfg)
        np.testing.assert_allclose(s.s21, s21, rtol=0, atol=1e-12)
        np.testing.assert_allclose(s.s12, s12, rtol=0, atol=1e-12)


# -- 9 ------------------------------------------------------------------------


@criterion(9, "field-map chirality: C = +/-1, sign law, mirror antisymmetry")
def test_ac9_fieldmap_chirality():
    x = np.linspace(-2.0, 2.0, 41)
    y = np.linspace(-4.0, 4.0, 81)
    xx, yy = np.meshgrid(x, y)
    pref, sphere = CouplingPrefactor(), SphereGeometry()

    circ = FieldMap.from_right(x, y, np.ones_like(xx, dtype=complex), np.where(yy > 0, 1j, -1j) + 0 * xx)
    up, down = kappa_profile(circ, pref, sphere, [2.0, -2.0])
    assert up.chirality == 1.0 and down.chirality == -1.0

    env = np.exp(-(yy / 1.5) ** 2)
    mirror = FieldMap.from_right(x, y, env.astype(complex), 1j * np.tanh(yy / 1.5) * env)
    ys = np.linspace(-3.0, 3.0, 25)
    prof = kappa_profile(mirror, pref, sphere, ys)
    chir = np.array([p.chirality for p in prof])
    sam = np.array([p.mean_sam_right for p in prof])
    nonzero = np.abs(chir) > 1e-12
    assert np.all(np.sign(chir[nonzero]) == np.sign(sam[nonzero]))
    np.testing.assert_allclose(chir, -chir[::-1], atol=1e-12)


# -- 10 -----------------------------------------------------------------------


@criterion(10, "lossless Touchstone/CSV round trips; 1e5 fuzzed inputs never crash")
def test_ac10_round_trips():
    rng = np.random.default_rng(10)
    f = np.sort(rng.uniform(1e9, 1e10, 500))
    parts = [rng.normal(size=500) + 1j * rng.normal(size=500) for _ in range(4)]
    spec = TwoPortSpectrum(f, *parts)
    for form in ("RI", "MA", "DB"):
        back = parse_touchstone(write_touchstone(spec, form))
        for name in S_NAMES:
            np.testing.assert_allclose(getattr(back, name), getattr(spec, name), rtol=0, atol=1e-12)
    back = read_spectrum_csv(write_spectrum_csv(spec))
    np.testing.assert_allclose(back.freqs, f, rtol=0, atol=0)
    for name in ("s21", "s12"):
        np.testing.assert_allclose(getattr(back, name), getattr(spec, name), rtol=0, atol=1e-12)
    for name in ("s11", "s22"):
        np.testing.assert_allclose(np.abs(getattr(back, name)), np.abs(getattr(spec, name)), rtol=0, atol=1e-12)


@criterion(10, "lossless Touchstone/CSV round trips; 1e5 fuzzed inputs never crash")
def test_ac10_fuzz():
    rng = np.random.default_rng(1010)
    # half raw bytes, half drawn from the characters the formats actually use
    alphabet = np.frombuffer(b"0123456789 .-+eE#!SRIMADBGHzk[],=\"_\n\tfnaist", dtype=np.uint8)
    parsers = (parse_touchstone, read_spectrum_csv, read_fieldmap_csv, load_scenario)
    for k in range(100_000):
        n = int(rng.integers(0, 160))
        if k % 2:
            blob = rng.choice(alphabet, size=n).tobytes()
        else:
            blob = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
        parser = parsers[k % 4]
        try:
            parser(blob)
        except ChimagError:
            pass
