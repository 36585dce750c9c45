import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chimag.cascade import cascade_spectrum
from chimag.errors import ChimagError, ConfigError, ParseError
from chimag.fieldmap import FieldMap
from chimag.io import (
    load_scenario,
    parse_touchstone,
    read_fieldmap_csv,
    read_spectrum_csv,
    read_touchstone,
    write_fieldmap_csv,
    write_spectrum_csv,
    write_touchstone,
)
from chimag.model import ResonatorParams, TwoPortSpectrum, absorption, s_matrix_single

DATA = Path(__file__).parent / "data"
MHZ = 1e6


def random_spectrum(rng, n=64, known=None):
    f = np.sort(rng.uniform(1e9, 1e10, n))
    parts = [rng.normal(size=n) + 1j * rng.normal(size=n) for _ in range(4)]
    if known is None:
        return TwoPortSpectrum(f, *parts)
    return TwoPortSpectrum(f, *parts, phase_known=known)


class TestTouchstoneRead:
    def test_ri_zero_row(self):
        spec = parse_touchstone("# GHz S RI R 50\n6.0 0 0 0 0 0 0 0 0\n")
        assert spec.freqs[0] == 6e9
        assert all(getattr(spec, n)[0] == 0 for n in ("s11", "s21", "s12", "s22"))

    def test_ma_polar(self):
        spec = parse_touchstone("# MHz S MA R 50\n6000 0 0 1 180 0 0 0 0\n")
        assert spec.freqs[0] == 6e9
        assert spec.s21[0] == pytest.approx(-1.0, abs=1e-15)

    def test_db_inversion(self):
        spec = parse_touchstone("# Hz S DB R 50\n6e9 -300 0 -20 0 -300 0 -300 0\n")
        assert spec.s21[0] == pytest.approx(0.1, rel=1e-15)

    def test_defaults_without_option_line(self):
        doc = read_touchstone("1 1 0 0 0 0 0 1 0\n")
        assert doc.freq_unit == "GHZ" and doc.fmt == "MA" and doc.resistance == 50.0
        assert doc.spectrum.freqs[0] == 1e9

    def test_comments_preserved(self):
        doc = read_touchstone("! measured at 295 K\n# GHz S RI R 50\n! second\n1 0 0 0 0 0 0 0 0 ! trailing\n")
        assert doc.comments == [" measured at 295 K", " second"]

    def test_lowercase_options(self):
        doc = read_touchstone("# khz s ri r 75\n1 0 0 0 0 0 0 0 0\n")
        assert doc.freq_unit == "KHZ" and doc.resistance == 75.0
        assert doc.spectrum.freqs[0] == 1e3

    def test_bytes_input(self):
        assert parse_touchstone(b"# GHz S RI\n1 0 0 1 0 1 0 0 0\n").s21[0] == 1.0


class TestTouchstoneErrors:
    @pytest.mark.parametrize(
        "text, line, column",
        [
            ("# GHz S XX R 50\n", 1, 9),
            ("# GHz Z RI R 50\n", 1, 7),
            ("# GHz S RI R 50\n1 0 0 0 0 0 0 0\n", 2, 16),
            ("# GHz S RI R 50\n1 0 0 0 0 0 0 0 0 0\n", 2, 19),
            ("# GHz S RI R 50\n2 0 0 0 0 0 0 0 0\n1 0 0 0 0 0 0 0 0\n", 3, 1),
            ("# GHz S RI R 50\n1 0 0 0 0 0 0 0 0\n1 0 0 0 0 0 0 0 0\n", 3, 1),
            ("# GHz S RI R 50\n1 0 0 abc 0 0 0 0 0\n", 2, 7),
            ("# GHz S RI R 50\n1 0 0 nan 0 0 0 0 0\n", 2, 7),
            ("[Version] 2.0\n", 1, 1),
            ("# GHz S RI R\n", 1, 12),
        ],
    )
    def test_positional_diagnostics(self, text, line, column):
        with pytest.raises(ParseError) as err:
            parse_touchstone(text)
        assert err.value.line == line
        assert err.value.column == column
        assert f"line {line}, column {column}" in str(err.value)

    def test_v2_message(self):
        with pytest.raises(ParseError, match="v2"):
            parse_touchstone("# GHz S RI R 50\n[Number of Ports] 2\n")

    def test_empty(self):
        with pytest.raises(ParseError, match="no data"):
            parse_touchstone("! only a comment\n")

    def test_db_overflow(self):
        with pytest.raises(ParseError):
            parse_touchstone("# GHz S DB\n1 0 0 1e300 0 0 0 0 0\n")

    def test_invalid_utf8(self):
        with pytest.raises(ParseError, match="UTF-8"):
            parse_touchstone(b"\xff\xfe")


class TestTouchstoneWrite:
    def test_ri_zero_row_reversed(self):
        spec = TwoPortSpectrum(np.array([6e9]), *(np.zeros(1, complex) for _ in range(4)))
        assert write_touchstone(spec, "RI", "GHz").splitlines()[-1] == "6 0 0 0 0 0 0 0 0"

    def test_ma_polar_reversed(self):
        z = np.zeros(1, complex)
        spec = TwoPortSpectrum(np.array([6e9]), z, np.array([-1.0 + 0j]), z, z)
        row = write_touchstone(spec, "MA", "MHz").splitlines()[-1].split()
        assert row[0] == "6000" and row[3] == "1" and row[4] == "180"

    def test_db_reversed(self):
        z = np.zeros(1, complex)
        spec = TwoPortSpectrum(np.array([6e9]), z, np.array([0.1 + 0j]), z, z)
        row = write_touchstone(spec, "DB", "Hz").splitlines()[-1].split()
        assert float(row[3]) == pytest.approx(-20.0, abs=1e-13)

    def test_option_line_and_comments(self):
        spec = s_matrix_single(ResonatorParams(6e9, 1e6, 2e6, 0.0), [5.9e9, 6e9])
        text = write_touchstone(spec, comments=["made by chimag"])
        assert text.splitlines()[:2] == ["!made by chimag", "# GHz S RI R 50"]
        assert read_touchstone(text).comments == ["made by chimag"]

    @pytest.mark.parametrize("form", ["RI", "MA", "DB"])
    @pytest.mark.parametrize("unit", ["Hz", "kHz", "MHz", "GHz"])
    def test_round_trip(self, form, unit):
        spec = random_spectrum(np.random.default_rng(7))
        back = parse_touchstone(write_touchstone(spec, form, unit))
        np.testing.assert_allclose(back.freqs, spec.freqs, rtol=1e-15)
        for name in ("s11", "s21", "s12", "s22"):
            np.testing.assert_allclose(getattr(back, name), getattr(spec, name), rtol=0, atol=1e-12)

    def test_ri_round_trip_is_exact(self):
        spec = random_spectrum(np.random.default_rng(8))
        back = parse_touchstone(write_touchstone(spec, "RI", "Hz"))
        assert np.array_equal(back.s21, spec.s21) and np.array_equal(back.freqs, spec.freqs)


class TestSpectrumCsv:
    HEADER = "f_hz,s11_db,s21_db,s12_db,s22_db"

    def test_unity(self):
        spec = read_spectrum_csv(self.HEADER + "\n6e9,0,0,0,0\n")
        assert spec.s21[0] == 1.0 and not spec.has_transmission_phase

    def test_db_inversion(self):
        spec = read_spectrum_csv(self.HEADER + "\n6e9,-inf,-20,-40,-inf\n")
        assert spec.s21[0] == pytest.approx(0.1) and spec.s12[0] == pytest.approx(0.01)
        assert spec.s11[0] == 0.0

    def test_phase_columns(self):
        spec = read_spectrum_csv(self.HEADER + ",p21_deg,p12_deg\n6e9,0,0,0,0,180,90\n")
        assert spec.s21[0] == pytest.approx(-1.0)
        assert spec.s12[0] == pytest.approx(1j)
        assert spec.phase_known == {"s21", "s12"}

    def test_missing_column_named(self):
        with pytest.raises(ParseError, match="s12_db"):
            read_spectrum_csv("f_hz,s11_db,s21_db,s22_db\n1,0,0,0\n")

    def test_lone_phase_column(self):
        with pytest.raises(ParseError, match="p12_deg"):
            read_spectrum_csv(self.HEADER + ",p21_deg\n1,0,0,0,0,0\n")

    def test_extra_columns_ignored(self):
        spec = read_spectrum_csv(self.HEADER + ",note\n1,0,0,0,0,7\n")
        assert len(spec) == 1

    def test_bad_number_position(self):
        with pytest.raises(ParseError) as err:
            read_spectrum_csv(self.HEADER + "\n1,0,0,x,0\n")
        assert (err.value.line, err.value.column) == (2, 4)

    def test_positive_inf_rejected(self):
        with pytest.raises(ParseError):
            read_spectrum_csv(self.HEADER + "\n1,0,inf,0,0\n")

    def test_round_trip_with_phase(self):
        rng = np.random.default_rng(9)
        spec = random_spectrum(rng)
        back = read_spectrum_csv(write_spectrum_csv(spec))
        for name in ("s21", "s12"):
            np.testing.assert_allclose(getattr(back, name), getattr(spec, name), rtol=0, atol=1e-12)
        for name in ("s11", "s22"):
            np.testing.assert_allclose(np.abs(getattr(back, name)), np.abs(getattr(spec, name)), atol=1e-12)

    def test_round_trip_magnitude_only(self):
        spec = random_spectrum(np.random.default_rng(10), known=frozenset())
        text = write_spectrum_csv(spec)
        assert text.splitlines()[0] == self.HEADER
        back = read_spectrum_csv(text)
        np.testing.assert_allclose(np.abs(back.s21), np.abs(spec.s21), atol=1e-12)

    def test_extra_output_columns(self):
        spec = s_matrix_single(ResonatorParams(6e9, 1e6, 2e6, 0.0), [5.99e9, 6e9])
        a21, a12 = absorption(spec)
        text = write_spectrum_csv(spec, extra={"a21": a21, "a12": a12})
        assert text.splitlines()[0].endswith(",a21,a12")


class TestFieldMapCsv:
    def test_round_trip(self):
        rng = np.random.default_rng(11)
        x, y = np.linspace(-1, 1, 5), np.linspace(-2, 2, 7)
        shape = (7, 5)
        parts = [rng.normal(size=shape) + 1j * rng.normal(size=shape) for _ in range(4)]
        fmap = FieldMap(x, y, *parts)
        back = read_fieldmap_csv(write_fieldmap_csv(fmap))
        np.testing.assert_array_equal(back.x_mm, x)
        np.testing.assert_array_equal(back.hy_left, fmap.hy_left)

    def test_row_order_free(self):
        fmap = FieldMap.from_right([0.0, 1.0], [0.0, 1.0], [[1, 2], [3, 4]], [[1j, 0], [0, 1j]])
        lines = write_fieldmap_csv(fmap).splitlines()
        shuffled = "\n".join([lines[0]] + lines[1:][::-1]) + "\n"
        back = read_fieldmap_csv(shuffled)
        np.testing.assert_array_equal(back.hx_right, fmap.hx_right)

    def test_not_rectangular(self):
        header = write_fieldmap_csv(FieldMap.from_right([0.0], [0.0], [[1]], [[0]])).splitlines()[0]
        body = "0,0,1,0,0,0,1,0,0,0\n1,1,1,0,0,0,1,0,0,0\n"
        with pytest.raises(ParseError, match="rectangular"):
            read_fieldmap_csv(header + "\n" + body)


class TestScenario:
    def test_critical_single_dip(self):
        cfg = load_scenario((DATA / "critical_single.toml").read_text())
        (res,) = cfg.resonators
        assert (res.f_m, res.gamma_i, res.kappa_R, res.kappa_L) == (6e9, 1.2 * MHZ, 2.4 * MHZ, 0.0)
        spec = cascade_spectrum(cfg.elements(), cfg.propagation, cfg.sweep)
        a21, a12 = absorption(spec)
        assert a21[200] == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(a12)) < 1e-12

    def test_bare_waveguide(self):
        cfg = load_scenario((DATA / "bare.toml").read_text())
        assert cfg.resonators == []
        spec = cascade_spectrum(cfg.elements(), cfg.propagation, cfg.sweep)
        np.testing.assert_allclose(np.abs(spec.s21), 1.0, atol=1e-15)
        assert np.all(spec.s11 == 0)
        k0 = 2 * math.pi * spec.freqs / 299792458.0
        np.testing.assert_allclose(spec.s21, np.exp(1j * k0 * 0.025), atol=1e-12)

    def test_two_sphere_bidirectional(self):
        cfg = load_scenario((DATA / "two_sphere_bidirectional.toml").read_text())
        spec = cascade_spectrum(cfg.elements(), cfg.propagation, cfg.sweep)
        a21, a12 = absorption(spec)
        assert a21[200] == pytest.approx(1.0, abs=1e-9)
        assert a12[200] == pytest.approx(1.0, abs=1e-9)

    def test_from_field(self):
        cfg = load_scenario(
            "[magnet]\nB_T = 0.2\nB_A_T = 0.01\n[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_points = 3\n"
            "[[resonators]]\nfrom_field = true\ngamma_i_mhz = 1\nkappa_r_mhz = 2\nkappa_l_mhz = 0\n"
        )
        assert cfg.resonators[0].f_m == pytest.approx(2.8e10 * 0.21)

    def test_explicit_frequency_wins(self):
        cfg = load_scenario(
            "[magnet]\nB_T = 0.2\n[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_points = 3\n"
            "[[resonators]]\nf_m_ghz = 6.5\nfrom_field = true\ngamma_i_mhz = 1\nkappa_r_mhz = 2\nkappa_l_mhz = 0\n"
        )
        assert cfg.resonators[0].f_m == 6.5e9
        assert len(cfg.warnings) == 1 and "f_m_ghz" in cfg.warnings[0]

    @pytest.mark.parametrize(
        "text, match",
        [
            ("[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_pionts = 3\n", "unknown key sweep.n_pionts"),
            ("[sweep]\nf_start_mhz = 5\nf_stop_ghz = 7\nn_points = 3\n", "unit-suffix mismatch"),
            ("[waveguide]\nh_m = 0.0076\n[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_points = 3\n", "unit-suffix"),
            ("[wave]\n", "unknown section"),
            ("[waveguide]\n", "sweep"),
            ("[sweep]\nf_start_ghz = 7\nf_stop_ghz = 5\nn_points = 3\n", "f_start"),
            ("[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_points = 2.5\n", "n_points"),
            ("sweep = 3\n", "table"),
            ("[sweep\n", "invalid TOML"),
        ],
    )
    def test_rejections(self, text, match):
        with pytest.raises(ConfigError, match=match):
            load_scenario(text)

    def test_from_field_without_magnet(self):
        with pytest.raises(ConfigError, match="magnet"):
            load_scenario(
                "[sweep]\nf_start_ghz = 5\nf_stop_ghz = 7\nn_points = 3\n"
                "[[resonators]]\nfrom_field = true\ngamma_i_mhz = 1\nkappa_r_mhz = 2\nkappa_l_mhz = 0\n"
            )

    def test_partial_positions(self):
        text = (DATA / "two_sphere_bidirectional.toml").read_text().replace("position_mm = 40.0\n", "")
        with pytest.raises(ConfigError, match="every resonator"):
            load_scenario(text)

    def test_field_sweep_needs_magnet(self):
        text = (DATA / "bare.toml").read_text() + '[outputs]\nartifacts = ["field_sweep"]\n'
        with pytest.raises(ConfigError, match="magnet"):
            load_scenario(text)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=256))
def test_fuzz_bytes_never_crash(blob):
    for parser in (parse_touchstone, read_spectrum_csv, read_fieldmap_csv, load_scenario):
        try:
            parser(blob)
        except ChimagError:
            pass


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="0123456789 .-+eE#!SRIMADBGHzk\n,_fnas", max_size=200))
def test_fuzz_near_valid_text(text):
    for parser in (parse_touchstone, read_spectrum_csv):
        try:
            parser("# GHz S RI R 50\n" + text if parser is parse_touchstone else "f_hz,s11_db,s21_db,s12_db,s22_db\n" + text)
        except ChimagError:
            pass
