"""Readers and writers for Touchstone, spectrum CSV, field-map CSV and scenarios.

All numbers are written with ``format(x, ".17g")`` so text round trips are
exact to double precision and independent of locale.
"""

from __future__ import annotations

import csv
import io as _stdio
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .cascade import CascadeElement, Propagation, PropagationModel, Resonator
from .dispersion import WaveguideGeometry
from .errors import ConfigError, ParseError
from .fieldmap import FieldMap
from .model import FrequencyGrid, MagnetConfig, ResonatorParams, TwoPortSpectrum, magnon_frequency

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger(__name__)

FREQ_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
FORMATS = ("RI", "MA", "DB")
_TOKEN = re.compile(r"\S+")
# magnitudes below this are written as this floor in DB format
_DB_FLOOR = 1e-300


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _as_text(data: str | bytes) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    if not isinstance(data, str):
        raise ParseError(f"expected text, got {type(data).__name__}")
    return data


# -- Touchstone -------------------------------------------------------------


@dataclass(eq=False)
class TouchstoneDocument:
    """Parsed contents of a two-port Touchstone v1 file."""

    spectrum: TwoPortSpectrum
    freq_unit: str = "GHZ"
    fmt: str = "MA"
    resistance: float = 50.0
    comments: list[str] = field(default_factory=list)


def _tokens(line: str):
    return [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]


def _parse_float(tok: str, lineno: int, col: int, what: str) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(f"cannot read {what} from {tok!r}", lineno, col) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} must be finite, got {tok!r}", lineno, col)
    return value


def _parse_options(line: str, lineno: int) -> tuple[str, str, float]:
    unit, form, resistance = "GHZ", "MA", 50.0
    toks = _tokens(line[1:])
    i = 0
    while i < len(toks):
        tok, col = toks[i]
        col += 1  # account for the leading '#'
        up = tok.upper()
        if up in FREQ_UNITS:
            unit = up
        elif up == "S":
            pass
        elif up in FORMATS:
            form = up
        elif up == "R":
            if i + 1 >= len(toks):
                raise ParseError("option R needs a reference resistance", lineno, col)
            val, vcol = toks[i + 1]
            resistance = _parse_float(val, lineno, vcol + 1, "reference resistance")
            if resistance <= 0:
                raise ParseError("reference resistance must be > 0", lineno, vcol + 1)
            i += 1
        elif up in ("Y", "Z", "H", "G"):
            raise ParseError(f"only S parameters are supported, got {tok!r}", lineno, col)
        else:
            raise ParseError(f"unknown option token {tok!r}", lineno, col)
        i += 1
    return unit, form, resistance


def _to_complex(a: float, b: float, form: str) -> complex:
    if form == "RI":
        return complex(a, b)
    mag = a if form == "MA" else 10.0 ** (a / 20.0)
    rad = math.radians(b)
    return complex(mag * math.cos(rad), mag * math.sin(rad))


def read_touchstone(data: str | bytes) -> TouchstoneDocument:
    """Parse a two-port Touchstone v1 document.

    Raises :class:`ParseError` with line and column for unknown option
    tokens, v2 keywords, wrong row arity, non-numeric or non-finite values
    and non-increasing frequencies.
    """
    text = _as_text(data)
    unit, form, resistance = "GHZ", "MA", 50.0
    seen_options = False
    comments: list[str] = []
    freqs: list[float] = []
    rows: list[list[complex]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body, bang, comment = raw.partition("!")
        if bang and not body.strip():
            comments.append(comment.rstrip())
            continue
        stripped = body.strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            col = body.index("[") + 1
            raise ParseError("Touchstone v2 keywords are not supported; export as v1", lineno, col)
        if stripped.startswith("#"):
            if not seen_options:
                unit, form, resistance = _parse_options(stripped, lineno)
                seen_options = True
            continue
        toks = _tokens(body)
        if len(toks) != 9:
            col = toks[9][1] if len(toks) > 9 else len(body.rstrip()) + 1
            raise ParseError(f"two-port data row needs 9 values, found {len(toks)}", lineno, col)
        nums = [_parse_float(t, lineno, c, "number") for t, c in toks]
        f = nums[0] * FREQ_UNITS[unit]
        if f < 0:
            raise ParseError("frequency must be >= 0", lineno, toks[0][1])
        if freqs and f <= freqs[-1]:
            raise ParseError("frequencies must be strictly increasing", lineno, toks[0][1])
        freqs.append(f)
        # two-port order on disk: S11 S21 S12 S22
        try:
            rows.append([_to_complex(nums[k], nums[k + 1], form) for k in (1, 3, 5, 7)])
        except OverflowError:
            raise ParseError("S-parameter magnitude overflows", lineno) from None
    if not rows:
        raise ParseError("no data rows found")
    arr = np.array(rows, dtype=complex)
    spec = TwoPortSpectrum(np.array(freqs), arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return TouchstoneDocument(spec, unit, form, resistance, comments)


def parse_touchstone(data: str | bytes) -> TwoPortSpectrum:
    return read_touchstone(data).spectrum


def _pair(z: complex, form: str) -> tuple[float, float]:
    if form == "RI":
        return z.real, z.imag
    mag = abs(z)
    ang = math.degrees(math.atan2(z.imag, z.real))
    if form == "MA":
        return mag, ang
    return 20.0 * math.log10(max(mag, _DB_FLOOR)), ang


def write_touchstone(
    spec: TwoPortSpectrum,
    form: str = "RI",
    unit: str = "GHz",
    resistance: float = 50.0,
    comments: Sequence[str] = (),
) -> str:
    """Serialise ``spec`` as Touchstone v1 text (inverse of :func:`parse_touchstone`)."""
    form = form.upper()
    if form not in FORMATS:
        raise ParseError(f"unknown Touchstone format {form!r}")
    if unit.upper() not in FREQ_UNITS:
        raise ParseError(f"unknown frequency unit {unit!r}")
    scale = FREQ_UNITS[unit.upper()]
    lines = [f"!{c}" for c in comments]
    lines.append(f"# {unit} S {form} R {fmt(resistance)}")
    for k, f in enumerate(spec.freqs):
        vals = [fmt(f / scale)]
        for z in (spec.s11[k], spec.s21[k], spec.s12[k], spec.s22[k]):
            a, b = _pair(complex(z), form)
            vals += [fmt(a), fmt(b)]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


# -- spectrum CSV -----------------------------------------------------------

SPECTRUM_REQUIRED = ("f_hz", "s11_db", "s21_db", "s12_db", "s22_db")
SPECTRUM_PHASES = ("p21_deg", "p12_deg")


def _csv_rows(text: str):
    reader = csv.reader(_stdio.StringIO(text))
    try:
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, [c.strip() for c in row]
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", reader.line_num) from None


def _csv_value(cell: str, lineno: int, col: int, name: str, allow_neg_inf: bool = False) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"column {name!r}: cannot read a number from {cell!r}", lineno, col) from None
    if math.isnan(value) or (math.isinf(value) and not (allow_neg_inf and value < 0)):
        raise ParseError(f"column {name!r}: value {cell!r} is not allowed", lineno, col)
    return value


def _read_table(text: str, required: Sequence[str], optional: Sequence[str] = (), neg_inf: Sequence[str] = ()):
    rows = _csv_rows(text)
    try:
        header_line, header = next(rows)
    except StopIteration:
        raise ParseError("empty CSV document") from None
    index = {}
    for i, name in enumerate(header):
        if name in index:
            raise ParseError(f"duplicate column {name!r}", header_line, i + 1)
        index[name] = i
    missing = [n for n in required if n not in index]
    if missing:
        raise ParseError(f"missing required column(s): {', '.join(missing)}", header_line)
    wanted = list(required) + [n for n in optional if n in index]
    cols: dict[str, list[float]] = {n: [] for n in wanted}
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", lineno)
        for name in wanted:
            i = index[name]
            cols[name].append(_csv_value(row[i], lineno, i + 1, name, name in neg_inf))
    if not cols[required[0]]:
        raise ParseError("CSV document has a header but no data rows")
    return {n: np.array(v, dtype=float) for n, v in cols.items()}


def read_spectrum_csv(data: str | bytes) -> TwoPortSpectrum:
    """Spectrum from ``f_hz,s11_db,s21_db,s12_db,s22_db[,p21_deg,p12_deg]``.

    Without phase columns the result is magnitude-only (empty
    ``phase_known``).  Extra columns are ignored.
    """
    text = _as_text(data)
    cols = _read_table(text, SPECTRUM_REQUIRED, SPECTRUM_PHASES, neg_inf=SPECTRUM_REQUIRED[1:])
    present = [p for p in SPECTRUM_PHASES if p in cols]
    if len(present) == 1:
        other = [p for p in SPECTRUM_PHASES if p not in cols][0]
        raise ParseError(f"phase column {present[0]!r} given without {other!r}")
    f = cols["f_hz"]
    if f.size > 1 and np.any(np.diff(f) <= 0):
        bad = int(np.flatnonzero(np.diff(f) <= 0)[0])
        raise ParseError("frequencies must be strictly increasing", bad + 3, 1)
    if np.any(f < 0):
        raise ParseError("frequencies must be >= 0")
    with np.errstate(over="ignore"):
        mags = {n: 10.0 ** (cols[f"{n}_db"] / 20.0) for n in ("s11", "s21", "s12", "s22")}
    for n, m in mags.items():
        if not np.all(np.isfinite(m)):
            raise ParseError(f"column {n}_db: magnitude overflows")
    values = {n: mags[n].astype(complex) for n in mags}
    known: frozenset = frozenset()
    if present:
        values["s21"] = mags["s21"] * np.exp(1j * np.deg2rad(cols["p21_deg"]))
        values["s12"] = mags["s12"] * np.exp(1j * np.deg2rad(cols["p12_deg"]))
        known = frozenset({"s21", "s12"})
    return TwoPortSpectrum(f, values["s11"], values["s21"], values["s12"], values["s22"], known)


def write_spectrum_csv(
    spec: TwoPortSpectrum, extra: Mapping[str, np.ndarray] | None = None, phases: bool | None = None
) -> str:
    """Spectrum CSV text; ``extra`` appends derived columns after the standard ones."""
    if phases is None:
        phases = spec.has_transmission_phase
    header = list(SPECTRUM_REQUIRED) + (list(SPECTRUM_PHASES) if phases else [])
    columns = [spec.freqs] + [spec.magnitude_db(n) for n in ("s11", "s21", "s12", "s22")]
    if phases:
        columns += [spec.phase("s21", deg=True), spec.phase("s12", deg=True)]
    for name, values in (extra or {}).items():
        header.append(name)
        columns.append(np.asarray(values, dtype=float))
    return _write_table(header, columns)


def _write_table(header: Sequence[str], columns: Sequence[np.ndarray]) -> str:
    out = [",".join(header)]
    n = len(columns[0])
    for k in range(n):
        out.append(",".join(fmt(c[k]) for c in columns))
    return "\n".join(out) + "\n"


def write_table(header: Sequence[str], columns: Sequence[np.ndarray]) -> str:
    """Generic numeric CSV with the shared number formatting."""
    if len(header) != len(columns):
        raise ValueError("one column per header name is required")
    return _write_table(header, [np.asarray(c, dtype=float) for c in columns])


# -- field-map CSV ----------------------------------------------------------

FIELDMAP_COLUMNS = (
    "x_mm", "y_mm",
    "re_hx_R", "im_hx_R", "re_hy_R", "im_hy_R",
    "re_hx_L", "im_hx_L", "re_hy_L", "im_hy_L",
)


def read_fieldmap_csv(data: str | bytes) -> FieldMap:
    """Field map from the ten-column CSV layout; every (x, y) pair must appear once."""
    text = _as_text(data)
    cols = _read_table(text, FIELDMAP_COLUMNS)
    x = cols["x_mm"]
    y = cols["y_mm"]
    xs = np.unique(x)
    ys = np.unique(y)
    if xs.size * ys.size != x.size:
        raise ParseError(f"grid is not rectangular: {x.size} rows for {xs.size} x {ys.size} points")
    ix = np.searchsorted(xs, x)
    iy = np.searchsorted(ys, y)
    flat = iy * xs.size + ix
    if np.unique(flat).size != flat.size:
        raise ParseError("duplicate (x_mm, y_mm) sample in field map")

    def grid(re_name: str, im_name: str) -> np.ndarray:
        out = np.zeros(ys.size * xs.size, dtype=complex)
        out[flat] = cols[re_name] + 1j * cols[im_name]
        return out.reshape(ys.size, xs.size)

    try:
        return FieldMap(
            xs, ys,
            grid("re_hx_R", "im_hx_R"), grid("re_hy_R", "im_hy_R"),
            grid("re_hx_L", "im_hx_L"), grid("re_hy_L", "im_hy_L"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def write_fieldmap_csv(fmap: FieldMap) -> str:
    """Row-major: y outer, x inner."""
    yy, xx = np.meshgrid(fmap.y_mm, fmap.x_mm, indexing="ij")
    cols = [xx.ravel(), yy.ravel()]
    for arr in (fmap.hx_right, fmap.hy_right, fmap.hx_left, fmap.hy_left):
        cols += [arr.real.ravel(), arr.imag.ravel()]
    return _write_table(FIELDMAP_COLUMNS, cols)


# -- scenario config --------------------------------------------------------

SECTION_KEYS: dict[str, tuple[str, ...]] = {
    "waveguide": ("p_mm", "h_mm", "a_mm", "length_mm"),
    "magnet": ("B_T", "B_A_T", "gyro_hz_per_t"),
    "sweep": ("f_start_ghz", "f_stop_ghz", "n_points"),
    "propagation": ("mode", "effective_index"),
    "outputs": ("artifacts",),
}
RESONATOR_KEYS = ("f_m_ghz", "from_field", "gamma_i_mhz", "kappa_r_mhz", "kappa_l_mhz", "position_mm")
OUTPUT_ARTIFACTS = ("spectra", "touchstone", "plots", "field_sweep")
_UNIT_SUFFIXES = ("hz_per_t", "mm", "cm", "um", "nm", "m", "hz", "khz", "mhz", "ghz", "thz", "t", "mt", "gs", "g")


def _split_unit(key: str) -> tuple[str, str | None]:
    low = key.lower()
    for suffix in sorted(_UNIT_SUFFIXES, key=len, reverse=True):
        if low.endswith("_" + suffix):
            return low[: -len(suffix) - 1], suffix
    return low, None


def _check_keys(table: Mapping[str, Any], allowed: Sequence[str], where: str) -> None:
    for key in table:
        if key in allowed:
            continue
        base, unit = _split_unit(key)
        for known in allowed:
            kbase, kunit = _split_unit(known)
            if unit is not None and kunit is not None and base == kbase:
                raise ConfigError(f"{where}.{key}: unit-suffix mismatch, expected {where}.{known}")
        raise ConfigError(f"unknown key {where}.{key}")


def _number(table: Mapping[str, Any], key: str, where: str, default: float | None = None, required: bool = True):
    if key not in table:
        if default is not None or not required:
            return default
        raise ConfigError(f"missing required key {where}.{key}")
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}.{key} must be a finite number, got {value!r}")
    return float(value)


@dataclass(eq=False)
class ScenarioConfig:
    """Validated scenario: geometry, magnet, ordered resonators, sweep and outputs."""

    waveguide: WaveguideGeometry
    magnet: MagnetConfig | None
    resonators: list[ResonatorParams]
    positions_mm: list[float | None]
    sweep: FrequencyGrid
    propagation: PropagationModel
    outputs: tuple[str, ...] = ()
    warnings: list[str] = field(default_factory=list)

    def elements(self) -> list[CascadeElement]:
        """Cascade chain from port 1 to port 2, with propagation between placed resonators."""
        length_mm = self.waveguide.length * 1e3
        placed = [p for p in self.positions_mm if p is not None]
        out: list[CascadeElement] = []
        if not self.resonators:
            return [Propagation(self.waveguide.length)]
        if not placed:
            return [Resonator(r) for r in self.resonators]
        cursor = 0.0
        for r, pos in zip(self.resonators, self.positions_mm):
            out.append(Propagation((pos - cursor) * 1e-3))
            out.append(Resonator(r))
            cursor = pos
        if length_mm > 0:
            out.append(Propagation((length_mm - cursor) * 1e-3))
        return out


def load_scenario(data: str | bytes) -> ScenarioConfig:
    """Parse and validate a TOML scenario.

    Unknown keys are rejected; a key whose unit suffix differs from the
    expected one is reported as a unit mismatch.
    """
    text = _as_text(data)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    for key in doc:
        if key not in SECTION_KEYS and key != "resonators":
            raise ConfigError(f"unknown section {key!r}")
    for name, allowed in SECTION_KEYS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"{name} must be a table")
            _check_keys(doc[name], allowed, name)
    warnings: list[str] = []

    try:
        wg = doc.get("waveguide", {})
        defaults = WaveguideGeometry()
        p_mm = _number(wg, "p_mm", "waveguide", defaults.p * 1e3)
        a_mm = _number(wg, "a_mm", "waveguide", required=False)
        waveguide = WaveguideGeometry(
            p=p_mm * 1e-3,
            h=_number(wg, "h_mm", "waveguide", defaults.h * 1e3) * 1e-3,
            a=None if a_mm is None else a_mm * 1e-3,
            length=_number(wg, "length_mm", "waveguide", 0.0) * 1e-3,
        )

        magnet = None
        if "magnet" in doc:
            mg = doc["magnet"]
            magnet = MagnetConfig(
                B=_number(mg, "B_T", "magnet"),
                B_A=_number(mg, "B_A_T", "magnet", 0.0),
                gyro=_number(mg, "gyro_hz_per_t", "magnet", 2.8e10),
            )

        if "sweep" not in doc:
            raise ConfigError("missing required section [sweep]")
        sw = doc["sweep"]
        n_points = sw.get("n_points")
        if isinstance(n_points, bool) or not isinstance(n_points, int):
            raise ConfigError(f"sweep.n_points must be an integer, got {n_points!r}")
        sweep = FrequencyGrid(
            _number(sw, "f_start_ghz", "sweep") * 1e9, _number(sw, "f_stop_ghz", "sweep") * 1e9, n_points
        )

        pr = doc.get("propagation", {})
        mode = pr.get("mode", "linear_phase")
        if not isinstance(mode, str):
            raise ConfigError("propagation.mode must be a string")
        propagation = PropagationModel(
            mode=mode,
            effective_index=_number(pr, "effective_index", "propagation", 1.0),
            geometry=waveguide if mode == "sspp_dispersion" else None,
        )

        raw_res = doc.get("resonators", [])
        if not isinstance(raw_res, list) or not all(isinstance(r, dict) for r in raw_res):
            raise ConfigError("resonators must be an array of tables ([[resonators]])")
        resonators, positions = [], []
        for i, entry in enumerate(raw_res):
            where = f"resonators[{i}]"
            _check_keys(entry, RESONATOR_KEYS, where)
            f_m = _number(entry, "f_m_ghz", where, required=False)
            from_field = entry.get("from_field")
            if from_field is not None and not (
                isinstance(from_field, bool) or isinstance(from_field, (int, float))
            ):
                raise ConfigError(f"{where}.from_field must be true/false or a field offset in tesla")
            if f_m is not None:
                if from_field not in (None, False):
                    msg = f"{where}: both f_m_ghz and from_field given; using f_m_ghz"
                    warnings.append(msg)
                    log.warning(msg)
                f_m *= 1e9
            elif from_field is not None and from_field is not False:
                if magnet is None:
                    raise ConfigError(f"{where}.from_field needs a [magnet] section")
                offset = 0.0 if from_field is True else float(from_field)
                f_m = magnon_frequency(MagnetConfig(magnet.B + offset, magnet.B_A, magnet.gyro))
            else:
                raise ConfigError(f"{where} needs f_m_ghz or from_field")
            resonators.append(
                ResonatorParams(
                    f_m=f_m,
                    gamma_i=_number(entry, "gamma_i_mhz", where) * 1e6,
                    kappa_R=_number(entry, "kappa_r_mhz", where) * 1e6,
                    kappa_L=_number(entry, "kappa_l_mhz", where) * 1e6,
                )
            )
            positions.append(_number(entry, "position_mm", where, required=False))

        placed = [p for p in positions if p is not None]
        if placed and len(placed) != len(positions):
            raise ConfigError("either every resonator has position_mm or none does")
        if placed:
            if placed[0] < 0 or any(b < a for a, b in zip(placed, placed[1:])):
                raise ConfigError("resonator positions must be >= 0 and listed from port 1 to port 2")
            if waveguide.length > 0 and placed[-1] > waveguide.length * 1e3:
                raise ConfigError("resonator position beyond waveguide.length_mm")

        outputs: tuple[str, ...] = ()
        if "outputs" in doc:
            arts = doc["outputs"].get("artifacts", [])
            if not isinstance(arts, list) or not all(isinstance(a, str) for a in arts):
                raise ConfigError("outputs.artifacts must be an array of strings")
            unknown = [a for a in arts if a not in OUTPUT_ARTIFACTS]
            if unknown:
                raise ConfigError(f"unknown output artifact(s): {unknown}; choose from {OUTPUT_ARTIFACTS}")
            if "field_sweep" in arts and (magnet is None or not resonators):
                raise ConfigError("output field_sweep needs a [magnet] section and at least one resonator")
            outputs = tuple(arts)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return ScenarioConfig(waveguide, magnet, resonators, positions, sweep, propagation, outputs, warnings)
