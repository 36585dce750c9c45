"""``chimag`` command line.

Exit status: 0 on success, 2 on invalid input (bad flags, config or data),
1 on runtime failures.  Every output path is given explicitly and written
atomically.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dispersion, fieldmap, fitting
from .cascade import cascade_spectrum
from .errors import ChimagError, ValidationError
from .io import (
    fmt,
    load_scenario,
    parse_touchstone,
    read_fieldmap_csv,
    read_spectrum_csv,
    write_spectrum_csv,
    write_table,
    write_touchstone,
)
from .model import (
    MagnetConfig,
    absorption,
    bias_field_for_frequency,
    critical_detuning_check,
    field_sweep_map,
    isolation_db,
    s_matrix_single,
)
from .svgplot import HeatmapData, LineData, PlotSpec, render_plot

log = logging.getLogger("chimag")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors go to stderr with status 2
        self.print_usage(sys.stderr)
        _diag(f"{self.prog}: {message}")
        raise SystemExit(2)


def _use_color() -> bool:
    return not os.environ.get("CHIMAG_NO_COLOR") and hasattr(sys.stderr, "isatty") and sys.stderr.isatty()


def _diag(message: str, level: str = "error") -> None:
    prefix = f"{level}:"
    if _use_color():
        code = "31" if level == "error" else "33"
        prefix = f"\x1b[{code}m{prefix}\x1b[0m"
    print(f"{prefix} {message}", file=sys.stderr)


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not UTF-8 text ({exc.reason})") from None
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None


# -- shared outputs ----------------------------------------------------------


def _spectrum_outputs(spec, args) -> None:
    a21, a12 = absorption(spec)
    extra = {"a21": a21, "a12": a12, "iso_db": isolation_db(spec)}
    write_atomic(args.out, write_spectrum_csv(spec, extra, phases=True))
    if args.touchstone:
        write_atomic(args.touchstone, write_touchstone(spec, args.format, comments=[" chimag model spectrum"]))
    if args.plot:
        write_atomic(args.plot, _spectrum_plot(spec, args.plot_kind, a21, a12))


def _spectrum_plot(spec, kind: str, a21, a12) -> str:
    f_ghz = spec.freqs / 1e9
    if kind == "absorption":
        data = LineData(f_ghz, [("A21", a21), ("A12", a12)])
        ps = PlotSpec("absorption", y_range=(-0.02, 1.02), x_label="Frequency (GHz)", y_label="Absorption")
    elif kind == "phase":
        data = LineData(f_ghz, [("P21", spec.phase("s21", deg=True)), ("P12", spec.phase("s12", deg=True))])
        ps = PlotSpec("phase", y_range=(-180.0, 180.0), x_label="Frequency (GHz)", y_label="Phase (deg)")
    else:
        series = [(name.upper().replace("S", "|S", 1) + "|", spec.magnitude_db(name)) for name in ("s21", "s12", "s11")]
        finite = np.concatenate([s[np.isfinite(s)] for _, s in series])
        lo = max(float(finite.min()) if finite.size else -60.0, -80.0)
        ps = PlotSpec("spectrum", y_range=(lo - 2.0, 2.0), x_label="Frequency (GHz)", y_label="Magnitude (dB)")
        data = LineData(f_ghz, series)
    return render_plot(data, ps)


def _add_spectrum_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="scenario file (TOML)")
    p.add_argument("--out", required=True, help="spectrum CSV with a21, a12 and iso_db columns")
    p.add_argument("--touchstone", help="also write a Touchstone .s2p file")
    p.add_argument("--format", default="RI", choices=["RI", "MA", "DB"], help="Touchstone data format (default RI)")
    p.add_argument("--plot", help="SVG plot output")
    p.add_argument(
        "--plot-kind", default="absorption", choices=["absorption", "spectrum", "phase"], help="what --plot shows"
    )


def _load_config(path: str):
    cfg = load_scenario(_read_text(path))
    for w in cfg.warnings:
        _diag(w, "warning")
    return cfg


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if len(cfg.resonators) != 1:
        raise ValidationError(f"simulate needs exactly one resonator, config has {len(cfg.resonators)}; use cascade")
    spec = s_matrix_single(cfg.resonators[0], cfg.sweep)
    _spectrum_outputs(spec, args)
    return 0


def cmd_cascade(args) -> int:
    cfg = _load_config(args.config)
    spec = cascade_spectrum(cfg.elements(), cfg.propagation, cfg.sweep)
    _spectrum_outputs(spec, args)
    return 0


def _read_spectrum_file(path: str):
    text = _read_text(path)
    suffix = Path(path).suffix.lower()
    if suffix in (".s2p", ".ts", ".snp"):
        return parse_touchstone(text)
    if suffix == ".csv":
        return read_spectrum_csv(text)
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    return read_spectrum_csv(text) if first.startswith("f_hz") else parse_touchstone(text)


def cmd_fit(args) -> int:
    data = _read_spectrum_file(args.input)
    free = list(args.free)
    if args.background:
        free += [n for n in ("bg_slope", "bg_offset") if n not in free]
    problem = fitting.FitProblem(data, free_params=free, use_phase=False if args.magnitude_only else None)
    start = fitting.initial_guess(data, problem.use_phase)
    result = fitting.fit_resonator(problem, start, max_iter=args.max_iter)
    write_atomic(args.report, fitting.format_report(result))
    if args.model_out:
        model = fitting.model_spectrum(result.params, data.freqs, result.background)
        write_atomic(args.model_out, write_spectrum_csv(model, phases=True))
    return 0


def cmd_sweep_field(args) -> int:
    cfg = _load_config(args.config)
    if not cfg.resonators:
        raise ValidationError("sweep-field needs one resonator in the config as a template")
    base = cfg.magnet or MagnetConfig(bias_field_for_frequency(cfg.resonators[0].f_m))
    if args.n_b < 1:
        raise ValidationError("--n-b must be >= 1")
    b_values = np.linspace(args.b_start_t, args.b_stop_t, args.n_b)
    mags = [MagnetConfig(float(b), base.B_A, base.gyro) for b in b_values]
    sweep = field_sweep_map(mags, cfg.resonators[0], cfg.sweep)
    nb, nf = sweep.s21_db.shape
    cols = [
        np.repeat(sweep.b_values, nf),
        np.tile(sweep.freqs, nb),
        sweep.s21_db.ravel(),
        sweep.s12_db.ravel(),
        sweep.iso_db.ravel(),
    ]
    write_atomic(args.out, write_table(["b_t", "f_hz", "s21_db", "s12_db", "iso_db"], cols))
    if args.plot:
        z = sweep.s12_db if args.plot_param == "s12" else sweep.s21_db
        data = HeatmapData(sweep.freqs / 1e9, sweep.b_values * 1e3, np.maximum(z, -60.0), "dB")
        ps = PlotSpec("heatmap", x_label="Frequency (GHz)", y_label="B (mT)", title=f"|{args.plot_param.upper()}| (dB)")
        write_atomic(args.plot, render_plot(data, ps))
    return 0


def cmd_fieldmap(args) -> int:
    fmap = read_fieldmap_csv(_read_text(args.map))
    if args.y_mm:
        try:
            ys = [float(v) for v in args.y_mm.split(",")]
        except ValueError:
            raise ValidationError(f"--y-mm expects comma-separated numbers, got {args.y_mm!r}") from None
    else:
        if args.y_start_mm is None or args.y_stop_mm is None:
            raise ValidationError("give --y-mm or both --y-start-mm and --y-stop-mm")
        ys = list(np.linspace(args.y_start_mm, args.y_stop_mm, args.n_y))
    diameter = args.diameter_mm * 1e-3
    geom = fieldmap.SphereGeometry(diameter, (args.x_mm, 0.0))
    pref = fieldmap.CouplingPrefactor.for_sphere(diameter, M_s=args.ms)
    profile = fieldmap.kappa_profile(fmap, pref, geom, ys, footprint=args.footprint)
    lines = ["y_mm,kappa_r_hz,kappa_l_hz,chirality,mean_sam_right,error"]
    for e in profile:
        err = (e.error or "").replace(",", ";")
        lines.append(",".join([fmt(e.y_mm), fmt(e.kappa_R), fmt(e.kappa_L), fmt(e.chirality), fmt(e.mean_sam_right), err]))
    write_atomic(args.out, "\n".join(lines) + "\n")
    if args.plot:
        ok = [e for e in profile if e.ok]
        if not ok:
            raise ValidationError("no valid profile positions to plot")
        y = np.array([e.y_mm for e in ok])
        data = LineData(y, [("C", np.array([e.chirality for e in ok])), ("mean SAM", np.array([e.mean_sam_right for e in ok]))])
        write_atomic(args.plot, render_plot(data, PlotSpec("profile", y_range=(-1.05, 1.05), x_label="y (mm)", y_label="Chirality")))
    if args.sam_plot:
        s = fieldmap.sam_density(fmap, args.direction)
        data = HeatmapData(fmap.x_mm, fmap.y_mm, s, "s_z")
        ps = PlotSpec("heatmap", x_label="x (mm)", y_label="y (mm)", title=f"transverse SAM ({args.direction})")
        write_atomic(args.sam_plot, render_plot(data, ps))
    return 0


def cmd_dispersion(args) -> int:
    geom = dispersion.WaveguideGeometry(
        p=args.p_mm * 1e-3, h=args.h_mm * 1e-3, a=None if args.a_mm is None else args.a_mm * 1e-3
    )
    f_stop = None if args.f_stop_ghz is None else args.f_stop_ghz * 1e9
    table = dispersion.dispersion_table(geom, args.n_points, f_stop)
    write_atomic(args.out, write_table(list(table), list(table.values())))
    if args.plot:
        kp = table["kp_over_pi"]
        light_ghz = kp * dispersion.SPEED_OF_LIGHT / (2.0 * geom.p) / 1e9
        data = LineData(kp, [("SSPP", table["f_hz"] / 1e9), ("light line", light_ghz)])
        fc_ghz = dispersion.cutoff_frequency(geom) / 1e9
        ps = PlotSpec("spectrum", x_range=(0.0, 1.0), y_range=(0.0, 1.1 * fc_ghz), x_label="kp/pi", y_label="Frequency (GHz)")
        write_atomic(args.plot, render_plot(data, ps))
    return 0


def cmd_critical(args) -> int:
    cfg = _load_config(args.config)
    if not cfg.resonators:
        raise ValidationError("config has no resonators")
    lines = []
    for i, r in enumerate(cfg.resonators):
        rep = critical_detuning_check(r)
        lines.append(f"[resonator {i}]")
        lines.append(f"f_m_hz = {fmt(r.f_m)}")
        lines.append(f"gamma_i_hz = {fmt(r.gamma_i)}")
        lines.append(f"kappa_R_hz = {fmt(r.kappa_R)}")
        lines.append(f"kappa_L_hz = {fmt(r.kappa_L)}")
        lines += rep.lines()
        a21, _ = absorption(s_matrix_single(r, [r.f_m]))
        lines.append(f"a21_at_resonance = {fmt(a21[0])}")
        if not rep.perfect_chiral:
            lines.append("note = kappa_L is nonzero; critical coupling is defined for perfect chiral input")
    text = "\n".join(lines) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chimag", description="Chiral waveguide-magnon scattering toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="single-resonator spectrum from a scenario")
    _add_spectrum_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cascade", help="multi-resonator spectrum with propagation sections")
    _add_spectrum_flags(p)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("fit", help="extract f_m, gamma_i, kappa_R, kappa_L from a measured spectrum")
    p.add_argument("--in", dest="input", required=True, help="Touchstone .s2p or spectrum CSV")
    p.add_argument("--report", required=True, help="text report output")
    p.add_argument(
        "--free", nargs="+", default=list(fitting.DEFAULT_FREE), choices=list(fitting.PARAM_NAMES),
        help="parameters to fit (default: the four resonator parameters)",
    )
    p.add_argument("--background", action="store_true", help="also fit an affine transmission baseline")
    p.add_argument("--magnitude-only", action="store_true", help="ignore phase data even when present")
    p.add_argument("--max-iter", type=int, default=500, help="iteration cap (default 500)")
    p.add_argument("--model-out", help="write the fitted model spectrum as CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep-field", help="transmission maps against bias field")
    p.add_argument("--config", required=True, help="scenario; its first resonator is the template")
    p.add_argument("--b-start-t", type=float, required=True, help="first bias field (T)")
    p.add_argument("--b-stop-t", type=float, required=True, help="last bias field (T)")
    p.add_argument("--n-b", type=int, default=21, help="number of field values (default 21)")
    p.add_argument("--out", required=True, help="long-format CSV b_t,f_hz,s21_db,s12_db,iso_db")
    p.add_argument("--plot", help="SVG heatmap output")
    p.add_argument("--plot-param", default="s21", choices=["s21", "s12"], help="quantity shown by --plot")
    p.set_defaults(func=cmd_sweep_field)

    p = sub.add_parser("fieldmap", help="directional coupling and chirality profile from a field map")
    p.add_argument("--map", required=True, help="field-map CSV")
    p.add_argument("--out", required=True, help="profile CSV output")
    p.add_argument("--y-mm", help="comma-separated sphere y positions (mm)")
    p.add_argument("--y-start-mm", type=float, help="first y position (mm)")
    p.add_argument("--y-stop-mm", type=float, help="last y position (mm)")
    p.add_argument("--n-y", type=int, default=21, help="number of y positions (default 21)")
    p.add_argument("--x-mm", type=float, default=0.0, help="sphere x position (mm, default 0)")
    p.add_argument("--diameter-mm", type=float, default=1.0, help="sphere diameter (mm, default 1)")
    p.add_argument("--ms", type=float, default=1.4e5, help="saturation magnetization (A/m, default 1.4e5)")
    p.add_argument("--footprint", default="disk", choices=["disk", "point"], help="field averaging region")
    p.add_argument("--plot", help="SVG chirality profile output")
    p.add_argument("--sam-plot", help="SVG transverse-spin map output")
    p.add_argument("--direction", default="right", choices=["right", "left"], help="excitation for --sam-plot")
    p.set_defaults(func=cmd_fieldmap)

    p = sub.add_parser("dispersion", help="groove-array dispersion table up to cutoff")
    p.add_argument("--h-mm", type=float, default=7.6, help="groove depth (mm, default 7.6)")
    p.add_argument("--p-mm", type=float, default=4.1, help="period (mm, default 4.1)")
    p.add_argument("--a-mm", type=float, help="groove width (mm, default p/2)")
    p.add_argument("--n-points", type=int, default=200, help="rows in the table (default 200)")
    p.add_argument("--f-stop-ghz", type=float, help="last frequency (default: just below cutoff)")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--plot", help="SVG dispersion plot output")
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("critical", help="gap to critical coupling for each resonator")
    p.add_argument("--config", required=True, help="scenario file (TOML)")
    p.add_argument("--out", help="report file (default: stdout)")
    p.set_defaults(func=cmd_critical)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        _diag(str(exc))
        return 2
    except (ChimagError, OSError) as exc:
        _diag(str(exc))
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
