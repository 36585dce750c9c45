"""Closed-form scattering of a single chirally coupled magnon resonator.

All user-facing rates are "/2π" quantities in Hz (a linewidth of 1.2 MHz
means gamma_i / 2π = 1.2e6).  Conversion to angular units happens once, in
:func:`s_matrix_single`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ModelConsistencyError, UndefinedChiralityError, ValidationError

TWO_PI = 2.0 * math.pi
DEFAULT_GYRO_HZ_PER_T = 2.8e10
PASSIVITY_EPS = 1e-9
CRITICAL_RTOL = 1e-9

S_NAMES = ("s11", "s21", "s12", "s22")


def _check_finite(owner: str, **values: float | None) -> None:
    for name, value in values.items():
        if value is None:
            continue
        if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
            raise ValidationError(f"{owner}.{name} must be a finite number, got {value!r}")


@dataclass(frozen=True)
class ResonatorParams:
    """One magnon mode coupled to the two propagation directions of a waveguide.

    Parameters
    ----------
    f_m : float
        Magnon resonance frequency (Hz).
    gamma_i : float
        Intrinsic damping rate / 2π (Hz).
    kappa_R, kappa_L : float
        Extrinsic damping rates / 2π (Hz) into the rightward and leftward modes.
    y_pos, z_gap : float, optional
        Transverse placement and vertical gap (mm); descriptive only.
    """

    f_m: float
    gamma_i: float
    kappa_R: float
    kappa_L: float
    y_pos: float | None = None
    z_gap: float | None = None

    def __post_init__(self) -> None:
        _check_finite(
            "ResonatorParams",
            f_m=self.f_m,
            gamma_i=self.gamma_i,
            kappa_R=self.kappa_R,
            kappa_L=self.kappa_L,
            y_pos=self.y_pos,
            z_gap=self.z_gap,
        )
        for name in ("f_m", "gamma_i", "kappa_R", "kappa_L"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.f_m <= 0:
            raise ValidationError(f"ResonatorParams.f_m must be > 0, got {self.f_m!r}")
        for name in ("gamma_i", "kappa_R", "kappa_L"):
            if getattr(self, name) < 0:
                raise ValidationError(f"ResonatorParams.{name} must be >= 0, got {getattr(self, name)!r}")

    @property
    def total_linewidth(self) -> float:
        """Half width of the resonance, gamma_i + (kappa_R + kappa_L) / 2 (Hz)."""
        return self.gamma_i + 0.5 * (self.kappa_R + self.kappa_L)

    def swapped(self) -> "ResonatorParams":
        """Same resonator with the two coupling directions exchanged (B-field reversal)."""
        return ResonatorParams(self.f_m, self.gamma_i, self.kappa_L, self.kappa_R, self.y_pos, self.z_gap)

    def replace(self, **changes) -> "ResonatorParams":
        values = {k: getattr(self, k) for k in ("f_m", "gamma_i", "kappa_R", "kappa_L", "y_pos", "z_gap")}
        values.update(changes)
        return ResonatorParams(**values)


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform frequency samples from f_start to f_stop inclusive (Hz)."""

    f_start: float
    f_stop: float
    n_points: int

    def __post_init__(self) -> None:
        _check_finite("FrequencyGrid", f_start=self.f_start, f_stop=self.f_stop)
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValidationError(f"FrequencyGrid.n_points must be an integer >= 2, got {self.n_points!r}")
        if not self.f_start < self.f_stop:
            raise ValidationError("FrequencyGrid requires f_start < f_stop")
        if self.f_start <= 0:
            raise ValidationError("FrequencyGrid samples must be positive")

    @classmethod
    def centered(cls, center: float, span: float, n_points: int) -> "FrequencyGrid":
        return cls(center - 0.5 * span, center + 0.5 * span, n_points)

    @property
    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_start, self.f_stop, int(self.n_points))


def as_frequencies(grid: FrequencyGrid | Sequence[float] | np.ndarray) -> np.ndarray:
    """Frequency array (Hz) from a grid or from explicit samples."""
    if isinstance(grid, FrequencyGrid):
        return grid.frequencies
    f = np.asarray(grid, dtype=float)
    if f.ndim == 0:
        f = f.reshape(1)
    if f.ndim != 1 or f.size == 0:
        raise ValidationError("frequencies must be a non-empty 1D array")
    if not np.all(np.isfinite(f)):
        raise ValidationError("frequencies must be finite")
    if f.size > 1 and np.any(np.diff(f) <= 0):
        raise ValidationError("frequencies must be strictly increasing")
    return f


@dataclass(frozen=True, eq=False)
class TwoPortSpectrum:
    """Complex two-port S-parameters sampled on a frequency axis.

    ``phase_known`` lists the entries whose phase is meaningful; spectra read
    from magnitude-only files carry zero phase elsewhere.
    """

    freqs: np.ndarray
    s11: np.ndarray
    s21: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    phase_known: frozenset = field(default=frozenset(S_NAMES))

    def __post_init__(self) -> None:
        f = as_frequencies(self.freqs)
        object.__setattr__(self, "freqs", f)
        for name in S_NAMES:
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != f.shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {f.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "phase_known", frozenset(self.phase_known))
        if not self.phase_known <= set(S_NAMES):
            raise ValidationError(f"unknown names in phase_known: {sorted(self.phase_known - set(S_NAMES))}")

    def __len__(self) -> int:
        return self.freqs.size

    @property
    def has_transmission_phase(self) -> bool:
        return {"s21", "s12"} <= self.phase_known

    def transposed(self) -> "TwoPortSpectrum":
        """Exchange the roles of port 1 and port 2."""
        swap = {"s11": "s22", "s22": "s11", "s21": "s12", "s12": "s21"}
        return TwoPortSpectrum(
            self.freqs, self.s22, self.s12, self.s21, self.s11, frozenset(swap[n] for n in self.phase_known)
        )

    def magnitude_db(self, name: str) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(getattr(self, name)))

    def phase(self, name: str, deg: bool = False) -> np.ndarray:
        return np.angle(getattr(self, name), deg=deg)

    def as_matrix(self) -> np.ndarray:
        """S-matrices stacked with shape (n, 2, 2), entry [k, i, j] = S_(i+1)(j+1)."""
        out = np.empty((self.freqs.size, 2, 2), dtype=complex)
        out[:, 0, 0] = self.s11
        out[:, 0, 1] = self.s12
        out[:, 1, 0] = self.s21
        out[:, 1, 1] = self.s22
        return out


def identity_spectrum(grid) -> TwoPortSpectrum:
    f = as_frequencies(grid)
    one = np.ones(f.size, dtype=complex)
    zero = np.zeros(f.size, dtype=complex)
    return TwoPortSpectrum(f, zero, one, one.copy(), zero.copy())


@dataclass(frozen=True)
class MagnetConfig:
    """Bias field B and anisotropy field B_A (tesla) with gyromagnetic ratio (Hz/T)."""

    B: float
    B_A: float = 0.0
    gyro: float = DEFAULT_GYRO_HZ_PER_T

    def __post_init__(self) -> None:
        _check_finite("MagnetConfig", B=self.B, B_A=self.B_A, gyro=self.gyro)
        if self.gyro <= 0:
            raise ValidationError(f"MagnetConfig.gyro must be > 0, got {self.gyro!r}")


def _rates(params: ResonatorParams) -> tuple[float, float, float]:
    return TWO_PI * params.gamma_i, TWO_PI * params.kappa_R, TWO_PI * params.kappa_L


def s_matrix_single(params: ResonatorParams, grid) -> TwoPortSpectrum:
    """Two-port response of one resonator side-coupled to the waveguide.

    Transmission in each direction is one minus that direction's coupling
    over the complex resonance denominator; both reflections share the
    geometric mean of the two couplings.
    """
    f = as_frequencies(grid)
    if params.kappa_R == 0.0 and params.kappa_L == 0.0:
        return identity_spectrum(f)
    # power-of-two rescaling so the linewidth is O(1): exact, and keeps tiny rates from underflowing
    k = -math.frexp(params.total_linewidth)[1]
    gi, kr, kl = _rates(params.replace(
        gamma_i=math.ldexp(params.gamma_i, k), kappa_R=math.ldexp(params.kappa_R, k), kappa_L=math.ldexp(params.kappa_L, k)
    ))
    with np.errstate(over="ignore"):
        detuning = np.clip(TWO_PI * np.ldexp(f - params.f_m, k), -1e300, 1e300)
    den = detuning + 1j * (gi + 0.5 * (kr + kl))
    s21 = 1.0 - 1j * kr / den
    s12 = 1.0 - 1j * kl / den
    s11 = -1j * (math.sqrt(kr) * math.sqrt(kl)) / den
    return TwoPortSpectrum(f, s11, s21, s12, s11.copy())


def absorption(spec: TwoPortSpectrum, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Absorbed power fractions (A21, A12) for rightward and leftward incidence.

    Values are returned unclamped.  With ``strict`` (the default, meant for
    model output) anything below -1e-9 raises :class:`ModelConsistencyError`;
    pass ``strict=False`` for measured data.
    """
    a21 = 1.0 - np.abs(spec.s21) ** 2 - np.abs(spec.s11) ** 2
    a12 = 1.0 - np.abs(spec.s12) ** 2 - np.abs(spec.s22) ** 2
    if strict:
        worst = min(a21.min(), a12.min())
        if worst < -PASSIVITY_EPS:
            raise ModelConsistencyError(f"negative absorption {worst:.3e} from a passive model")
    return a21, a12


def chirality_from_rates(kappa_R: float, kappa_L: float) -> float:
    total = kappa_R + kappa_L
    if total <= 0:
        raise UndefinedChiralityError("chirality is undefined when kappa_R = kappa_L = 0")
    return (kappa_R - kappa_L) / total


def chirality(params: ResonatorParams) -> float:
    """(kappa_R - kappa_L) / (kappa_R + kappa_L), in [-1, 1]."""
    return chirality_from_rates(params.kappa_R, params.kappa_L)


def isolation_db(spec: TwoPortSpectrum) -> np.ndarray:
    """20 log10(|S21| / |S12|) per point.

    Negative when rightward transmission is the suppressed one.  A vanishing
    |S21| gives -inf, a vanishing |S12| gives +inf, and both vanishing gives
    nan.  Never raises.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return 20.0 * (np.log10(np.abs(spec.s21)) - np.log10(np.abs(spec.s12)))


def magnon_frequency(mag: MagnetConfig) -> float:
    """Kittel-mode frequency gyro * (B + B_A) in Hz."""
    b_eff = mag.B + mag.B_A
    if b_eff < 0:
        raise DomainError(f"effective field B + B_A = {b_eff!r} T is negative")
    return mag.gyro * b_eff


def bias_field_for_frequency(f_m: float, B_A: float = 0.0, gyro: float = DEFAULT_GYRO_HZ_PER_T) -> float:
    """External field B (tesla) that puts the magnon mode at ``f_m``."""
    if f_m < 0:
        raise DomainError(f"target frequency {f_m!r} Hz is negative")
    return f_m / gyro - B_A


@dataclass(frozen=True)
class CriticalReport:
    is_critical: bool
    kappa_R_critical: float
    gap: float
    perfect_chiral: bool

    def lines(self) -> list[str]:
        return [
            f"kappa_R_critical_hz = {self.kappa_R_critical!r}",
            f"gap_hz = {self.gap!r}",
            f"is_critical = {str(self.is_critical).lower()}",
            f"perfect_chiral = {str(self.perfect_chiral).lower()}",
        ]


def critical_detuning_check(params: ResonatorParams) -> CriticalReport:
    """Compare kappa_R with the critical value 2 gamma_i.

    ``gap`` is kappa_R - 2 gamma_i (Hz, /2π): negative means under-coupled.
    Inputs with kappa_L != 0 are reported with ``perfect_chiral = False``.
    """
    target = 2.0 * params.gamma_i
    gap = params.kappa_R - target
    return CriticalReport(
        is_critical=abs(gap) <= CRITICAL_RTOL * target,
        kappa_R_critical=target,
        gap=gap,
        perfect_chiral=params.kappa_L == 0.0,
    )


@dataclass(frozen=True, eq=False)
class FieldSweepMap:
    """Transmission maps against bias field; rows follow ``b_values``."""

    b_values: np.ndarray
    f_m: np.ndarray
    freqs: np.ndarray
    s21_db: np.ndarray
    s12_db: np.ndarray
    iso_db: np.ndarray


def field_sweep_map(
    mag_range: Iterable[MagnetConfig], template: ResonatorParams, grid
) -> FieldSweepMap:
    """Sweep the bias field with fixed coupling rates.

    Each row re-centres the template resonator at ``magnon_frequency`` of
    the corresponding magnet setting.
    """
    mags = list(mag_range)
    if not mags:
        raise ValidationError("field sweep needs at least one magnet setting")
    f = as_frequencies(grid)
    rows21, rows12, rowsiso, fms = [], [], [], []
    for mag in mags:
        fm = magnon_frequency(mag)
        spec = s_matrix_single(template.replace(f_m=fm), f)
        fms.append(fm)
        rows21.append(spec.magnitude_db("s21"))
        rows12.append(spec.magnitude_db("s12"))
        rowsiso.append(isolation_db(spec))
    return FieldSweepMap(
        b_values=np.array([m.B for m in mags]),
        f_m=np.array(fms),
        freqs=f,
        s21_db=np.vstack(rows21),
        s12_db=np.vstack(rows12),
        iso_db=np.vstack(rowsiso),
    )
