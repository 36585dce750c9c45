"""Groove-array approximation for the spoof surface plasmon mode.

The single-mode groove model gives

    beta = k0 * sqrt(1 + (a/p)**2 * tan(k0*h)**2),   k0 = 2*pi*f/c

which leaves the light line at low frequency and diverges at the quarter-wave
groove resonance f_c = c / (4h).  Substrate loading is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import DomainError, ValidationError

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class WaveguideGeometry:
    """Groove array geometry in metres.

    ``a`` (groove width) defaults to p/2; it is not calibrated against any
    measured device.
    """

    p: float = 4.1e-3
    h: float = 7.6e-3
    a: float | None = None
    length: float = 0.0

    def __post_init__(self) -> None:
        if self.a is None:
            object.__setattr__(self, "a", 0.5 * self.p)
        for name in ("p", "h", "a", "length"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"WaveguideGeometry.{name} must be finite")
        if self.h <= 0:
            raise ValidationError("groove depth h must be > 0")
        if not 0 < self.a < self.p:
            raise ValidationError(f"groove width a must satisfy 0 < a < p, got a={self.a}, p={self.p}")
        if self.length < 0:
            raise ValidationError("waveguide length must be >= 0")


def cutoff_frequency(geom: WaveguideGeometry) -> float:
    """Quarter-wavelength groove resonance c / (4h) in Hz."""
    return SPEED_OF_LIGHT / (4.0 * geom.h)


def _check_band(geom: WaveguideGeometry, f: np.ndarray) -> None:
    fc = cutoff_frequency(geom)
    bad = np.flatnonzero((f >= fc) | (f < 0) | ~np.isfinite(f))
    if bad.size:
        shown = ", ".join(f"#{i} ({f[i]:.6g} Hz)" for i in bad[:5])
        more = "" if bad.size <= 5 else f" and {bad.size - 5} more"
        raise DomainError(f"frequencies outside [0, cutoff {fc:.6g} Hz): {shown}{more}")


def beta(geom: WaveguideGeometry, f):
    """Propagation constant (rad/m) at frequency ``f`` (Hz, scalar or array)."""
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    _check_band(geom, f_arr)
    k0 = 2.0 * math.pi * f_arr / SPEED_OF_LIGHT
    ratio = geom.a / geom.p
    out = k0 * np.sqrt(1.0 + (ratio * np.tan(k0 * geom.h)) ** 2)
    return out if np.ndim(f) else float(out[0])


def dbeta_df(geom: WaveguideGeometry, f):
    """Closed-form derivative of :func:`beta` with respect to f (rad/m/Hz)."""
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    _check_band(geom, f_arr)
    dk = 2.0 * math.pi / SPEED_OF_LIGHT
    k0 = dk * f_arr
    r2 = (geom.a / geom.p) ** 2
    t = np.tan(k0 * geom.h)
    root = np.sqrt(1.0 + r2 * t * t)
    dbeta_dk0 = root + k0 * r2 * t * (1.0 + t * t) * geom.h / root
    out = dk * dbeta_dk0
    return out if np.ndim(f) else float(out[0])


def group_velocity(geom: WaveguideGeometry, f):
    """d(omega)/d(beta) in m/s from a centred difference with relative step 1e-6."""
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    _check_band(geom, f_arr)
    step = FD_REL_STEP * f_arr
    upper = f_arr + step
    # the upper stencil point may land past cutoff even when f does not
    _check_band(geom, upper)
    dbeta = beta(geom, upper) - beta(geom, f_arr - step)
    with np.errstate(divide="ignore"):
        out = 2.0 * math.pi * (2.0 * step) / dbeta
    out = np.where(f_arr == 0.0, SPEED_OF_LIGHT, out)
    return out if np.ndim(f) else float(out[0])


def dispersion_table(geom: WaveguideGeometry, n_points: int = 200, f_stop: float | None = None) -> dict[str, np.ndarray]:
    """Sample beta, the light line and v_g on (0, f_stop].

    Without ``f_stop`` the samples are fc*i/(n+1), i = 1..n, so the last row
    sits just below cutoff.
    """
    if n_points < 1:
        raise ValidationError("n_points must be >= 1")
    fc = cutoff_frequency(geom)
    if f_stop is None:
        f = fc * np.arange(1, n_points + 1) / (n_points + 1)
    else:
        f = np.linspace(f_stop / n_points, f_stop, n_points)
    b = beta(geom, f)
    return {
        "f_hz": f,
        "beta_rad_per_m": b,
        "k0_rad_per_m": 2.0 * math.pi * f / SPEED_OF_LIGHT,
        "kp_over_pi": b * geom.p / math.pi,
        "vg_m_per_s": group_velocity(geom, f),
    }
