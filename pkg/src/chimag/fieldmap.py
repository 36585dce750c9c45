"""Transverse spin and directional coupling from in-plane magnetic field maps.

A magnon precessing counterclockwise about +z couples to the field
combination Hx - i*Hy.  Since

    |Hx - i Hy|^2 = (|Hx|^2 + |Hy|^2) * (1 + s_z),
    s_z = 2 Im(conj(Hx) Hy) / (|Hx|^2 + |Hy|^2),

the local degree of circular polarization s_z decides which propagation
direction the sphere talks to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.constants import hbar as HBAR
from scipy.constants import mu_0 as MU_0

from .errors import UndefinedChiralityError, ValidationError
from .model import chirality_from_rates

DIRECTIONS = ("right", "left")


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Complex Hx, Hy phasors (A/m) on a rectangular (x, y) grid in mm.

    Arrays have shape ``(len(y_mm), len(x_mm))``; row index follows y.
    """

    x_mm: np.ndarray
    y_mm: np.ndarray
    hx_right: np.ndarray
    hy_right: np.ndarray
    hx_left: np.ndarray
    hy_left: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x_mm, dtype=float)
        y = np.asarray(self.y_mm, dtype=float)
        if x.ndim != 1 or y.ndim != 1 or x.size == 0 or y.size == 0:
            raise ValidationError("field map axes must be non-empty 1D arrays")
        for axis, name in ((x, "x_mm"), (y, "y_mm")):
            if not np.all(np.isfinite(axis)) or np.any(np.diff(axis) <= 0):
                raise ValidationError(f"{name} must be finite and strictly increasing")
        object.__setattr__(self, "x_mm", x)
        object.__setattr__(self, "y_mm", y)
        shape = (y.size, x.size)
        nonzero = False
        for name in ("hx_right", "hy_right", "hx_left", "hy_left"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape} from the grid")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite samples")
            nonzero = nonzero or bool(np.any(arr != 0))
            object.__setattr__(self, name, arr)
        if not nonzero:
            raise ValidationError("field map has no nonzero sample")

    def fields(self, direction: str) -> tuple[np.ndarray, np.ndarray]:
        if direction == "right":
            return self.hx_right, self.hy_right
        if direction == "left":
            return self.hx_left, self.hy_left
        raise ValidationError(f"direction must be 'right' or 'left', got {direction!r}")

    def scaled(self, factor: complex) -> "FieldMap":
        return FieldMap(
            self.x_mm, self.y_mm,
            factor * self.hx_right, factor * self.hy_right,
            factor * self.hx_left, factor * self.hy_left,
        )

    @classmethod
    def from_right(cls, x_mm, y_mm, hx_right, hy_right) -> "FieldMap":
        """Build a map whose leftward fields are the time reverse (conjugate) of the rightward ones."""
        hx = np.asarray(hx_right, dtype=complex)
        hy = np.asarray(hy_right, dtype=complex)
        return cls(x_mm, y_mm, hx, hy, np.conj(hx), np.conj(hy))


@dataclass(frozen=True)
class CouplingPrefactor:
    """Constants entering the magnon-photon coupling strength.

    Defaults describe a 1 mm YIG sphere: Ms = 1.4e5 A/m, gamma = 2*pi*28 GHz/T.
    """

    mu0: float = MU_0
    M_s: float = 1.4e5
    V_s: float = math.pi / 6.0 * (1e-3) ** 3
    hbar: float = HBAR
    gyro_angular: float = 2.0 * math.pi * 2.8e10

    def __post_init__(self) -> None:
        for name in ("mu0", "M_s", "V_s", "hbar", "gyro_angular"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"CouplingPrefactor.{name} must be finite and > 0, got {v!r}")

    @property
    def value(self) -> float:
        return self.mu0 * math.sqrt(self.gyro_angular * self.M_s * self.V_s / (2.0 * self.hbar))

    @classmethod
    def for_sphere(cls, diameter: float, **kwargs) -> "CouplingPrefactor":
        return cls(V_s=math.pi / 6.0 * diameter**3, **kwargs)


@dataclass(frozen=True)
class SphereGeometry:
    """Sphere diameter (m) and centre (x, y) in mm."""

    diameter: float = 1e-3
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not math.isfinite(self.diameter) or self.diameter <= 0:
            raise ValidationError(f"sphere diameter must be > 0, got {self.diameter!r}")
        cx, cy = self.center
        if not (math.isfinite(cx) and math.isfinite(cy)):
            raise ValidationError("sphere center must be finite")
        object.__setattr__(self, "center", (float(cx), float(cy)))

    @property
    def radius_mm(self) -> float:
        return 0.5 * self.diameter * 1e3

    def at(self, y_mm: float) -> "SphereGeometry":
        return SphereGeometry(self.diameter, (self.center[0], y_mm))


def spin_density(fmap: FieldMap, direction: str) -> np.ndarray:
    """Unnormalised transverse spin density Im(conj(Hx) Hy)."""
    hx, hy = fmap.fields(direction)
    return np.imag(np.conj(hx) * hy)


def _polarization(hx, hy):
    hx = np.asarray(hx)
    hy = np.asarray(hy)
    norm = np.abs(hx) ** 2 + np.abs(hy) ** 2
    num = 2.0 * np.imag(np.conj(hx) * hy)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(norm > 0, num / np.where(norm > 0, norm, 1.0), 0.0)
    return np.clip(s, -1.0, 1.0)


def sam_density(fmap: FieldMap, direction: str) -> np.ndarray:
    """Degree of circular polarization of (Hx, Hy), in [-1, 1]; 0 where the field vanishes."""
    hx, hy = fmap.fields(direction)
    return _polarization(hx, hy)


def footprint_mask(fmap: FieldMap, geom: SphereGeometry, footprint: str = "disk") -> np.ndarray:
    """Boolean mask of grid samples seen by the sphere.

    ``"disk"`` selects samples within one radius of the centre; ``"point"``
    selects the single nearest sample.
    """
    xx, yy = np.meshgrid(fmap.x_mm, fmap.y_mm)
    cx, cy = geom.center
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    if footprint == "point":
        mask = np.zeros(d2.shape, dtype=bool)
        mask[np.unravel_index(np.argmin(d2), d2.shape)] = True
        return mask
    if footprint != "disk":
        raise ValidationError(f"footprint must be 'disk' or 'point', got {footprint!r}")
    # small slack so samples exactly on the rim are not lost to rounding
    r = geom.radius_mm
    return d2 <= r * r * (1.0 + 1e-12)


def footprint_inside(fmap: FieldMap, geom: SphereGeometry) -> bool:
    """True when the whole disk lies within the map's bounding box."""
    cx, cy = geom.center
    r = geom.radius_mm
    tol = 1e-9 * max(1.0, r)
    return (
        cx - r >= fmap.x_mm[0] - tol and cx + r <= fmap.x_mm[-1] + tol
        and cy - r >= fmap.y_mm[0] - tol and cy + r <= fmap.y_mm[-1] + tol
    )


def averaged_fields(fmap: FieldMap, geom: SphereGeometry, direction: str, footprint: str = "disk"):
    """Complex field phasors averaged over the sphere footprint."""
    mask = footprint_mask(fmap, geom, footprint)
    if not mask.any():
        raise ValidationError(
            f"sphere footprint at ({geom.center[0]:g}, {geom.center[1]:g}) mm contains no grid sample"
        )
    hx, hy = fmap.fields(direction)
    return complex(hx[mask].mean()), complex(hy[mask].mean())


def coupling_strength(
    fmap: FieldMap, pref: CouplingPrefactor, geom: SphereGeometry, direction: str, footprint: str = "disk"
) -> float:
    """|g| = mu0 sqrt(gamma Ms Vs / 2 hbar) |<Hx> - i<Hy>|."""
    hx, hy = averaged_fields(fmap, geom, direction, footprint)
    return pref.value * abs(hx - 1j * hy)


def coupling_rate(
    fmap: FieldMap, pref: CouplingPrefactor, geom: SphereGeometry, direction: str, footprint: str = "disk"
) -> float:
    """Extrinsic rate kappa/2π = g**2 for one propagation direction.

    The absolute scale inherits the normalisation of the supplied fields;
    ratios and scaling laws are what the map constrains.
    """
    g = coupling_strength(fmap, pref, geom, direction, footprint)
    return g * g


@dataclass(frozen=True)
class ProfileEntry:
    y_mm: float
    kappa_R: float = math.nan
    kappa_L: float = math.nan
    chirality: float = math.nan
    mean_sam_right: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def kappa_profile(
    fmap: FieldMap,
    pref: CouplingPrefactor,
    geom: SphereGeometry,
    y_positions: Iterable[float],
    footprint: str = "disk",
) -> list[ProfileEntry]:
    """Directional rates and chirality as the sphere moves along y.

    The sphere keeps ``geom.center[0]`` as its x position.  Positions whose
    footprint leaves the map produce an entry with ``error`` set instead of
    aborting the profile.
    """
    out = []
    sam_right = sam_density(fmap, "right")
    for y in y_positions:
        y = float(y)
        g = geom.at(y)
        if footprint == "disk" and not footprint_inside(fmap, g):
            out.append(ProfileEntry(y, error="sphere footprint clipped by the map boundary"))
            continue
        try:
            kr = coupling_rate(fmap, pref, g, "right", footprint)
            kl = coupling_rate(fmap, pref, g, "left", footprint)
            mask = footprint_mask(fmap, g, footprint)
            mean_sam = float(sam_right[mask].mean())
            c = chirality_from_rates(kr, kl)
        except UndefinedChiralityError as exc:
            out.append(ProfileEntry(y, kr, kl, math.nan, mean_sam, error=str(exc)))
            continue
        except ValidationError as exc:
            out.append(ProfileEntry(y, error=str(exc)))
            continue
        out.append(ProfileEntry(y, kr, kl, c, mean_sam))
    return out
