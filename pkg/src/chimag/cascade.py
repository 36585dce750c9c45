"""Composition of resonators and waveguide sections into one two-port.

Composition uses the Redheffer star product of scattering matrices.
Transfer matrices are avoided on purpose: at critical coupling S21 is exactly
zero and converting to T-parameters would divide by it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from . import dispersion
from .errors import SingularityError, ValidationError
from .model import ResonatorParams, TwoPortSpectrum, as_frequencies, identity_spectrum, s_matrix_single

FEEDBACK_EPS = 1e-14


@dataclass(frozen=True)
class PropagationModel:
    """How phase accumulates along bare waveguide sections.

    ``mode`` is ``"linear_phase"`` (beta = n * k0) or ``"sspp_dispersion"``
    (beta from the groove-array model of ``geometry``).
    """

    mode: str = "linear_phase"
    effective_index: float = 1.0
    geometry: dispersion.WaveguideGeometry | None = None

    def __post_init__(self) -> None:
        if self.mode == "linear_phase":
            if not math.isfinite(self.effective_index) or self.effective_index < 1:
                raise ValidationError(f"effective_index must be >= 1, got {self.effective_index!r}")
        elif self.mode == "sspp_dispersion":
            if self.geometry is None:
                object.__setattr__(self, "geometry", dispersion.WaveguideGeometry())
        else:
            raise ValidationError(f"unknown propagation mode {self.mode!r}")

    def beta(self, f: np.ndarray) -> np.ndarray:
        if self.mode == "linear_phase":
            return self.effective_index * 2.0 * math.pi * f / SPEED_OF_LIGHT
        return dispersion.beta(self.geometry, f)


@dataclass(frozen=True)
class Resonator:
    params: ResonatorParams


@dataclass(frozen=True)
class Propagation:
    length: float  # metres

    def __post_init__(self) -> None:
        if not math.isfinite(self.length) or self.length < 0:
            raise ValidationError(f"propagation length must be finite and >= 0, got {self.length!r}")


CascadeElement = Union[Resonator, Propagation, ResonatorParams]


def propagation_section(length: float, model: PropagationModel, grid) -> TwoPortSpectrum:
    """Lossless matched line: S21 = S12 = exp(i beta L), no reflection."""
    Propagation(length)
    f = as_frequencies(grid)
    if length == 0.0:
        return identity_spectrum(f)
    t = np.exp(1j * model.beta(f) * length)
    zero = np.zeros(f.size, dtype=complex)
    return TwoPortSpectrum(f, zero, t, t.copy(), zero.copy())


def star_product(a: TwoPortSpectrum, b: TwoPortSpectrum) -> TwoPortSpectrum:
    """Connect port 2 of ``a`` to port 1 of ``b``."""
    if a.freqs.shape != b.freqs.shape or not np.array_equal(a.freqs, b.freqs):
        raise ValidationError("star_product needs spectra on identical frequency grids")
    d = 1.0 - a.s22 * b.s11
    small = np.flatnonzero(np.abs(d) < FEEDBACK_EPS)
    if small.size:
        i = int(small[0])
        raise SingularityError(
            f"resonant feedback singularity at frequency index {i} ({a.freqs[i]:.9g} Hz)", index=i
        )
    s11 = a.s11 + a.s12 * b.s11 * a.s21 / d
    s21 = b.s21 * a.s21 / d
    s22 = b.s22 + b.s21 * a.s22 * b.s12 / d
    s12 = a.s12 * b.s12 / d
    return TwoPortSpectrum(a.freqs, s11, s21, s12, s22, a.phase_known & b.phase_known)


def element_spectrum(element: CascadeElement, model: PropagationModel, grid) -> TwoPortSpectrum:
    if isinstance(element, ResonatorParams):
        return s_matrix_single(element, grid)
    if isinstance(element, Resonator):
        return s_matrix_single(element.params, grid)
    if isinstance(element, Propagation):
        return propagation_section(element.length, model, grid)
    raise ValidationError(f"not a cascade element: {element!r}")


def cascade_spectrum(
    elements: Sequence[CascadeElement], model: PropagationModel | None = None, grid=None
) -> TwoPortSpectrum:
    """Fold the star product over ``elements`` ordered from port 1 to port 2."""
    if grid is None:
        raise ValidationError("cascade_spectrum needs a frequency grid")
    if not elements:
        raise ValidationError("cascade needs at least one element")
    model = model or PropagationModel()
    f = as_frequencies(grid)
    total = element_spectrum(elements[0], model, f)
    for element in elements[1:]:
        total = star_product(total, element_spectrum(element, model, f))
    return total


def reversed_swapped(elements: Sequence[CascadeElement]) -> list[CascadeElement]:
    """Chain seen from the other port with every coupling direction exchanged.

    Its spectrum is the transpose of the original one.
    """
    out: list[CascadeElement] = []
    for element in reversed(elements):
        if isinstance(element, ResonatorParams):
            out.append(element.swapped())
        elif isinstance(element, Resonator):
            out.append(Resonator(element.params.swapped()))
        else:
            out.append(element)
    return out
