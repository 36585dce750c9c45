"""Scattering engine and spectrum tools for chirally coupled waveguide-magnon systems."""

from .cascade import Propagation, PropagationModel, Resonator, cascade_spectrum, propagation_section, star_product
from .dispersion import WaveguideGeometry, beta, cutoff_frequency, group_velocity
from .errors import (
    ChimagError,
    ConfigError,
    DomainError,
    ModelConsistencyError,
    NoResonanceError,
    ParseError,
    SingularityError,
    UndefinedChiralityError,
    ValidationError,
)
from .fieldmap import CouplingPrefactor, FieldMap, SphereGeometry, coupling_rate, kappa_profile, sam_density
from .fitting import FitProblem, FitResult, fit_resonator, initial_guess, residual_norm
from .io import load_scenario, parse_touchstone, read_fieldmap_csv, read_spectrum_csv, write_touchstone
from .model import (
    FrequencyGrid,
    MagnetConfig,
    ResonatorParams,
    TwoPortSpectrum,
    absorption,
    chirality,
    critical_detuning_check,
    field_sweep_map,
    isolation_db,
    magnon_frequency,
    s_matrix_single,
)

__version__ = "0.1.0"
