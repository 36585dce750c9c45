"""Least-squares extraction of resonator parameters from two-port spectra.

The optimiser is a small Levenberg-Marquardt loop (multiplicative damping,
x10 on reject and x0.1 on accept) with an analytic Jacobian and projected
box bounds.  It works in normalised coordinates:

    f_m     = f_ref + s * x
    gamma_i = s * x
    kappa   = s * u**2          (u >= 0)

with ``s`` a linewidth scale taken from the start point.  The square-root
parametrisation keeps |S11| = sqrt(kappa_R kappa_L)/|D| differentiable when
one coupling vanishes, which is exactly the perfect-chiral case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NoResonanceError, ValidationError
from .model import S_NAMES, ResonatorParams, TwoPortSpectrum, chirality, s_matrix_single

PARAM_NAMES = ("f_m", "gamma_i", "kappa_R", "kappa_L", "bg_slope", "bg_offset")
RESONATOR_NAMES = PARAM_NAMES[:4]
RATE_NAMES = ("gamma_i", "kappa_R", "kappa_L")
SQRT_NAMES = ("kappa_R", "kappa_L")
DEFAULT_FREE = RESONATOR_NAMES
GHZ = 1e9
# cost increase tolerated while polishing: well above the summation error of
# a few thousand squared residuals, far below any meaningful change
_POLISH_RTOL = 1e-12


@dataclass(frozen=True)
class Background:
    """Affine transmission baseline 1 + offset + slope * (f - f_ref) / 1 GHz."""

    slope: float = 0.0
    offset: float = 0.0


@dataclass(eq=False)
class FitProblem:
    """Data, weights, free parameters and bounds for one resonator fit.

    Parameters
    ----------
    data : TwoPortSpectrum
        Measured or synthetic spectrum.  Entries listed in
        ``data.phase_known`` are fitted as complex numbers when
        ``use_phase`` allows it; the rest by magnitude.
    weights : array, optional
        Per-frequency nonnegative weights (uniform by default).
    free_params : sequence of str
        Subset of ``PARAM_NAMES``; others stay at their start value.
    bounds : mapping, optional
        ``name -> (lo, hi)`` overriding the defaults.
    use_phase : bool, optional
        ``None`` fits complex values whenever phase data exists.
    ports : sequence of str
        S-parameters entering the residual.
    """

    data: TwoPortSpectrum
    weights: np.ndarray | None = None
    free_params: Sequence[str] = DEFAULT_FREE
    bounds: Mapping[str, tuple[float, float]] | None = None
    use_phase: bool | None = None
    ports: Sequence[str] = S_NAMES

    def __post_init__(self) -> None:
        n = len(self.data)
        self.free_params = tuple(self.free_params)
        unknown = set(self.free_params) - set(PARAM_NAMES)
        if unknown:
            raise ValidationError(f"unknown free parameters: {sorted(unknown)}")
        if len(set(self.free_params)) != len(self.free_params):
            raise ValidationError("free parameters must be distinct")
        if not self.free_params:
            raise ValidationError("at least one free parameter is required")
        if n < 4 * len(self.free_params):
            raise ValidationError(
                f"{n} data points cannot support {len(self.free_params)} free parameters (need 4 per parameter)"
            )
        self.ports = tuple(self.ports)
        if not self.ports or not set(self.ports) <= set(S_NAMES):
            raise ValidationError(f"ports must be a non-empty subset of {S_NAMES}")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValidationError("weights must be finite, nonnegative and one per frequency")
            self.weights = w
        f = self.data.freqs
        span = float(f[-1] - f[0]) or abs(float(f[0])) or 1.0
        defaults = {
            "f_m": (max(float(f[0]), np.finfo(float).tiny), float(f[-1])),
            "gamma_i": (0.0, 10.0 * span),
            "kappa_R": (0.0, 10.0 * span),
            "kappa_L": (0.0, 10.0 * span),
            "bg_slope": (-10.0, 10.0),
            "bg_offset": (-0.5, 0.5),
        }
        merged = dict(defaults)
        for name, pair in (self.bounds or {}).items():
            if name not in PARAM_NAMES:
                raise ValidationError(f"bounds given for unknown parameter {name!r}")
            lo, hi = (float(v) for v in pair)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValidationError(f"bounds for {name} must be finite with lo <= hi")
            if name in RATE_NAMES and lo < 0:
                raise ValidationError(f"lower bound of rate {name} must be >= 0")
            merged[name] = (lo, hi)
        self.bounds = merged

    @property
    def f_ref(self) -> float:
        f = self.data.freqs
        return 0.5 * (float(f[0]) + float(f[-1]))

    def complex_ports(self) -> set[str]:
        if self.use_phase is False:
            return set()
        return set(self.ports) & set(self.data.phase_known)


@dataclass
class FitResult:
    params: ResonatorParams
    background: Background
    stderr: dict[str, float]
    residual_norm: float
    n_iter: int
    converged: bool
    gradient_norm: float
    history: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    free_params: tuple[str, ...] = DEFAULT_FREE

    def value(self, name: str) -> float:
        if name == "bg_slope":
            return self.background.slope
        if name == "bg_offset":
            return self.background.offset
        return getattr(self.params, name)


# -- forward model -----------------------------------------------------------


def model_spectrum(params: ResonatorParams, freqs, background: Background | None = None, f_ref: float | None = None):
    """Resonator spectrum with an optional affine baseline on both transmissions."""
    spec = s_matrix_single(params, freqs)
    if background is None or (background.slope == 0.0 and background.offset == 0.0):
        return spec
    f = spec.freqs
    ref = 0.5 * (f[0] + f[-1]) if f_ref is None else f_ref
    b = 1.0 + background.offset + background.slope * (f - ref) / GHZ
    return TwoPortSpectrum(f, spec.s11, b * spec.s21, b * spec.s12, spec.s22)


class _Objective:
    """Residuals and Jacobian in normalised coordinates."""

    def __init__(self, problem: FitProblem, start: ResonatorParams, start_bg: Background):
        self.problem = problem
        self.f = problem.data.freqs
        self.f_ref = problem.f_ref
        scale = start.total_linewidth
        if not scale > 0:
            scale = (float(self.f[-1] - self.f[0]) or 1.0) / 100.0
        self.scale = scale
        self.sqrt_w = np.sqrt(problem.weights)
        self.complex_ports = problem.complex_ports()
        self.ports = problem.ports
        self.free = problem.free_params
        self.fixed = {
            "f_m": start.f_m,
            "gamma_i": start.gamma_i,
            "kappa_R": start.kappa_R,
            "kappa_L": start.kappa_L,
            "bg_slope": start_bg.slope,
            "bg_offset": start_bg.offset,
        }
        self.data = {name: getattr(problem.data, name) for name in S_NAMES}

    # coordinate maps
    def to_internal(self, name: str, value: float) -> float:
        if name == "f_m":
            return (value - self.f_ref) / self.scale
        if name == "gamma_i":
            return value / self.scale
        if name in SQRT_NAMES:
            return math.sqrt(max(value, 0.0) / self.scale)
        return value

    def to_physical(self, name: str, x: float) -> float:
        if name == "f_m":
            return self.f_ref + self.scale * x
        if name == "gamma_i":
            return self.scale * x
        if name in SQRT_NAMES:
            return self.scale * x * x
        return x

    def dphys_dx(self, name: str, x: float) -> float:
        if name in ("f_m", "gamma_i"):
            return self.scale
        if name in SQRT_NAMES:
            return 2.0 * self.scale * x
        return 1.0

    def pack(self, values: Mapping[str, float]) -> np.ndarray:
        return np.array([self.to_internal(n, values[n]) for n in self.free])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.to_internal(n, self.problem.bounds[n][0]) for n in self.free])
        hi = np.array([self.to_internal(n, self.problem.bounds[n][1]) for n in self.free])
        return lo, hi

    def values(self, x: np.ndarray) -> dict[str, float]:
        out = dict(self.fixed)
        for name, xi in zip(self.free, x):
            out[name] = self.to_physical(name, float(xi))
        return out

    def internal_all(self, x: np.ndarray) -> dict[str, float]:
        """Internal coordinate for every parameter, free or fixed."""
        vals = self.values(x)
        return {n: self.to_internal(n, vals[n]) for n in PARAM_NAMES}

    def evaluate(self, x: np.ndarray, jacobian: bool = True):
        s = self.scale
        xi = self.internal_all(x)
        u, v = xi["kappa_R"], xi["kappa_L"]
        vals = self.values(x)
        kr, kl = s * u * u, s * v * v
        gam = vals["gamma_i"]
        q = s * u * v
        det = self.f - vals["f_m"]
        den = det + 1j * (gam + 0.5 * (kr + kl))
        b = 1.0 + vals["bg_offset"] + vals["bg_slope"] * (self.f - self.f_ref) / GHZ
        t21 = 1.0 - 1j * kr / den
        t12 = 1.0 - 1j * kl / den
        r11 = -1j * q / den
        model = {"s21": b * t21, "s12": b * t12, "s11": r11, "s22": r11}

        # complex derivatives d(model)/d(internal coordinate)
        deriv: dict[str, dict[str, np.ndarray]] = {}
        if jacobian:
            inv = 1.0 / den
            inv2 = inv * inv
            dden = {
                "f_m": -s * np.ones_like(self.f) + 0j,
                "gamma_i": 1j * s * np.ones_like(self.f),
                "kappa_R": 1j * s * u * np.ones_like(self.f),
                "kappa_L": 1j * s * v * np.ones_like(self.f),
            }
            dkr = {"kappa_R": 2.0 * s * u}
            dkl = {"kappa_L": 2.0 * s * v}
            dq = {"kappa_R": s * v, "kappa_L": s * u}
            slope_term = (self.f - self.f_ref) / GHZ
            for name in self.free:
                d = {}
                if name in RESONATOR_NAMES:
                    dd = dden[name]
                    dt21 = -1j * (dkr.get(name, 0.0) * inv - kr * dd * inv2)
                    dt12 = -1j * (dkl.get(name, 0.0) * inv - kl * dd * inv2)
                    d["s21"] = b * dt21
                    d["s12"] = b * dt12
                    d["s11"] = -1j * (dq.get(name, 0.0) * inv - q * dd * inv2)
                    d["s22"] = d["s11"]
                else:
                    db = slope_term if name == "bg_slope" else np.ones_like(self.f)
                    d["s21"] = db * t21
                    d["s12"] = db * t12
                    d["s11"] = np.zeros_like(den)
                    d["s22"] = d["s11"]
                deriv[name] = d

        blocks_r = []
        blocks_j = []
        for port in self.ports:
            m = model[port]
            data = self.data[port]
            if port in self.complex_ports:
                diff = m - data
                blocks_r.append(self.sqrt_w * diff.real)
                blocks_r.append(self.sqrt_w * diff.imag)
                if jacobian:
                    cols = [deriv[n][port] for n in self.free]
                    blocks_j.append(np.column_stack([self.sqrt_w * c.real for c in cols]))
                    blocks_j.append(np.column_stack([self.sqrt_w * c.imag for c in cols]))
                continue
            if port in ("s11", "s22"):
                absden = np.abs(den)
                mag = q / absden
                blocks_r.append(self.sqrt_w * (mag - np.abs(data)))
                if jacobian:
                    cols = []
                    for name in self.free:
                        if name in RESONATOR_NAMES:
                            dabs = np.real(np.conj(den) * dden[name]) / absden
                            cols.append(dq.get(name, 0.0) / absden - q * dabs / absden**2)
                        else:
                            cols.append(np.zeros_like(self.f))
                    blocks_j.append(np.column_stack([self.sqrt_w * c for c in cols]))
                continue
            mag = np.abs(m)
            blocks_r.append(self.sqrt_w * (mag - np.abs(data)))
            if jacobian:
                safe = np.where(mag > 0, mag, 1.0)
                cols = [np.where(mag > 0, np.real(np.conj(m) * deriv[n][port]) / safe, 0.0) for n in self.free]
                blocks_j.append(np.column_stack([self.sqrt_w * c for c in cols]))
        r = np.concatenate(blocks_r)
        if not jacobian:
            return r, None
        return r, np.vstack(blocks_j)


# -- public operations -------------------------------------------------------


def _split_values(values: Mapping[str, float]) -> tuple[ResonatorParams, Background]:
    params = ResonatorParams(
        values["f_m"], max(values["gamma_i"], 0.0), max(values["kappa_R"], 0.0), max(values["kappa_L"], 0.0)
    )
    return params, Background(values["bg_slope"], values["bg_offset"])


def residual_norm(problem: FitProblem, params: ResonatorParams, background: Background | None = None) -> float:
    """Weighted 2-norm sqrt(sum w * r**2) of model minus data."""
    obj = _Objective(problem, params, background or Background())
    x = obj.pack(obj.fixed)
    r, _ = obj.evaluate(x, jacobian=False)
    return float(np.linalg.norm(r))


def residual_jacobian(problem: FitProblem, params: ResonatorParams, background: Background | None = None):
    """Residual vector and analytic Jacobian with respect to the free parameters.

    Columns are derivatives with respect to the physical parameters, in the
    order of ``problem.free_params``.
    """
    obj = _Objective(problem, params, background or Background())
    x = obj.pack(obj.fixed)
    r, jac = obj.evaluate(x)
    chain = np.array([obj.dphys_dx(n, xi) for n, xi in zip(obj.free, x)])
    with np.errstate(divide="ignore", invalid="ignore"):
        return r, jac / chain


def _dip_power(mag: np.ndarray, baseline: float) -> np.ndarray:
    return 1.0 - (mag / baseline) ** 2


def _half_width(f: np.ndarray, p: np.ndarray, i0: int) -> float | None:
    """Half width at half maximum of the peak of ``p`` at index ``i0``."""
    half = 0.5 * p[i0]
    widths = []
    j = i0
    while j > 0 and p[j] > half:
        j -= 1
    if p[j] <= half and j < i0:
        fl = np.interp(half, [p[j], p[j + 1]], [f[j], f[j + 1]])
        widths.append(f[i0] - fl)
    j = i0
    while j < f.size - 1 and p[j] > half:
        j += 1
    if p[j] <= half and j > i0:
        fr = np.interp(half, [p[j], p[j - 1]], [f[j], f[j - 1]])
        widths.append(fr - f[i0])
    if not widths:
        return None
    return float(np.mean(widths))


def initial_guess(data: TwoPortSpectrum, use_phase: bool | None = None) -> ResonatorParams:
    """Start point from the deepest transmission dip.

    The dip in 1 - |S|**2 is Lorentzian with half width
    gamma_i + (kappa_R + kappa_L)/2; on resonance |S21| and |S12| fix the two
    couplings.  Without phase the under-coupled branch is assumed.
    """
    f = data.freqs
    if f.size < 3:
        raise NoResonanceError("need at least three points to locate a resonance")
    m21 = np.abs(data.s21)
    m12 = np.abs(data.s12)
    if not (np.all(np.isfinite(m21)) and np.all(np.isfinite(m12))):
        raise ValidationError("spectrum contains non-finite values")
    combined = np.minimum(m21, m12)
    baseline = float(np.max(np.concatenate([m21, m12])))
    depth = baseline - float(combined.min())
    if baseline <= 0 or depth < 1e-3 * baseline:
        raise NoResonanceError("no transmission dip: depth below 0.1% of the baseline")
    i0 = int(np.argmin(combined))
    deeper = m21 if m21[i0] <= m12[i0] else m12
    p = _dip_power(deeper, baseline)

    f_m = float(f[i0])
    if 0 < i0 < f.size - 1:
        y0, y1, y2 = p[i0 - 1], p[i0], p[i0 + 1]
        curv = y0 - 2.0 * y1 + y2
        if curv < 0:
            shift = 0.5 * (y0 - y2) / curv
            if abs(shift) < 1.0:
                f_m += shift * 0.5 * (f[i0 + 1] - f[i0 - 1])

    width = _half_width(f, p, i0)
    if width is None or not width > 0:
        width = (f[-1] - f[0]) / 4.0
    total = float(width)

    def on_resonance(s: np.ndarray, mag: np.ndarray, name: str) -> float:
        t = mag[i0] / baseline
        phased = use_phase is not False and name in data.phase_known
        if phased:
            ref = s[0] if abs(f[0] - f_m) >= abs(f[-1] - f_m) else s[-1]
            if abs(ref) > 0:
                t = float(np.real(s[i0] * np.conj(ref) / abs(ref))) / baseline
        return t

    t21 = on_resonance(data.s21, m21, "s21")
    t12 = on_resonance(data.s12, m12, "s12")
    kr = max(total * (1.0 - t21), 0.0)
    kl = max(total * (1.0 - t12), 0.0)
    gamma = total - 0.5 * (kr + kl)
    if gamma < 0.05 * total:
        gamma = 0.05 * total
        budget = 2.0 * (total - gamma)
        scale = budget / (kr + kl)
        kr *= scale
        kl *= scale
    return ResonatorParams(f_m=max(f_m, float(np.finfo(float).tiny)), gamma_i=gamma, kappa_R=kr, kappa_L=kl)


def _projected_gradient(g: np.ndarray, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def _polish(obj: "_Objective", x, r, jac, cost, lo, hi, history, max_steps: int = 5):
    """Undamped Gauss-Newton steps judged by the projected gradient.

    Close to the optimum the cost change of a step drops below the
    resolution of the summed squares, so the damped loop can no longer
    tell steps apart while the gradient is still measurably nonzero.  The
    linear model is accurate there: a step is kept when it shrinks the
    projected gradient without raising the cost beyond rounding.
    """
    pg = np.linalg.norm(_projected_gradient(jac.T @ r, x, lo, hi))
    for _ in range(max_steps):
        if pg <= 1e-8 * (1.0 + math.sqrt(cost)):
            break
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        x_new = np.clip(x + step, lo, hi)
        r_new, jac_new = obj.evaluate(x_new)
        cost_new = float(r_new @ r_new)
        pg_new = np.linalg.norm(_projected_gradient(jac_new.T @ r_new, x_new, lo, hi))
        if not (np.isfinite(cost_new) and cost_new <= cost * (1.0 + _POLISH_RTOL) and pg_new < pg):
            break
        x, r, jac, cost, pg = x_new, r_new, jac_new, cost_new, pg_new
        history.append(math.sqrt(cost))
    return x, r, jac, float(r @ r)


def fit_resonator(
    problem: FitProblem,
    start: ResonatorParams | None = None,
    background: Background | None = None,
    max_iter: int = 500,
) -> FitResult:
    """Damped Gauss-Newton fit of the single-resonator model.

    Never raises on non-convergence: the result carries ``converged=False``.
    ``converged`` means the projected gradient satisfies
    |J^T r| <= 1e-8 (1 + |r|) in normalised coordinates.
    """
    if start is None:
        start = initial_guess(problem.data, problem.use_phase)
    background = background or Background()
    obj = _Objective(problem, start, background)
    lo, hi = obj.bounds()
    x = obj.pack(obj.fixed)
    if np.any(x < lo - 1e-12 * (1 + np.abs(lo))) or np.any(x > hi + 1e-12 * (1 + np.abs(hi))):
        raise ValidationError("start point lies outside the bounds")
    x = np.clip(x, lo, hi)

    warnings: list[str] = []
    r, jac = obj.evaluate(x)
    cost = float(r @ r)
    history = [math.sqrt(cost)]
    lam = 1e-3
    n_iter = 0
    stalled = 0
    for n_iter in range(1, max_iter + 1):
        g = jac.T @ r
        pg = _projected_gradient(g, x, lo, hi)
        if np.linalg.norm(pg) <= 1e-8 * (1.0 + math.sqrt(cost)):
            n_iter -= 1
            break
        a = jac.T @ jac
        diag = np.diag(a).copy()
        floor = 1e-12 * max(float(diag.max()), 1e-300)
        diag = np.maximum(diag, floor)
        accepted = False
        while lam < 1e20:
            step = np.linalg.solve(a + lam * np.diag(diag), -g)
            x_new = np.clip(x + step, lo, hi)
            r_new, _ = obj.evaluate(x_new, jacobian=False)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            warnings.append("damping exhausted without a descent step")
            break
        damped = lam > 1e-2
        lam = max(lam * 0.1, 1e-15)
        dx = np.linalg.norm(x_new - x)
        stalled = stalled + 1 if cost_new >= cost else 0
        x = x_new
        r, jac = obj.evaluate(x)
        cost = float(r @ r)
        history.append(math.sqrt(cost))
        # a tiny step only signals convergence when it was close to a Gauss-Newton step
        if dx <= 1e-10 * (np.linalg.norm(x) + 1e-10) and not damped:
            break
        if stalled >= 3:
            break
    else:
        warnings.append(f"iteration cap {max_iter} reached")
    if n_iter < max_iter:
        x, r, jac, cost = _polish(obj, x, r, jac, cost, lo, hi, history)

    g = jac.T @ r
    grad_norm = float(np.linalg.norm(_projected_gradient(g, x, lo, hi)))
    converged = grad_norm <= 1e-8 * (1.0 + math.sqrt(cost))

    # standard errors from the Gauss-Newton covariance
    a = jac.T @ jac
    n_res, n_par = jac.shape
    dof = max(n_res - n_par, 1)
    sigma2 = cost / dof
    rank = np.linalg.matrix_rank(a)
    if rank < n_par:
        warnings.append(f"rank-deficient Jacobian (rank {rank} of {n_par})")
    cov = sigma2 * np.linalg.pinv(a)
    stderr = {}
    for k, (name, xi) in enumerate(zip(obj.free, x)):
        sx = math.sqrt(max(cov[k, k], 0.0))
        if name in SQRT_NAMES and xi == 0.0:
            # pinned at the bound: the linearised error carries no information
            stderr[name] = math.nan
            warnings.append(f"{name} at its lower bound 0; standard error undefined")
        elif name in SQRT_NAMES:
            # kappa = s * u**2 with Gaussian u: exact variance of the square
            s = obj.dphys_dx(name, 1.0) / 2.0
            stderr[name] = abs(s) * math.sqrt(4.0 * float(xi) ** 2 * sx**2 + 2.0 * sx**4)
        else:
            stderr[name] = abs(obj.dphys_dx(name, float(xi))) * sx

    params, bg = _split_values(obj.values(x))
    return FitResult(
        params=params,
        background=bg,
        stderr=stderr,
        residual_norm=math.sqrt(cost),
        n_iter=n_iter,
        converged=converged,
        gradient_norm=grad_norm,
        history=history,
        warnings=warnings,
        free_params=tuple(obj.free),
    )


def format_report(result: FitResult) -> str:
    """Plain key = value report; rates in MHz (/2π), f_m in GHz."""
    unit = {"f_m": ("f_m_ghz", 1e-9), "gamma_i": ("gamma_i_mhz", 1e-6),
            "kappa_R": ("kappa_r_mhz", 1e-6), "kappa_L": ("kappa_l_mhz", 1e-6),
            "bg_slope": ("bg_slope_per_ghz", 1.0), "bg_offset": ("bg_offset", 1.0)}
    lines = ["# chimag resonator fit"]
    for name in PARAM_NAMES:
        if name in ("bg_slope", "bg_offset") and name not in result.free_params:
            continue
        key, factor = unit[name]
        value = result.value(name) * factor
        if name in result.stderr:
            lines.append(f"{key} = {value:.9g} +/- {result.stderr[name] * factor:.3g}")
        else:
            lines.append(f"{key} = {value:.9g} (fixed)")
    try:
        lines.append(f"chirality = {chirality(result.params):.6g}")
    except ValueError:
        lines.append("chirality = undefined")
    lines.append(f"residual_norm = {result.residual_norm:.6g}")
    lines.append(f"iterations = {result.n_iter}")
    lines.append(f"converged = {str(result.converged).lower()}")
    for w in result.warnings:
        lines.append(f"warning = {w}")
    return "\n".join(lines) + "\n"
