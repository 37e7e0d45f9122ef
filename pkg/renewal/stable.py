"""
Scaling functions, stable densities and the Stone-Shepp window approximation.

Stable laws use the characteristic function

    exp{-|t|^alpha (1 - i rho tan(pi alpha / 2) sgn t)},   alpha in (1, 2],

with alpha = 2 mapped to the standard normal. Densities and distribution
functions are obtained by trapezoid inversion with step halving.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from loguru import logger
from scipy import integrate, optimize, special, stats

from renewal import dist, exact
from renewal.dist import JumpModel, Side
from renewal.errors import ScaleError
from renewal.ledger import log_event

log = logger.bind(component="stable")

REFINE_TOL = 1e-7
MAX_HALVINGS = 14


class ScaleBranch(str, Enum):
    FINITE_VARIANCE = "finite_variance"
    STABLE = "stable"


@dataclass(frozen=True)
class StableParams:
    alpha: float = 2.0
    rho: float = 0.0

    def __post_init__(self):
        if not 1.0 < self.alpha <= 2.0:
            raise ScaleError(f"Stable index must lie in (1, 2], got {self.alpha}")
        if not -1.0 <= self.rho <= 1.0:
            raise ScaleError(f"Skewness must lie in [-1, 1], got {self.rho}")

    @property
    def is_normal(self) -> bool:
        return self.alpha == 2.0


@dataclass(frozen=True)
class ScaleFunction:
    """psi(t) = sigma sqrt(t), or b(t) = inf{x : F*(x) < 1/t} times ``factor``.

    The stable branch uses the pure power tail F*(x) = constant x^-alpha unless
    ``star_tail`` supplies the two-sided tail of a concrete model.
    """

    branch: ScaleBranch = ScaleBranch.FINITE_VARIANCE
    sigma: float = 1.0
    alpha: float = 2.0
    constant: float = 1.0
    factor: float = 1.0
    star_tail: Optional[Callable[[float], float]] = None

    def __call__(self, t: float) -> float:
        return psi(self, t)

    def calibrated(self, factor: float) -> "ScaleFunction":
        return ScaleFunction(self.branch, self.sigma, self.alpha, self.constant, factor, self.star_tail)


def generalized_inverse(star_tail: Callable[[float], float], t: float, hi: float = 1.0) -> float:
    """inf{x >= 0 : F*(x) < 1/t} for a nonincreasing tail, by bisection."""
    level = 1.0 / t
    if star_tail(0.0) < level:
        return 0.0
    while star_tail(hi) >= level:
        hi *= 2.0
        if hi > 1e300:
            raise ScaleError(f"Tail never drops below 1/t for t={t}")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if star_tail(mid) < level:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return hi


def psi(scale: ScaleFunction, t: float) -> float:
    """Scaling function at t > 0."""
    if not t > 0:
        raise ScaleError(f"Scaling function needs t > 0, got {t}")
    if scale.branch == ScaleBranch.FINITE_VARIANCE:
        return scale.factor * scale.sigma * math.sqrt(t)
    if scale.star_tail is not None:
        return scale.factor * generalized_inverse(scale.star_tail, t)
    return scale.factor * (scale.constant * t) ** (1.0 / scale.alpha)


def scale_for(model: JumpModel) -> ScaleFunction:
    """sigma sqrt(t) for finite variance, else b(t) from the declared tails."""
    mean, var = dist.moments(model)
    if math.isfinite(var):
        if var == 0:
            raise ScaleError("Degenerate jump law: zero variance")
        return ScaleFunction(ScaleBranch.FINITE_VARIANCE, sigma=math.sqrt(var))
    alpha, constant, _ = _tail_balance(model)
    return ScaleFunction(ScaleBranch.STABLE, alpha=alpha, constant=constant)


def _tail_balance(model: JumpModel):
    tails = [t for t in (model.plus_tail, model.minus_tail) if t is not None]
    if not tails:
        raise ScaleError("Infinite variance without a declared tail majorant")
    alpha = min(t.index for t in tails)
    c_plus = model.plus_tail.constant if model.plus_tail is not None and model.plus_tail.index == alpha else 0.0
    c_minus = model.minus_tail.constant if model.minus_tail is not None and model.minus_tail.index == alpha else 0.0
    return alpha, c_plus + c_minus, (c_plus - c_minus) / (c_plus + c_minus)


def params_for(model: JumpModel) -> StableParams:
    """Limit law of the normalised walk: normal, or stable with the tail balance as skew."""
    if math.isfinite(dist.moments(model).variance):
        return StableParams()
    alpha, _, rho = _tail_balance(model)
    if not 1.0 < alpha < 2.0:
        raise ScaleError(f"Stable branch needs a tail index in (1, 2), got {alpha}")
    return StableParams(alpha, rho)


def _trapezoid(f, upper: float) -> float:
    points = 512
    previous = None
    for _ in range(MAX_HALVINGS):
        t = np.linspace(0.0, upper, points + 1)
        value = float(integrate.trapezoid(f(t), t))
        if previous is not None and abs(value - previous) < REFINE_TOL:
            return value
        previous = value
        points *= 2
    log.warning("inversion quadrature did not settle below {:g}", REFINE_TOL)
    return previous


def _cutoff(alpha: float) -> float:
    # exp(-t^alpha) < 1e-17 beyond this point
    return 40.0 ** (1.0 / alpha)


@lru_cache(maxsize=65536)
def _density_cached(alpha: float, rho: float, u: float) -> float:
    skew = 0.0 if rho == 0.0 else rho * math.tan(math.pi * alpha / 2.0)
    integrand = lambda t: np.exp(-t ** alpha) * np.cos(u * t - skew * t ** alpha)
    return max(0.0, _trapezoid(integrand, _cutoff(alpha)) / math.pi)


def inversion_density(alpha: float, rho: float, u: float) -> float:
    """(1/pi) int_0^inf exp(-t^alpha) cos(u t - rho tan(pi alpha/2) t^alpha) dt.

    Accepts alpha = 1 with rho = 0 (Cauchy) as a quadrature sanity point.
    """
    return _density_cached(float(alpha), float(rho), round(float(u), 12))


def stable_density(params: StableParams, u: float) -> float:
    if params.is_normal:
        return float(stats.norm.pdf(u))
    return inversion_density(params.alpha, params.rho, u)


@lru_cache(maxsize=65536)
def _cdf_cached(alpha: float, rho: float, u: float) -> float:
    skew = rho * math.tan(math.pi * alpha / 2.0)

    def integrand(t):
        safe = np.where(t > 0, t, 1.0)
        body = np.exp(-safe ** alpha) * np.sin(u * safe - skew * safe ** alpha) / safe
        return np.where(t > 0, body, u)

    return min(1.0, max(0.0, 0.5 + _trapezoid(integrand, _cutoff(alpha)) / math.pi))


def stable_cdf(params: StableParams, u: float) -> float:
    """Distribution function by Gil-Pelaez inversion."""
    if params.is_normal:
        return float(stats.norm.cdf(u))
    return _cdf_cached(params.alpha, params.rho, round(float(u), 12))


def stable_tail_constant(alpha: float) -> float:
    """C_alpha with P(|X| > u) ~ C_alpha u^-alpha for the unit-scale stable law."""
    return (1.0 - alpha) / (special.gamma(2.0 - alpha) * math.cos(math.pi * alpha / 2.0))


def tail_mass(params: StableParams, u: float) -> float:
    """Asymptotic mass outside [-u, u]."""
    if params.is_normal:
        return float(2.0 * stats.norm.sf(u))
    return stable_tail_constant(params.alpha) * u ** (-params.alpha)


def stone_shepp_window(
    model: JumpModel,
    scale: ScaleFunction,
    n: int,
    x: float,
    delta: float,
    params: Optional[StableParams] = None,
) -> float:
    """(delta / psi(n)) phi((x - mu n) / psi(n))."""
    if n < 1:
        raise ScaleError(f"Window approximation needs n >= 1, got {n}")
    params = params or StableParams()
    mu = dist.moments(model).mean
    s = psi(scale, n)
    return delta / s * stable_density(params, (x - mu * n) / s)


@dataclass(frozen=True)
class Calibration:
    n: int
    factor: float
    theoretical_factor: float
    mad_exact: float
    mad_stable: float
    median_exact: float
    median_stable: float

    def as_dict(self):
        return dict(vars(self))


def _smoothed_cdf(values: np.ndarray, probs: np.ndarray, unit: float) -> Callable[[float], float]:
    """CDF with each atom spread uniformly over +-unit/2."""
    cdf = np.concatenate(([0.0], np.cumsum(probs)))
    edges = np.concatenate((values - 0.5 * unit, [values[-1] + 0.5 * unit]))
    return lambda z: float(np.interp(z, edges, cdf))


def _median_and_mad(cdf: Callable[[float], float], lo: float, hi: float):
    median = optimize.brentq(lambda z: cdf(z) - 0.5, lo, hi, xtol=1e-10)
    width = hi - lo
    mad = optimize.brentq(lambda d: cdf(median + d) - cdf(median - d) - 0.5, 0.0, width, xtol=1e-10)
    return median, mad


def calibrate_scale(model: JumpModel, n: int, window: Optional[int] = None) -> Calibration:
    """Factor matching the median absolute deviation of (S_n - mu n)/b(n) to the stable law.

    The law of S_n comes from the exact engine on a window in lattice units;
    absorbed mass is folded into the end bins, outside every quantile used.
    """
    if not model.is_lattice:
        raise ScaleError("Scale calibration needs a lattice model")
    params = params_for(model)
    scale = scale_for(model)
    mu = dist.moments(model).mean
    b = psi(scale, n)
    if window is None:
        window = int(math.ceil((mu * n + 40.0 * b) / model.span))
    lo = max(min(0, n * model.min_unit), -window)
    law = exact.law_of_sum(model, n, lo=lo, hi=window)
    values = (np.arange(law.offset, law.hi + 1) * model.span - mu * n) / b
    probs = law.probs.copy()
    probs[0] += law.absorbed_below
    probs[-1] += law.absorbed_above
    cdf = _smoothed_cdf(values, probs, model.span / b)
    median_exact, mad_exact = _median_and_mad(cdf, float(values[0]) - 1.0, float(values[-1]) + 1.0)

    stable = lambda u: stable_cdf(params, u)
    median_stable, mad_stable = _median_and_mad(stable, -20.0, 20.0)
    factor = mad_exact / mad_stable
    theoretical = 1.0 if params.is_normal else stable_tail_constant(params.alpha) ** (-1.0 / params.alpha)
    cal = Calibration(n, factor, theoretical, mad_exact, mad_stable, median_exact, median_stable)
    log_event("scale_calibration", cal.as_dict())
    return cal


def star_tail_of(model: JumpModel) -> Callable[[float], float]:
    """Two-sided tail x -> F*(x) of a concrete model."""
    return lambda x: float(dist.tail(model, x, Side.STAR))
