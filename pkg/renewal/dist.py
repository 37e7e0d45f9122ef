"""
Jump distribution models.

A ``JumpModel`` is either a lattice table (integer support in units of the
span, probabilities over consecutive lattice points) or one of three
parametric non-lattice families. Every model exposes moments, the tails
F+(t) = P(xi >= t) and F-(t) = P(xi < -t), the moment generating function and
optional regularly varying tail majorants.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, reduce
from typing import Dict, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy import integrate, special, stats

from renewal.errors import DistributionError

log = logger.bind(component="dist")

PROB_TOL = 1e-12


class ModelKind(str, Enum):
    LATTICE = "lattice"
    NORMAL = "normal"
    SHIFTED_EXPONENTIAL = "shifted_exponential"
    PARETO_SHIFTED = "pareto_shifted"


class Side(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    STAR = "star"


@dataclass(frozen=True)
class TailMajorant:
    """Pure power tail V(t) = constant * t^(-index)."""

    index: float
    constant: float = 1.0

    def __post_init__(self):
        if not self.index > 0:
            raise DistributionError(f"Tail index must be positive, got {self.index}")
        if not self.constant > 0:
            raise DistributionError(f"Tail constant must be positive, got {self.constant}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        safe = np.where(t > 0, t, 1.0)
        out = np.where(t > 0, self.constant * safe ** (-self.index), np.inf)
        return out if out.ndim else float(out)

    def local_density(self, t):
        """v(t) = index * V(t) / t, the derivative of the tail at infinity."""
        t = np.asarray(t, dtype=float)
        safe = np.where(t > 0, t, 1.0)
        out = np.where(t > 0, self.index * self.constant * safe ** (-self.index - 1.0), 0.0)
        return out if out.ndim else float(out)


class Moments(NamedTuple):
    mean: float
    variance: float


@dataclass(frozen=True)
class JumpModel:
    """Law of a single jump xi.

    Lattice tables are stored rescaled to span 1: ``probs[i]`` is the mass of
    the original value ``span * (offset + i)``.
    """

    kind: ModelKind
    offset: int = 0
    probs: np.ndarray = field(default_factory=lambda: np.zeros(0), compare=False, repr=False)
    span: int = 1
    params: Tuple[Tuple[str, float], ...] = ()
    plus_tail: Optional[TailMajorant] = None
    minus_tail: Optional[TailMajorant] = None
    cut_mass: float = 0.0
    label: str = ""

    @property
    def is_lattice(self) -> bool:
        return self.kind == ModelKind.LATTICE

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    @cached_property
    def units(self) -> np.ndarray:
        """Support points in lattice units (span 1)."""
        return np.arange(self.offset, self.offset + len(self.probs), dtype=np.int64)

    @cached_property
    def values(self) -> np.ndarray:
        """Support points in original units."""
        return self.span * self.units.astype(float)

    @property
    def min_unit(self) -> int:
        return int(self.offset)

    @property
    def max_unit(self) -> int:
        return int(self.offset + len(self.probs) - 1)

    @cached_property
    def _upper_sums(self) -> np.ndarray:
        """upper[i] = P(unit >= offset + i); one extra trailing zero."""
        upper = np.zeros(len(self.probs) + 1)
        upper[:-1] = np.cumsum(self.probs[::-1])[::-1]
        return upper

    @cached_property
    def max_span(self) -> int:
        """g.c.d. of pairwise support differences in lattice units (0 if degenerate)."""
        atoms = self.units[self.probs > 0]
        diffs = (atoms - atoms[0]).tolist()
        return int(reduce(math.gcd, diffs, 0))

    @property
    def has_max_span_one(self) -> bool:
        return self.is_lattice and self.max_span == 1

    @cached_property
    def frozen(self):
        """scipy.stats frozen distribution for the parametric families."""
        if self.kind == ModelKind.NORMAL:
            return stats.norm(loc=self.param("mean"), scale=self.param("sd"))
        if self.kind == ModelKind.SHIFTED_EXPONENTIAL:
            return stats.expon(loc=self.param("shift"), scale=1.0 / self.param("rate"))
        if self.kind == ModelKind.PARETO_SHIFTED:
            return stats.pareto(b=self.param("alpha"), loc=self.param("shift"), scale=self.param("scale"))
        raise DistributionError("Lattice models have no frozen scipy distribution")

    @cached_property
    def _moments(self) -> Moments:
        if self.is_lattice:
            mean = float(np.dot(self.values, self.probs))
            variance = float(np.dot((self.values - mean) ** 2, self.probs))
        else:
            mean, variance = (float(v) for v in self.frozen.stats(moments="mv"))
        if any(t is not None and t.index <= 2 for t in (self.plus_tail, self.minus_tail)):
            variance = math.inf
        return Moments(mean, variance)


def lattice(
    probs,
    offset: int = 0,
    span: int = 1,
    plus_tail: Optional[TailMajorant] = None,
    minus_tail: Optional[TailMajorant] = None,
    cut_mass: float = 0.0,
    label: str = "",
) -> JumpModel:
    """Build a lattice model from masses on consecutive integers offset, offset+1, ...

    Values are in original units; with ``span > 1`` every atom must be a
    multiple of the span and the table is rescaled to span 1.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise DistributionError("Lattice probability table must be a non-empty 1-d array")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise DistributionError("Lattice probabilities must be finite and nonnegative")
    total = math.fsum(p.tolist())
    if abs(total - 1.0) > PROB_TOL:
        raise DistributionError(f"Lattice probabilities sum to {total!r}, expected 1 within {PROB_TOL}")
    if span < 1:
        raise DistributionError(f"Span must be a positive integer, got {span}")

    nz = np.flatnonzero(p)
    p = p[nz[0]: nz[-1] + 1]
    offset = int(offset) + int(nz[0])
    if span > 1:
        atoms = offset + np.flatnonzero(p)
        if np.any(atoms % span):
            raise DistributionError(
                f"Span {span} does not divide every support point; shifted lattices are not supported"
            )
        first = (-offset) % span
        p = p[first::span]
        offset = (offset + first) // span
    return JumpModel(
        kind=ModelKind.LATTICE,
        offset=offset,
        probs=p,
        span=int(span),
        plus_tail=plus_tail,
        minus_tail=minus_tail,
        cut_mass=float(cut_mass),
        label=label,
    )


def lattice_from_table(table: Mapping[int, float], span: int = 1, **kwargs) -> JumpModel:
    """Build a lattice model from a ``{value: probability}`` mapping."""
    if not table:
        raise DistributionError("Empty lattice table")
    lo, hi = min(table), max(table)
    probs = np.zeros(hi - lo + 1)
    for value, prob in table.items():
        probs[value - lo] = prob
    return lattice(probs, offset=lo, span=span, **kwargs)


def pareto_lattice(alpha: float, cut: int, start: int = 1, label: str = "") -> JumpModel:
    """p(k) proportional to k^-(alpha+1) on start..cut, so P(xi >= t) ~ c t^-alpha.

    The mass lost by cutting at ``cut`` (relative to the untruncated law) is
    kept as ``cut_mass``; the declared tail majorant is the one of the
    untruncated law.
    """
    if alpha <= 1:
        raise DistributionError(f"pareto_lattice needs alpha > 1 for a finite mean, got {alpha}")
    if start < 1 or cut < start:
        raise DistributionError(f"Invalid pareto_lattice range start={start}, cut={cut}")
    k = np.arange(start, cut + 1, dtype=float)
    w = k ** (-(alpha + 1.0))
    full = float(special.zeta(alpha + 1.0, start))
    tail_removed = float(special.zeta(alpha + 1.0, cut + 1))
    probs = w / w.sum()
    model = lattice(
        probs,
        offset=start,
        plus_tail=TailMajorant(index=alpha, constant=1.0 / (alpha * full)),
        cut_mass=tail_removed / full,
        label=label or f"pareto_lattice(alpha={alpha}, cut={cut})",
    )
    log.debug("materialized pareto lattice alpha={} cut={} removed mass {:.3e}", alpha, cut, model.cut_mass)
    return model


def normal(mean: float, sd: float, label: str = "") -> JumpModel:
    if not sd > 0:
        raise DistributionError(f"Normal sd must be positive, got {sd}")
    return JumpModel(kind=ModelKind.NORMAL, params=(("mean", float(mean)), ("sd", float(sd))), label=label)


def shifted_exponential(rate: float, shift: float = 0.0, label: str = "") -> JumpModel:
    """xi = shift + Exp(rate)."""
    if not rate > 0:
        raise DistributionError(f"Exponential rate must be positive, got {rate}")
    return JumpModel(
        kind=ModelKind.SHIFTED_EXPONENTIAL,
        params=(("rate", float(rate)), ("shift", float(shift))),
        label=label,
    )


def pareto_shifted(alpha: float, shift: float = 0.0, scale: float = 1.0, label: str = "") -> JumpModel:
    """xi = shift + Y with P(Y >= y) = (scale/y)^alpha for y >= scale."""
    if alpha <= 1:
        raise DistributionError(f"pareto_shifted needs alpha > 1 for a finite mean, got {alpha}")
    if not scale > 0:
        raise DistributionError(f"Pareto scale must be positive, got {scale}")
    return JumpModel(
        kind=ModelKind.PARETO_SHIFTED,
        params=(("alpha", float(alpha)), ("shift", float(shift)), ("scale", float(scale))),
        plus_tail=TailMajorant(index=alpha, constant=scale ** alpha),
        label=label,
    )


def moments(model: JumpModel, renewal: bool = False) -> Moments:
    """Mean and variance of the jump; variance is inf for declared tails of index <= 2."""
    m = model._moments
    if renewal and not m.mean > 0:
        raise DistributionError(f"Renewal scenarios need a positive mean, model has mu={m.mean!r}")
    return m


def tail(model: JumpModel, t, side: Union[Side, str] = Side.PLUS):
    """F+(t) = P(xi >= t), F-(t) = P(xi < -t), star = F- + F+."""
    side = Side(side)
    if side == Side.STAR:
        return tail(model, t, Side.PLUS) + tail(model, t, Side.MINUS)
    t_arr = np.asarray(t, dtype=float)
    if model.is_lattice:
        upper = model._upper_sums
        n = len(model.probs)
        if side == Side.PLUS:
            first = np.ceil(t_arr / model.span) - model.offset
        else:
            # strict: unit < -t/span  <=>  unit <= ceil(-t/span) - 1
            first = np.ceil(-t_arr / model.span) - model.offset
        idx = np.clip(first, 0, n).astype(np.int64)
        out = upper[idx] if side == Side.PLUS else 1.0 - upper[idx]
        out = np.clip(out, 0.0, 1.0)
    else:
        rv = model.frozen
        out = rv.sf(t_arr) if side == Side.PLUS else rv.cdf(-t_arr)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def mgf_domain(model: JumpModel) -> Tuple[float, float]:
    """(lambda_-, lambda_+): endpoints of the set where the mgf is finite."""
    if model.kind == ModelKind.SHIFTED_EXPONENTIAL:
        return (-math.inf, model.param("rate"))
    if model.kind == ModelKind.PARETO_SHIFTED:
        return (-math.inf, 0.0)
    return (-math.inf, math.inf)


def log_mgf(model: JumpModel, lam: float) -> float:
    """ln E exp(lam * xi); inf outside the domain."""
    lam = float(lam)
    if lam == 0.0:
        return 0.0
    if model.is_lattice:
        with np.errstate(over="ignore"):
            return float(special.logsumexp(lam * model.values, b=model.probs))
    if model.kind == ModelKind.NORMAL:
        m, s = model.param("mean"), model.param("sd")
        return lam * m + 0.5 * (lam * s) ** 2
    if model.kind == ModelKind.SHIFTED_EXPONENTIAL:
        rate, shift = model.param("rate"), model.param("shift")
        if lam >= rate:
            return math.inf
        return lam * shift + math.log(rate / (rate - lam))
    alpha, shift, scale = model.param("alpha"), model.param("shift"), model.param("scale")
    if lam > 0:
        return math.inf
    value, _ = integrate.quad(lambda s: alpha * s ** (-alpha - 1.0) * math.exp(lam * scale * s), 1.0, math.inf)
    return lam * shift + math.log(value)


def mgf(model: JumpModel, lam: float) -> float:
    """E exp(lam * xi); inf outside the domain."""
    value = log_mgf(model, lam)
    if value == math.inf or value > 709.0:
        return math.inf
    return math.exp(value)


def sample(model: JumpModel, rng: np.random.Generator, size) -> np.ndarray:
    """Independent draws of xi in original units."""
    if model.is_lattice:
        if len(model.probs) == 1:
            return np.full(size, model.values[0])
        return rng.choice(model.values, size=size, p=model.probs)
    return np.asarray(model.frozen.rvs(size=size, random_state=rng), dtype=float)


def describe(model: JumpModel) -> Dict[str, object]:
    """Summary used by the ``dist-info`` subcommand."""
    mean, variance = moments(model)
    lo, hi = mgf_domain(model)
    info: Dict[str, object] = {
        "kind": model.kind.value,
        "label": model.label,
        "mean": mean,
        "variance": variance,
        "mgf_domain": [lo, hi],
        "plus_tail": None if model.plus_tail is None else vars(model.plus_tail),
        "minus_tail": None if model.minus_tail is None else vars(model.minus_tail),
        "cut_mass": model.cut_mass,
    }
    if model.is_lattice:
        info.update(
            span=model.span,
            support=[model.min_unit * model.span, model.max_unit * model.span],
            max_span=model.max_span,
            atoms=int(np.count_nonzero(model.probs)),
        )
    else:
        info["params"] = dict(model.params)
    return info
