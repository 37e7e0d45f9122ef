"""
Cumulant function, Cramer tilting and the lambda_q solver.

L(lambda) = ln E exp(lambda xi) is convex; for a positive mean it decreases
on (lambda_-, lambda_min) and increases on (lambda_min, lambda_+). For a
weight factor exp(q n) the tilt parameter lambda_q solves L(lambda_q) = -q on
the increasing branch, and

    exp(q n) P(S_n in dt) = exp(-lambda_q t) P(S_n^(lambda_q) in dt).
"""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy import integrate, optimize, special

from renewal import dist
from renewal.dist import JumpModel, ModelKind
from renewal.errors import CramerError

log = logger.bind(component="cramer")

LATTICE_ROOT_TOL = 1e-12
CONTINUOUS_ROOT_TOL = 1e-9


def cumulant(model: JumpModel, lam: float) -> float:
    """L(lambda); inf outside the mgf domain."""
    return dist.log_mgf(model, lam)


def cumulant_derivative(model: JumpModel, lam: float) -> float:
    """L'(lambda), the mean of the tilted law."""
    lam = float(lam)
    if model.is_lattice:
        if len(model.probs) == 1:
            return float(model.values[0])
        w = lam * model.values + np.log(np.where(model.probs > 0, model.probs, 1.0))
        w = np.where(model.probs > 0, w, -np.inf)
        return float(np.dot(model.values, special.softmax(w)))
    if model.kind == ModelKind.NORMAL:
        return model.param("mean") + model.param("sd") ** 2 * lam
    if model.kind == ModelKind.SHIFTED_EXPONENTIAL:
        rate = model.param("rate")
        if lam >= rate:
            return math.inf
        return model.param("shift") + 1.0 / (rate - lam)
    alpha, shift, scale = model.param("alpha"), model.param("shift"), model.param("scale")
    if lam > 0:
        return math.inf
    density = lambda s: alpha * s ** (-alpha - 1.0) * math.exp(lam * scale * s)
    num, _ = integrate.quad(lambda s: scale * s * density(s), 1.0, math.inf)
    den, _ = integrate.quad(density, 1.0, math.inf)
    return shift + num / den


def find_lambda_min(model: JumpModel) -> Tuple[float, float]:
    """(lambda_min, L(lambda_min)); lambda_min = -inf when L decreases to its infimum."""
    mu = dist.moments(model).mean
    lo_domain, _ = dist.mgf_domain(model)
    if model.is_lattice:
        if model.min_unit >= 0:
            p0 = float(model.probs[0]) if model.min_unit == 0 else 0.0
            return -math.inf, (math.log(p0) if p0 > 0 else -math.inf)
    elif model.kind == ModelKind.NORMAL:
        m, s = model.param("mean"), model.param("sd")
        lam = -m / s ** 2
        return lam, cumulant(model, lam)
    elif model.kind == ModelKind.SHIFTED_EXPONENTIAL:
        rate, shift = model.param("rate"), model.param("shift")
        if shift >= 0:
            return -math.inf, -math.inf
        lam = rate + 1.0 / shift
        return lam, cumulant(model, lam)
    else:
        if model.param("shift") + model.param("scale") >= 0:
            return -math.inf, -math.inf

    if not mu > 0:
        raise CramerError(f"lambda_min needs a positive mean, model has mu={mu!r}")
    # L'(0) = mu > 0, so the minimiser is negative; walk left until L' < 0
    a = -1.0
    while cumulant_derivative(model, a) >= 0:
        a *= 2.0
        if a < -1e6 or a <= lo_domain:
            raise CramerError("Could not bracket lambda_min")
    res = optimize.minimize_scalar(lambda l: cumulant(model, l), bracket=(a, 0.0), method="golden", tol=1e-10)
    lam = float(res.x)
    if model.is_lattice:
        # polish on the exact derivative
        lam = optimize.brentq(lambda l: cumulant_derivative(model, l), a, 0.0, xtol=1e-15)
    return lam, cumulant(model, lam)


def lundberg_root(model: JumpModel) -> Optional[float]:
    """The negative root lambda* of L, or None when jumps cannot go below 0.

    For a walk with positive drift, P(inf_n S_n < -m) <= exp(lambda* m).
    """
    lam_min, l_min = find_lambda_min(model)
    if not l_min < 0 or not math.isfinite(lam_min):
        return None
    if model.kind == ModelKind.NORMAL:
        return -2.0 * model.param("mean") / model.param("sd") ** 2
    lo = 2.0 * lam_min
    while cumulant(model, lo) <= 0:
        lo *= 2.0
        if lo < -1e6:
            return None
    return float(optimize.brentq(lambda l: cumulant(model, l), lo, lam_min, xtol=1e-15))


def tilt(model: JumpModel, lam: float) -> JumpModel:
    """Law of xi^(lambda): P(xi^(lambda) in dt) = exp(lambda t) P(xi in dt) / phi(lambda)."""
    lam = float(lam)
    if lam == 0.0:
        return model
    lo, hi = dist.mgf_domain(model)
    if not lo < lam < hi:
        raise CramerError(f"lambda={lam} outside the mgf domain ({lo}, {hi})", interval=(lo, hi))
    if model.is_lattice:
        positive = model.probs > 0
        logw = np.where(positive, lam * model.values + np.log(np.where(positive, model.probs, 1.0)), -np.inf)
        probs = np.exp(logw - special.logsumexp(logw))
        return dataclasses.replace(
            model,
            probs=probs,
            plus_tail=None,
            minus_tail=None,
            cut_mass=0.0,
            label=f"{model.label or 'lattice'} tilted by {lam:.6g}",
        )
    if model.kind == ModelKind.NORMAL:
        m, s = model.param("mean"), model.param("sd")
        return dist.normal(m + s ** 2 * lam, s, label=f"normal tilted by {lam:.6g}")
    if model.kind == ModelKind.SHIFTED_EXPONENTIAL:
        rate, shift = model.param("rate"), model.param("shift")
        return dist.shifted_exponential(rate - lam, shift, label=f"shifted_exponential tilted by {lam:.6g}")
    raise CramerError("pareto_shifted has no closed-form tilt; use a lattice or light-tailed model")


@dataclass(frozen=True)
class TiltContext:
    q: float
    lam_minus: float
    lam_plus: float
    lam_min: float
    L_min: float
    lam_q: float
    mu_q: float
    tilted: JumpModel = field(compare=False, repr=False)

    @property
    def q_interval(self) -> Tuple[float, float]:
        """Admissible q: L(lambda_+) is +inf for every tiltable family."""
        return (-math.inf, -self.L_min)

    def as_dict(self):
        return {
            "q": self.q,
            "lambda_minus": self.lam_minus,
            "lambda_plus": self.lam_plus,
            "lambda_min": self.lam_min,
            "L_min": self.L_min,
            "lambda_q": self.lam_q,
            "mu_q": self.mu_q,
        }


def solve_lambda_q(model: JumpModel, q: float) -> TiltContext:
    """Unique lambda_q in (lambda_min, lambda_+) with L(lambda_q) = -q."""
    q = float(q)
    if model.kind == ModelKind.PARETO_SHIFTED:
        raise CramerError("pareto_shifted has lambda_+ = 0 and no closed-form tilt")
    mu = dist.moments(model, renewal=True).mean
    lam_minus, lam_plus = dist.mgf_domain(model)
    lam_min, l_min = find_lambda_min(model)
    interval = (-math.inf, -l_min)
    if q == 0.0:
        return TiltContext(q, lam_minus, lam_plus, lam_min, l_min, 0.0, mu, model)
    target = -q
    if not l_min < target:
        raise CramerError(
            f"q={q} outside the admissible interval ({interval[0]}, {interval[1]!r}); "
            f"L(lambda_min)={l_min!r}",
            interval=interval,
        )

    f = lambda l: cumulant(model, l) - target
    if target > 0:
        lo = 0.0
        hi = 1.0 if math.isinf(lam_plus) else 0.5 * lam_plus
        while f(hi) <= 0:
            hi = 2.0 * hi if math.isinf(lam_plus) else 0.5 * (hi + lam_plus)
    else:
        hi = 0.0
        if math.isfinite(lam_min):
            lo = lam_min
        else:
            lo = -1.0
            while f(lo) >= 0:
                lo *= 2.0
    if model.kind == ModelKind.NORMAL:
        m, s = model.param("mean"), model.param("sd")
        lam = (-m + math.sqrt(m * m + 2.0 * s * s * target)) / s ** 2
    else:
        lam = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        for _ in range(3):
            slope = cumulant_derivative(model, lam)
            candidate = lam - f(lam) / slope
            if lo <= candidate <= hi and abs(f(candidate)) < abs(f(lam)):
                lam = candidate
            else:
                break

    tol = LATTICE_ROOT_TOL if model.is_lattice else CONTINUOUS_ROOT_TOL
    residual = abs(f(lam))
    if residual > tol:
        raise CramerError(f"lambda_q solver residual {residual:.3e} exceeds {tol:.0e} for q={q}", interval=interval)
    if not lam_min < lam < lam_plus:
        raise CramerError(f"lambda_q={lam} not inside (lambda_min, lambda_+) = ({lam_min}, {lam_plus})", interval=interval)
    tilted = tilt(model, lam)
    mu_q = cumulant_derivative(model, lam)
    log.debug("q={} -> lambda_q={:.12g}, mu_q={:.12g}", q, lam, mu_q)
    return TiltContext(q, lam_minus, lam_plus, lam_min, l_min, float(lam), float(mu_q), tilted)


def scan_lambda_q(model: JumpModel, q: float, lo: float, hi: float, points: int = 200001) -> float:
    """Independent estimate of lambda_q: dense grid scan of L on [lo, hi]."""
    grid = np.linspace(lo, hi, points)
    values = np.array([cumulant(model, l) for l in grid]) if not model.is_lattice else special.logsumexp(
        np.outer(grid, model.values), b=model.probs, axis=1
    )
    increasing = np.gradient(values, grid) > 0
    err = np.where(increasing, np.abs(values + q), np.inf)
    return float(grid[int(np.argmin(err))])
