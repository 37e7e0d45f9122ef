"""
Asymptotic predictors for weighted renewal sums and checks of their side
conditions on the tails of the jump law.

Every predictor returns a ``Prediction`` echoing the inputs it used, so a
comparison row can be reproduced from its record alone.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from renewal import dist
from renewal.cramer import TiltContext
from renewal.dist import JumpModel, Side
from renewal.errors import PredictionError
from renewal.weights import AveragedSeq, Envelope, WeightSeq, envelope_tail, trend_verdict

log = logger.bind(component="asym")


class Formula(str, Enum):
    BLACKWELL = "blackwell"
    WEIGHTED = "weighted"
    H_RVF = "H_rvf"
    LRV_SUM = "lrv_sum"
    H_PLUS = "h_plus"
    CRAMER_NONLATTICE = "cramer_nonlattice"
    CRAMER_ARITH = "cramer_arith"


@dataclass(frozen=True)
class Prediction:
    formula: Formula
    value: float
    inputs: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise PredictionError(f"{self.formula.value} prediction is not finite: {self.value!r}")

    def as_dict(self) -> Dict[str, Any]:
        return {"formula": self.formula.value, "value": self.value, "inputs": dict(self.inputs)}


def _tilde_at(avg: AveragedSeq, x: float, mu: float) -> Tuple[int, float]:
    k = int(math.floor(x / mu)) if x > 0 else 0
    value = avg.tilde(k)
    if not value > 0:
        raise PredictionError(f"averaged weight at {x}/{mu} is {value!r} <= 0; the averaging condition fails")
    return k, value


def predict_blackwell(delta: float, mu: float) -> Prediction:
    return Prediction(Formula.BLACKWELL, delta / mu, {"delta": delta, "mu": mu})


def predict_weighted(x: float, delta: float, mu: float, avg: AveragedSeq) -> Prediction:
    """(delta / mu) * ã_{floor(x / mu)}; with delta = span this is the arithmetic form."""
    if not delta > 0:
        raise PredictionError(f"delta must be positive, got {delta!r}")
    k, a_tilde = _tilde_at(avg, x, mu)
    return Prediction(
        Formula.WEIGHTED,
        delta / mu * a_tilde,
        {"x": x, "delta": delta, "mu": mu, "index": k, "a_tilde": a_tilde},
    )


def predict_H_rvf(x: float, mu: float, gamma: float, weights: WeightSeq) -> Prediction:
    """x a_{x/mu} / (mu (gamma + 1)) for regularly varying weights of index gamma > -1."""
    if not gamma > -1:
        raise PredictionError(f"H(x) predictor needs gamma > -1, got {gamma}")
    k = int(math.floor(x / mu))
    a = weights(k)
    return Prediction(
        Formula.H_RVF,
        x * a / (mu * (gamma + 1.0)),
        {"x": x, "mu": mu, "gamma": gamma, "index": k, "a": a},
    )


def _local_density(model: JumpModel, side: Side):
    """v or w from the declared majorant; zero beyond a bounded lattice support."""
    majorant = model.plus_tail if side == Side.PLUS else model.minus_tail
    if majorant is not None:
        return majorant.local_density, majorant.index
    if model.is_lattice:
        return (lambda t: np.zeros(np.shape(t))), math.inf
    raise PredictionError(f"{model.kind.value} model has no declared {side.value} tail majorant")


def predict_lrv_sum(
    x: float,
    delta: float,
    model: JumpModel,
    weights: WeightSeq,
    c_minus: Optional[float] = None,
    c_plus: Optional[float] = None,
    width: float = 8.0,
) -> Prediction:
    """Gaussian bulk plus both heavy-tail sums.

    The right sum is cut at n = width * x / mu; the bound on what is left out
    is reported as ``right_remainder``.
    """
    mu, var = dist.moments(model, renewal=True)
    if not math.isfinite(var):
        raise PredictionError("The locally regularly varying predictor needs a finite variance")
    v, alpha = _local_density(model, Side.PLUS)
    w, beta = _local_density(model, Side.MINUS)
    if not min(alpha, beta) > 2:
        raise PredictionError(f"Tail indices must exceed 2, got alpha={alpha}, beta={beta}")
    c_minus = 1.0 / (2.0 * mu) if c_minus is None else c_minus
    c_plus = 2.0 / mu if c_plus is None else c_plus
    if not (0 < c_minus < 1.0 / mu < c_plus):
        raise PredictionError(f"Need 0 < c_- < 1/mu < c_+, got c_-={c_minus}, c_+={c_plus}, mu={mu}")
    sigma = math.sqrt(var)
    b = sigma * math.sqrt(x)

    n = np.arange(max(1, int(math.ceil(c_minus * x))), int(math.floor(c_plus * x)) + 1, dtype=np.int64)
    nf = n.astype(float)
    bulk = float(np.sum(weights.values(n) * np.exp(-(x - mu * nf) ** 2 / (2.0 * var * nf)) / (sigma * np.sqrt(2.0 * math.pi * nf))))

    n_cap = int(math.ceil(width * x / mu))
    right_n = np.arange(int(math.floor(x / mu + b)) + 1, n_cap + 1, dtype=np.int64)
    right = float(np.sum(weights.values(right_n) * right_n * w(mu * right_n - x))) if len(right_n) else 0.0
    right_remainder = 0.0
    if math.isfinite(beta):
        env = weights.envelope()
        # mu n - x >= mu n / 2 beyond n_cap, so w(mu n - x) <= w(mu n / 2)
        w_scale = float(w(1.0)) * (mu / 2.0) ** (-beta - 1.0)
        right_remainder = envelope_tail(Envelope(env.C * w_scale, env.gamma, env.rho), n_cap, power=-beta)

    left_n = np.arange(1, int(math.ceil(x / mu - b)), dtype=np.int64)
    left = float(np.sum(weights.values(left_n) * left_n * v(x - mu * left_n))) if len(left_n) else 0.0

    value = delta * (bulk + right + left)
    return Prediction(Formula.LRV_SUM, value, {
        "x": x, "delta": delta, "mu": mu, "sigma": sigma, "b": b,
        "c_minus": c_minus, "c_plus": c_plus,
        "bulk": delta * bulk, "right": delta * right, "left": delta * left,
        "right_remainder": delta * right_remainder,
    })


def _second_term_range(x: float, mu: float, r: float) -> np.ndarray:
    return np.arange(1, int(math.ceil(x / (r * mu))), dtype=np.int64)


def h_plus_bracket(x: float, delta: float, model: JumpModel, avg: AveragedSeq, r: float) -> Tuple[float, float]:
    """Bounds delta B v(x) <= second term <= delta B v(x (r-1)/r) for a_n >= 0.

    B sums k a_k over k < x/(r mu); x (r-1)/r is the smallest argument of v
    reached in the second term.
    """
    mu = dist.moments(model, renewal=True).mean
    v, _ = _local_density(model, Side.PLUS)
    n = _second_term_range(x, mu, r)
    B = float(np.sum(n * avg.seq.values(n))) if len(n) else 0.0
    return delta * B * float(v(x)), delta * B * float(v(x * (r - 1.0) / r))


def predict_h_plus(x: float, delta: float, model: JumpModel, avg: AveragedSeq, r: float) -> Prediction:
    """(delta/mu) ã_{x/mu} + delta * sum_{n < x/(r mu)} a_n n v(x - mu n)."""
    if not r > 1:
        raise PredictionError(f"r must exceed 1, got {r}")
    mu = dist.moments(model, renewal=True).mean
    v, _ = _local_density(model, Side.PLUS)
    first = predict_weighted(x, delta, mu, avg)
    n = _second_term_range(x, mu, r)
    second = delta * float(np.sum(avg.seq.values(n) * n * v(x - mu * n))) if len(n) else 0.0
    lower, upper = h_plus_bracket(x, delta, model, avg, r)
    return Prediction(Formula.H_PLUS, first.value + second, {
        **first.inputs, "r": r, "first": first.value, "second": second,
        "bracket": [lower, upper],
    })


class CramerForm(str, Enum):
    NONLATTICE = "nonlattice"
    ARITH = "arith"


def predict_cramer(
    x: float,
    delta: float,
    ctx: TiltContext,
    avg_b: AveragedSeq,
    form: CramerForm = CramerForm.NONLATTICE,
) -> Prediction:
    """Nonlattice: (1 - exp(-lam D)) exp(-lam x) / (mu_q lam) b̃_{x/mu_q};
    arithmetic: exp(-lam x) / mu_q b̃_{x/mu_q}. q = 0 is predict_weighted."""
    form = CramerForm(form)
    formula = Formula.CRAMER_ARITH if form == CramerForm.ARITH else Formula.CRAMER_NONLATTICE
    if form == CramerForm.ARITH:
        if not ctx.tilted.is_lattice:
            raise PredictionError("Arithmetic form needs a lattice model")
        if ctx.tilted.span != 1:
            raise PredictionError(f"Arithmetic form needs span 1, model has span {ctx.tilted.span}")
    lam = ctx.lam_q
    if lam == 0.0:
        step = 1.0 if form == CramerForm.ARITH else delta
        base = predict_weighted(x, step, ctx.mu_q, avg_b)
        return Prediction(formula, base.value, {**base.inputs, "q": ctx.q, "lambda_q": 0.0, "fallback": True})
    k, b_tilde = _tilde_at(avg_b, x, ctx.mu_q)
    if form == CramerForm.ARITH:
        value = math.exp(-lam * x) / ctx.mu_q * b_tilde
    else:
        value = -math.expm1(-lam * delta) * math.exp(-lam * x) / (ctx.mu_q * lam) * b_tilde
    return Prediction(formula, value, {
        "x": x, "delta": delta, "q": ctx.q, "lambda_q": lam, "mu_q": ctx.mu_q,
        "index": k, "b_tilde": b_tilde,
    })


class Condition(str, Enum):
    LIN = "lin"
    VAA = "VaA"
    VAA_PLUS = "VaA+"
    AW = "aW"
    AW_PLUS = "aW+"
    F_PLUS_O = "F+o"


SERIES_CONDITIONS = (Condition.AW, Condition.AW_PLUS)


@dataclass(frozen=True)
class ConditionReport:
    condition: Condition
    x: Tuple[float, ...]
    observed: Tuple[float, ...]
    verdict: bool
    remainder: Optional[float] = None
    detail: str = ""

    def as_dict(self):
        return {
            "condition": self.condition.value,
            "x": list(self.x),
            "observed": list(self.observed),
            "verdict": self.verdict,
            "remainder": self.remainder,
            "detail": self.detail,
        }


def _plus_tail_fn(model: JumpModel, declared_only: bool):
    if model.plus_tail is not None:
        return model.plus_tail
    if declared_only:
        raise PredictionError("Condition needs a declared right-tail majorant V")
    return lambda t: dist.tail(model, t, Side.PLUS)


def _require_stable_branch(model: JumpModel):
    indices = [t.index for t in (model.plus_tail, model.minus_tail) if t is not None]
    if not indices or not 1 < min(indices) < 2:
        raise PredictionError("Condition needs a declared two-sided tail of index in (1, 2)")


def check_conditions(
    model: JumpModel,
    avg: AveragedSeq,
    which: Condition,
    x_grid: Sequence[float],
    r: float = 2.0,
) -> ConditionReport:
    """Observed ratios (or partial sums) of a tail-versus-weight condition on the x-grid."""
    which = Condition(which)
    xs = [float(x) for x in x_grid]
    if which in SERIES_CONDITIONS:
        return _series_condition(model, avg, which, xs)

    mu = dist.moments(model).mean
    ratios = []
    if which == Condition.LIN:
        tail_fn = _plus_tail_fn(model, declared_only=False)
        for x in xs:
            sums = avg.partial_sums_at(x)
            a_x = avg.seq(int(math.floor(x)))
            ratios.append(float(tail_fn(x)) * sums.A / a_x if a_x > 0 else math.inf)
    elif which in (Condition.VAA, Condition.VAA_PLUS):
        if which == Condition.VAA_PLUS:
            _require_stable_branch(model)
        tail_fn = _plus_tail_fn(model, declared_only=(which == Condition.VAA))
        for x in xs:
            a_tilde = avg.tilde_at(x)
            ratios.append(float(tail_fn(x)) * avg.partial_sums_at(x).tilde_A / a_tilde if a_tilde > 0 else math.inf)
    else:
        tail_fn = _plus_tail_fn(model, declared_only=False)
        for x in xs:
            # B sums j a_j over j <= x / (r mu), endpoint included
            k = int(math.floor(x / (r * mu) + 1e-12))
            B = avg.partial_sums(k).B if k >= 0 else 0.0
            a_tilde = avg.tilde_at(x / mu)
            ratios.append(float(tail_fn(x)) * B / (x * a_tilde) if a_tilde > 0 else math.inf)
    verdict = trend_verdict(ratios)
    return ConditionReport(which, tuple(xs), tuple(ratios), verdict, None,
                           "ratio sequence; pass when it decays along the grid")


def _series_condition(model: JumpModel, avg: AveragedSeq, which: Condition, xs) -> ConditionReport:
    """Partial sums of sum_n ã_n W(n) plus a closed-form power remainder."""
    if which == Condition.AW_PLUS:
        _require_stable_branch(model)
    majorant = model.minus_tail
    if majorant is None and not model.is_lattice:
        raise PredictionError("Condition needs a declared left-tail majorant W")

    def W(n):
        if majorant is None:
            return np.asarray(dist.tail(model, n, Side.MINUS), dtype=float)
        return np.minimum(1.0, majorant(np.maximum(n, 1e-300)))

    top = int(math.floor(max(xs)))
    n = np.arange(0, top + 1, dtype=np.int64)
    terms = avg.tilde_values(n) * W(n.astype(float))
    cumulative = np.cumsum(terms)
    observed = tuple(float(cumulative[int(math.floor(x))]) for x in xs)

    if majorant is None:
        # bounded lattice support: W vanishes beyond it
        remainder = 0.0
    else:
        env = avg.seq.envelope()
        # ã_n <= sup of |a_k| on [n, n + d(n)) <= 2^gamma+ env(n) once d(n) <= n
        widened = Envelope(env.C * 2.0 ** max(env.gamma, 0.0) * majorant.constant, env.gamma, env.rho)
        remainder = envelope_tail(widened, top, power=-majorant.index)
    verdict = math.isfinite(remainder)
    detail = "convergent" if verdict else "divergent: the tail series has no finite majorant"
    if not verdict:
        log.info("{} series diverges: weight growth vs left-tail index", which.value)
    return ConditionReport(which, tuple(xs), observed, verdict, remainder, detail)
