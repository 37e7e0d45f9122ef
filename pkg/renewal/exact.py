"""
Exact evaluation of weighted renewal sums for lattice jump models.

    h(x, D) = sum_n a_n P(S_n in [x, x + D)),    H(x) = sum_n a_n P(S_n < x)

One rolling ``LatticeLaw`` is swept over n = 0..n_max and every query on the
x-grid is accumulated in the same pass. The dropped tail is certified:

* all jumps >= 1 unit: P(S_n < y) = 0 once n * min_jump >= y, residual 0;
* otherwise a Chernoff bound  P(S_n < y) <= exp(n L(lam) - lam y), lam < 0,
  summed against the weight envelope in closed form.

For signed jumps the convolution window is widened by a Lundberg margin;
mass leaving the window is folded into the residual.

Non-lattice models are handled by Monte Carlo (``h_mc``).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import optimize, signal

from renewal import cramer, dist
from renewal.dist import JumpModel
from renewal.errors import DistributionError, DivergenceError, TruncationError, WindowError
from renewal.ledger import log_event
from renewal.weights import Envelope, ExpModulated, WeightSeq, envelope_tail

log = logger.bind(component="exact")

DEFAULT_TOL = 1e-12
DEFAULT_MAX_STEPS = 100_000
LEAK_TOL = 1e-14
CHECK_EVERY = 16
FFT_THRESHOLD = 256


class Method(str, Enum):
    AUTO = "auto"
    DIRECT = "direct"
    TILTED = "tilted"
    MC = "mc"


@dataclass(frozen=True)
class LatticeLaw:
    """Law of S_n on the integer window [offset, offset + len(probs) - 1]."""

    offset: int
    probs: np.ndarray = field(compare=False, repr=False)
    absorbed_above: float = 0.0
    absorbed_below: float = 0.0
    n: int = 0

    @classmethod
    def initial(cls, lo: int, hi: int) -> "LatticeLaw":
        """S_0 = 0 on the window [lo, hi]."""
        if hi < lo:
            raise WindowError(f"Empty window [{lo}, {hi}]")
        probs = np.zeros(hi - lo + 1)
        above = below = 0.0
        if lo <= 0 <= hi:
            probs[-lo] = 1.0
        elif 0 < lo:
            below = 1.0
        else:
            above = 1.0
        return cls(int(lo), probs, above, below, 0)

    @property
    def hi(self) -> int:
        return self.offset + len(self.probs) - 1

    @property
    def total(self) -> float:
        return float(self.probs.sum()) + self.absorbed_above + self.absorbed_below

    def prob_at(self, t: int) -> float:
        i = int(t) - self.offset
        return float(self.probs[i]) if 0 <= i < len(self.probs) else 0.0

    def mean(self) -> float:
        """Mean of the in-window part."""
        units = np.arange(self.offset, self.hi + 1, dtype=float)
        return float(np.dot(units, self.probs))


@dataclass(frozen=True)
class _Kernel:
    """Jump table restricted to the jumps that can stay inside a window."""

    offset: int
    probs: np.ndarray
    above: float
    below: float


def _kernel_for(model: JumpModel, width: int) -> _Kernel:
    lo = max(model.min_unit, -(width - 1))
    hi = min(model.max_unit, width - 1)
    if hi < lo:
        upper = model._upper_sums
        above = float(upper[0]) if model.min_unit > width - 1 else 0.0
        return _Kernel(0, np.zeros(1), above, 1.0 - above)
    i0, i1 = lo - model.offset, hi - model.offset
    return _Kernel(
        lo,
        model.probs[i0: i1 + 1],
        float(model.probs[i1 + 1:].sum()),
        float(model.probs[:i0].sum()),
    )


def _advance(law: LatticeLaw, kernel: _Kernel) -> LatticeLaw:
    mass = float(law.probs.sum())
    if min(len(law.probs), len(kernel.probs)) > FFT_THRESHOLD:
        full = np.clip(signal.fftconvolve(law.probs, kernel.probs), 0.0, None)
    else:
        full = np.convolve(law.probs, kernel.probs)
    start = law.offset + kernel.offset
    if start > law.offset:
        full = np.concatenate((np.zeros(start - law.offset), full))
        start = law.offset
    cut_lo = law.offset - start
    cut_hi = cut_lo + len(law.probs)
    if cut_hi > len(full):
        full = np.concatenate((full, np.zeros(cut_hi - len(full))))
    above = float(full[cut_hi:].sum()) + mass * kernel.above
    below = float(full[:cut_lo].sum()) + mass * kernel.below
    return LatticeLaw(
        law.offset,
        full[cut_lo:cut_hi],
        law.absorbed_above + above,
        law.absorbed_below + below,
        law.n + 1,
    )


def step(law: LatticeLaw, model: JumpModel) -> LatticeLaw:
    """Law of S_{n+1}; mass leaving the window goes to the absorbed bins."""
    if not model.is_lattice:
        raise DistributionError("step needs a lattice model")
    return _advance(law, _kernel_for(model, len(law.probs)))


def law_of_sum(model: JumpModel, n: int, lo: Optional[int] = None, hi: Optional[int] = None) -> LatticeLaw:
    """Law of S_n on [lo, hi] in lattice units; the full support by default (no absorption)."""
    if n < 0:
        raise WindowError(f"Step count must be nonnegative, got {n}")
    if not model.is_lattice:
        raise DistributionError("law_of_sum needs a lattice model")
    lo = min(0, n * model.min_unit) if lo is None else int(lo)
    hi = max(0, n * model.max_unit) if hi is None else int(hi)
    law = LatticeLaw.initial(lo, hi)
    kernel = _kernel_for(model, len(law.probs))
    for _ in range(n):
        law = _advance(law, kernel)
    return law


def plan_window(model: JumpModel, t_lo: int, t_hi: int, margin: int = 0) -> Tuple[int, int]:
    """Window [lo, hi] in lattice units covering the queried units [t_lo, t_hi].

    Nonnegative jumps: [min(0, t_lo), t_hi], exact. Signed jumps need a
    margin at least as wide as the largest jump on both sides.
    """
    if model.min_unit >= 0:
        return min(0, t_lo), max(t_hi, 0)
    reach = max(abs(model.min_unit), abs(model.max_unit))
    if margin < reach:
        raise WindowError(f"Window margin {margin} is smaller than the largest jump {reach}")
    return min(0, t_lo) - margin, max(t_hi, 0) + margin


@dataclass(frozen=True)
class EvalResult:
    x: float
    delta: Optional[float]
    value: float
    residual: float
    n_max: int
    method: Method
    model_error: float = 0.0

    def as_row(self):
        return {
            "x": self.x,
            "delta": self.delta,
            "value": self.value,
            "residual_bound": self.residual,
            "n_max": self.n_max,
            "method": self.method.value,
            "model_error": self.model_error,
        }


def chernoff_tail_bound(model: JumpModel, env: Envelope, n: int, y: float, lam_min: Optional[float] = None) -> float:
    """Bound on sum_{k > n} |a_k| P(S_k < y) for |a_k| <= env(k).

    Uses P(S_k < y) <= exp(k L(lam) - lam y) and minimises over lam < 0.
    """
    if env.C == 0:
        return 0.0
    if lam_min is None:
        lam_min, _ = cramer.find_lambda_min(model)
    lo = lam_min if math.isfinite(lam_min) else -50.0

    def log_bound(lam):
        value = envelope_tail(env, n, log_rate=cramer.cumulant(model, lam))
        if not value > 0:
            return -math.inf if value == 0 else math.inf
        return math.log(value) - lam * y if math.isfinite(value) else math.inf

    res = optimize.minimize_scalar(log_bound, bounds=(lo, -1e-9), method="bounded", options={"xatol": 1e-10})
    best = min(float(res.fun), log_bound(lo), log_bound(0.5 * lo))
    if best == -math.inf:
        return 0.0
    return math.inf if best > 709.0 else math.exp(best)


def chebyshev_tail_bound(model: JumpModel, env: Envelope, n: int, y: float) -> float:
    """Second-moment fallback: P(S_k < y) <= k s^2 / (k mu - y)^2 for k mu > y."""
    mu, var = dist.moments(model)
    if not math.isfinite(var) or env.rho > 0:
        return math.inf
    log.warning("Chebyshev truncation bound in use; it may be loose for growing weights")
    k0 = max(n + 1, int(math.ceil(2.0 * y / mu)) + 1)
    k = np.arange(n + 1, k0, dtype=float)
    head = float(np.sum(env(k))) if len(k) else 0.0
    # k mu - y >= k mu / 2 beyond k0
    return head + 4.0 * var / mu ** 2 * envelope_tail(env, k0 - 1, power=-1.0)


def truncation_bound(model: JumpModel, env: Envelope, n: int, y: float, lam_min: Optional[float] = None) -> float:
    """Chernoff bound on the dropped tail, Chebyshev when that fails."""
    try:
        bound = chernoff_tail_bound(model, env, n, y, lam_min)
    except (ValueError, FloatingPointError):
        bound = math.inf
    if math.isfinite(bound):
        return bound
    return chebyshev_tail_bound(model, env, n, y)


def _check_declared_divergence(model: JumpModel, weights: WeightSeq) -> None:
    """Refuse when sum a_n W(n) diverges for the declared left-tail majorant."""
    if model.minus_tail is None:
        return
    env = weights.envelope()
    series = envelope_tail(env, 0, power=-model.minus_tail.index)
    if not math.isfinite(series):
        raise DivergenceError(
            f"sum_n a_n W(n) diverges for weight growth n^{env.gamma:g} and left tail index "
            f"{model.minus_tail.index:g}; h(x, delta) cannot be certified finite"
        )


def _units_of(delta: float, span: int) -> int:
    k = delta / span
    if not delta > 0 or abs(k - round(k)) > 1e-9:
        raise DistributionError(f"delta={delta!r} must be a positive multiple of the span {span}")
    return int(round(k))


@dataclass
class _Sweep:
    """State of one streaming pass; ``queries`` are unit intervals [lo, hi]."""

    model: JumpModel
    weights: WeightSeq
    q_lo: np.ndarray
    q_hi: np.ndarray
    y: np.ndarray
    below: bool
    tol: float
    max_steps: int
    margin: int = 0
    lundberg: Optional[float] = None


def _run_sweep(sw: _Sweep) -> Tuple[np.ndarray, np.ndarray, int, float, float]:
    """Returns (values, residuals, n_max, leak, model_error)."""
    model = sw.model
    env = sw.weights.envelope()
    t_lo = int(min(sw.q_lo.min(), 0))
    t_hi = int(max(sw.q_hi.max(), 0))
    lo, hi = plan_window(model, t_lo, t_hi, sw.margin)
    law = LatticeLaw.initial(lo, hi)
    kernel = _kernel_for(model, len(law.probs))

    y_max = float(sw.y.max())
    mu = dist.moments(model).mean
    exact_cut = model.min_unit >= 1
    lam_min = None if exact_cut else cramer.find_lambda_min(model)[0]
    if exact_cut:
        n_stop = max(0, int(math.ceil(y_max / (model.min_unit * model.span))))
        if n_stop > sw.max_steps:
            raise TruncationError(f"Exact cut needs {n_stop} steps, above max_steps={sw.max_steps}")

    acc = np.zeros(len(sw.q_lo))
    abs_total = 0.0
    weighted_n = 0.0
    chunk = np.zeros(0)
    n = 0
    while True:
        if n % 4096 == 0:
            chunk = sw.weights.values(np.arange(n, n + 4096, dtype=np.int64))
        a_n = float(chunk[n % 4096])
        if a_n != 0.0:
            cum = np.concatenate(([0.0], np.cumsum(law.probs)))
            i_hi = np.clip(sw.q_hi - law.offset + 1, 0, len(law.probs))
            if sw.below:
                p = cum[i_hi] + law.absorbed_below
            else:
                i_lo = np.clip(sw.q_lo - law.offset, 0, len(law.probs))
                p = cum[i_hi] - cum[np.minimum(i_lo, i_hi)]
            acc += a_n * p
        abs_total += abs(a_n)
        weighted_n += abs(a_n) * n

        if exact_cut:
            if n >= n_stop:
                break
        elif n % CHECK_EVERY == 0 and n > 0 and (y_max <= 0 or n * mu >= y_max):
            if truncation_bound(model, env, n, y_max, lam_min) <= sw.tol:
                break
        if n >= sw.max_steps:
            break
        law = _advance(law, kernel)
        n += 1

    if exact_cut:
        residuals = np.zeros(len(acc))
    else:
        residuals = np.array([truncation_bound(model, env, n, float(y), lam_min) for y in sw.y])
        if not np.all(np.isfinite(residuals)):
            raise DivergenceError(
                f"No finite truncation certificate after {n} steps (weight envelope {tuple(env)})"
            )

    leak = 0.0
    if model.min_unit < 0:
        back = math.exp(sw.lundberg * sw.margin) if sw.lundberg is not None else 1.0
        leak = (law.absorbed_below + law.absorbed_above * back) * abs_total
    model_error = weighted_n * model.cut_mass
    log_event("exact_sweep", {
        "model": model.label,
        "queries": len(acc),
        "n_max": n,
        "window": [lo, hi],
        "residual_max": float(residuals.max()) if len(residuals) else 0.0,
        "leak": leak,
    })
    return acc, residuals + leak, n, leak, model_error


def _signed_margin(model: JumpModel, weights: WeightSeq, max_steps: int) -> Tuple[int, Optional[float]]:
    """Lundberg margin M with (leaked mass) * sum |a_n| below LEAK_TOL."""
    if model.min_unit >= 0:
        return 0, None
    lam_star = cramer.lundberg_root(model)
    reach = max(abs(model.min_unit), abs(model.max_unit))
    if lam_star is None:
        raise WindowError("Signed-jump walk without a Lundberg root; cannot size the window")
    env = weights.envelope()
    horizon = np.arange(1, max_steps + 1, dtype=float)
    weight_mass = 1.0 + float(np.sum(env(horizon)))
    lam_units = lam_star * model.span
    margin = int(math.ceil(math.log(LEAK_TOL / weight_mass) / lam_units))
    return max(margin, reach), lam_units


def _prepare(model: JumpModel, weights: WeightSeq, max_steps: int):
    if not model.is_lattice:
        raise DistributionError("Exact evaluation needs a lattice model; use h_mc for continuous laws")
    dist.moments(model, renewal=True)
    _check_declared_divergence(model, weights)
    env = weights.envelope()
    if env.rho > 0:
        raise TruncationError(
            f"Weights grow like exp({env.rho:g} n); direct summation has no certificate, use the tilted method"
        )
    return _signed_margin(model, weights, max_steps)


def h_exact(
    model: JumpModel,
    weights: WeightSeq,
    x_grid: Iterable[float],
    delta: float,
    method: Method = Method.AUTO,
    tol: float = DEFAULT_TOL,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> List[EvalResult]:
    """h(x, delta) = sum_n a_n P(S_n in [x, x + delta)) for every x in one sweep."""
    method = Method(method)
    xs = np.asarray(list(x_grid), dtype=float)
    if method == Method.MC:
        raise DistributionError("h_exact does not run Monte Carlo; call h_mc")
    if isinstance(weights, ExpModulated) and (method == Method.TILTED or (
            method == Method.AUTO and weights.envelope().rho > 0)):
        return h_exact_tilted(model, weights.q, weights.base, xs, delta, tol=tol, max_steps=max_steps)
    if method == Method.TILTED:
        raise DistributionError("The tilted method needs exponentially modulated weights b_n exp(q n)")

    k = _units_of(delta, model.span)
    margin, lundberg = _prepare(model, weights, max_steps)
    q_lo = np.ceil(xs / model.span - 1e-12).astype(np.int64)
    q_hi = q_lo + k - 1
    sw = _Sweep(model, weights, q_lo, q_hi, xs + delta, False, tol, max_steps, margin, lundberg)
    values, residuals, n_max, _, model_error = _run_sweep(sw)
    return [
        EvalResult(float(x), float(delta), float(v), float(r), n_max, Method.DIRECT, model_error)
        for x, v, r in zip(xs, values, residuals)
    ]


def H_exact(
    model: JumpModel,
    weights: WeightSeq,
    x: float,
    tol: float = DEFAULT_TOL,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EvalResult:
    """H(x) = sum_n a_n P(S_n < x) with a certified residual."""
    margin, lundberg = _prepare(model, weights, max_steps)
    t = int(math.ceil(x / model.span - 1e-12)) - 1
    q = np.asarray([t], dtype=np.int64)
    sw = _Sweep(model, weights, q, q, np.asarray([float(x)]), True, tol, max_steps, margin, lundberg)
    try:
        values, residuals, n_max, _, model_error = _run_sweep(sw)
    except DivergenceError as exc:
        raise DivergenceError(f"H({x}) diverges or cannot be certified: {exc}") from exc
    return EvalResult(float(x), None, float(values[0]), float(residuals[0]), n_max, Method.DIRECT, model_error)


def h_exact_tilted(
    model: JumpModel,
    q: float,
    base: WeightSeq,
    x_grid: Iterable[float],
    delta: float,
    tol: float = DEFAULT_TOL,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> List[EvalResult]:
    """sum_n b_n exp(q n) P(S_n in [x, x + delta)) through the lambda_q-tilted walk.

    Each lattice point t in the window contributes exp(-lambda_q t) times the
    b-weighted point mass of the tilted walk at t.
    """
    ctx = cramer.solve_lambda_q(model, q)
    tilted = ctx.tilted
    xs = np.asarray(list(x_grid), dtype=float)
    k = _units_of(delta, model.span)
    first = np.ceil(xs / model.span - 1e-12).astype(np.int64)
    units = np.unique(np.concatenate([f + np.arange(k) for f in first]))
    points = units * model.span

    margin, lundberg = _prepare(tilted, base, max_steps)
    sw = _Sweep(tilted, base, units, units, points + model.span, False, tol, max_steps, margin, lundberg)
    values, residuals, n_max, _, model_error = _run_sweep(sw)

    factor = np.exp(-ctx.lam_q * points.astype(float))
    by_unit = dict(zip(units.tolist(), range(len(units))))
    results = []
    for x, f in zip(xs, first):
        idx = [by_unit[u] for u in range(int(f), int(f) + k)]
        value = math.fsum((factor[idx] * values[idx]).tolist())
        residual = math.fsum((factor[idx] * residuals[idx]).tolist())
        results.append(EvalResult(float(x), float(delta), value, residual, n_max, Method.TILTED, model_error))
    log_event("tilted_evaluation", {"q": q, "lambda_q": ctx.lam_q, "mu_q": ctx.mu_q, "points": len(units)})
    return results


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    paths: int
    seed: str
    horizon: int
    tail_bound: float = 0.0

    @property
    def interval(self) -> Tuple[float, float]:
        """Three-standard-error band."""
        return (self.estimate - 3 * self.stderr, self.estimate + 3 * self.stderr)


def _mc_block(model, weights, x, delta, horizon, size, root_seed, block) -> np.ndarray:
    rng = np.random.default_rng([root_seed, block])
    a = weights.values(np.arange(horizon + 1, dtype=np.int64))
    totals = np.full(size, a[0] if x <= 0 < x + delta else 0.0)
    position = np.zeros(size)
    for start in range(1, horizon + 1, 1024):
        stop = min(start + 1024, horizon + 1)
        jumps = dist.sample(model, rng, (size, stop - start))
        paths = position[:, None] + np.cumsum(jumps, axis=1)
        hit = (paths >= x) & (paths < x + delta)
        totals += hit @ a[start:stop]
        position = paths[:, -1]
    return totals


def h_mc(
    model: JumpModel,
    weights: WeightSeq,
    x: float,
    delta: float,
    paths: int = 20_000,
    horizon: Optional[int] = None,
    seed: int = 0,
    jobs: int = 1,
    block: int = 2_000,
) -> McEstimate:
    """Monte Carlo estimate of h(x, delta) over ``paths`` independent walks.

    Block b draws from ``default_rng([seed, b])`` so results do not depend on
    ``jobs``.
    """
    if not delta > 0:
        raise DistributionError(f"delta must be positive, got {delta!r}")
    mu = dist.moments(model, renewal=True).mean
    if horizon is None:
        horizon = int(math.ceil(2.0 * (x + delta) / mu)) + 50
    sizes = [min(block, paths - i) for i in range(0, paths, block)]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        parts = list(pool.map(
            lambda b: _mc_block(model, weights, x, delta, horizon, sizes[b], seed, b),
            range(len(sizes)),
        ))
    totals = np.concatenate(parts)
    stderr = float(totals.std(ddof=1) / math.sqrt(len(totals))) if len(totals) > 1 else 0.0
    tail = truncation_bound(model, weights.envelope(), horizon, x + delta)
    est = McEstimate(float(totals.mean()), stderr, int(len(totals)), f"{seed}/{len(sizes)}x{block}", horizon, tail)
    log_event("monte_carlo", {"x": x, "delta": delta, "estimate": est.estimate, "stderr": est.stderr,
                              "paths": est.paths, "seed": est.seed, "tail_bound": tail})
    return est
