"""
Weight sequences a_n, averaging windows d(n) and averaged sequences.

The averaged sequence is  ã_n = (1/d(n)) * sum_{n <= k < n + d(n)} a_k.
Condition diagnostics (psi-locally constant on average, monotone on average)
are finite-range checks: they report observed constants and a trend verdict.
"""

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from renewal.errors import WeightError

log = logger.bind(component="weights")

MONOTONE_SLACK = 0.05


class Envelope(NamedTuple):
    """|a_n| <= C * n^gamma * exp(rho * n) for every n >= 1."""

    C: float
    gamma: float
    rho: float

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        return self.C * n ** self.gamma * np.exp(self.rho * n)


def envelope_tail(env: Envelope, n: int, log_rate: float = 0.0, power: float = 0.0) -> float:
    """Upper bound on sum_{k > n} C k^(gamma + power) exp((rho + log_rate) k).

    Returns inf when the majorising series diverges.
    """
    if env.C == 0:
        return 0.0
    g = env.gamma + power
    lr = env.rho + log_rate
    m = max(int(n), 0) + 1
    if lr > 0:
        return math.inf
    if lr == -math.inf:
        return 0.0
    if lr == 0:
        if g >= -1:
            return math.inf
        return env.C * (m ** g + m ** (g + 1.0) / (-g - 1.0))
    # ratio of consecutive terms is exp(lr) * ((k+1)/k)^g, below 1 from k_star on
    k_star = m
    if g > 0:
        k_star = max(m, int(math.floor(1.0 / math.expm1(-lr / g))) + 1)
        if k_star - m > 1_000_000:
            return math.inf
    k = np.arange(m, k_star, dtype=float)
    head = math.log(env.C) + g * np.log(k) + lr * k
    s = math.exp(lr) * ((k_star + 1.0) / k_star) ** max(g, 0.0)
    last = math.log(env.C) + g * math.log(k_star) + lr * k_star - math.log1p(-s)
    log_total = float(np.logaddexp.reduce(np.append(head, last)))
    return math.inf if log_total > 709.0 else math.exp(log_total)


class WeightSeq(ABC):
    """Deterministic weight generator; ``values`` is the vectorised form."""

    kind: str = ""

    @abstractmethod
    def values(self, n: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def envelope(self) -> Envelope:
        ...

    @property
    def period(self) -> Optional[int]:
        return None

    @property
    def nonnegative(self) -> bool:
        return False

    def __call__(self, n) -> float:
        return float(self.values(np.asarray([int(n)]))[0])

    def window_means(self, start: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Mean of a_k over [start, start + length) for each pair."""
        stop = int(np.max(start + lengths)) if len(start) else 0
        a = self.values(np.arange(stop, dtype=np.int64))
        prefix = np.concatenate(([0.0], np.cumsum(a)))
        return (prefix[start + lengths] - prefix[start]) / lengths


@dataclass(frozen=True)
class Constant(WeightSeq):
    c: float = 1.0
    kind = "constant"

    def values(self, n):
        return np.full(np.shape(n), float(self.c))

    def envelope(self):
        return Envelope(abs(self.c), 0.0, 0.0)

    @property
    def nonnegative(self):
        return self.c >= 0

    def window_means(self, start, lengths):
        return np.full(np.shape(start), float(self.c))


@dataclass(frozen=True)
class Power(WeightSeq):
    """a_n = c * (n + shift)^gamma; a zero base with gamma < 0 gives 0."""

    gamma: float
    c: float = 1.0
    shift: float = 0.0
    kind = "power"

    def __post_init__(self):
        if self.shift < 0:
            raise WeightError(f"Power weight shift must be nonnegative, got {self.shift}")

    def values(self, n):
        base = np.asarray(n, dtype=float) + self.shift
        if self.gamma < 0:
            safe = np.where(base > 0, base, 1.0)
            return np.where(base > 0, self.c * safe ** self.gamma, 0.0)
        return self.c * base ** self.gamma

    def envelope(self):
        if self.gamma >= 0:
            return Envelope(abs(self.c) * (1.0 + self.shift) ** self.gamma, self.gamma, 0.0)
        return Envelope(abs(self.c), self.gamma, 0.0)

    @property
    def nonnegative(self):
        return self.c >= 0


def harmonic() -> Power:
    """a_n = 1/n for n >= 1, a_0 = 0."""
    return Power(gamma=-1.0)


@dataclass(frozen=True)
class Periodic(WeightSeq):
    pattern: Tuple[float, ...]
    kind = "periodic"

    def __post_init__(self):
        if len(self.pattern) == 0:
            raise WeightError("Periodic weight pattern must be non-empty")

    def values(self, n):
        pat = np.asarray(self.pattern, dtype=float)
        return pat[np.asarray(n, dtype=np.int64) % len(pat)]

    def envelope(self):
        return Envelope(float(max(abs(v) for v in self.pattern)), 0.0, 0.0)

    @property
    def period(self):
        return len(self.pattern)

    @property
    def nonnegative(self):
        return min(self.pattern) >= 0


@dataclass(frozen=True)
class Table(WeightSeq):
    """Explicit a_0..a_{m-1}; ``beyond`` for every later index."""

    table: Tuple[float, ...]
    beyond: float = 0.0
    kind = "table"

    def values(self, n):
        n = np.asarray(n, dtype=np.int64)
        tab = np.asarray(self.table, dtype=float)
        inside = n < len(tab)
        return np.where(inside, tab[np.where(inside, n, 0)] if len(tab) else self.beyond, self.beyond)

    def envelope(self):
        return Envelope(float(max([abs(self.beyond)] + [abs(v) for v in self.table])), 0.0, 0.0)

    @property
    def nonnegative(self):
        return self.beyond >= 0 and all(v >= 0 for v in self.table)


@dataclass(frozen=True)
class ExpModulated(WeightSeq):
    """a_n = b_n * exp(q n)."""

    q: float
    base: WeightSeq
    kind = "exp"

    def values(self, n):
        n = np.asarray(n)
        with np.errstate(over="ignore"):
            return self.base.values(n) * np.exp(self.q * n.astype(float))

    def envelope(self):
        env = self.base.envelope()
        return Envelope(env.C, env.gamma, env.rho + self.q)

    @property
    def period(self):
        return self.base.period

    @property
    def nonnegative(self):
        return self.base.nonnegative


class WindowKind(str, Enum):
    CONSTANT = "constant"
    POWER = "power"


@dataclass(frozen=True)
class AveragingWindow:
    """d(n) = d0 (constant) or max(1, floor(n^delta)) with delta < 1/2."""

    kind: WindowKind = WindowKind.CONSTANT
    d0: int = 1
    delta: float = 0.0

    def __post_init__(self):
        if self.kind == WindowKind.CONSTANT and self.d0 < 1:
            raise WeightError(f"Window length must be a positive integer, got {self.d0}")
        if self.kind == WindowKind.POWER and not 0 <= self.delta < 0.5:
            raise WeightError(f"Window exponent must lie in [0, 1/2), got {self.delta}")

    def lengths(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        if self.kind == WindowKind.CONSTANT:
            return np.full(n.shape, int(self.d0), dtype=np.int64)
        return np.maximum(1, np.floor(n.astype(float) ** self.delta)).astype(np.int64)

    def __call__(self, n: int) -> int:
        return int(self.lengths(np.asarray([n]))[0])


def default_window(seq: WeightSeq) -> AveragingWindow:
    """Period of a periodic generator, otherwise d(n) = 1."""
    return AveragingWindow(d0=seq.period or 1)


class PartialSums(NamedTuple):
    tilde_A: float
    A: float
    A_bar: float
    B: float


class AveragedSeq:
    """ã_n with memoised prefix tables.

    Memo arrays grow append-only under the lock; reads of completed prefixes
    need no lock.
    """

    def __init__(self, seq: WeightSeq, window: Optional[AveragingWindow] = None):
        self.seq = seq
        self.window = window or default_window(seq)
        self._lock = threading.Lock()
        self._size = 0
        self._tilde = np.zeros(0)
        self._sums = np.zeros((4, 0))

    def _ensure(self, n: int) -> None:
        if n < self._size:
            return
        with self._lock:
            if n < self._size:
                return
            size = max(64, 2 * self._size)
            while size <= n:
                size *= 2
            idx = np.arange(size, dtype=np.int64)
            tilde = self.seq.window_means(idx, self.window.lengths(idx))
            a = self.seq.values(idx)
            sums = np.vstack([
                np.cumsum(tilde),
                np.cumsum(a),
                np.cumsum(np.abs(a)),
                np.cumsum(idx * a),
            ])
            self._tilde, self._sums, self._size = tilde, sums, size

    def tilde(self, n: int) -> float:
        if n < 0:
            raise WeightError(f"Index must be nonnegative, got {n}")
        self._ensure(int(n))
        return float(self._tilde[int(n)])

    def tilde_at(self, x: float) -> float:
        """ã at a real argument, using ã_x := ã_floor(x)."""
        return self.tilde(int(math.floor(max(x, 0.0))))

    def tilde_values(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        if n.size == 0:
            return np.zeros(0)
        self._ensure(int(n.max()))
        return self._tilde[n]

    def partial_sums(self, n: int) -> PartialSums:
        if n < 0:
            raise WeightError(f"Index must be nonnegative, got {n}")
        self._ensure(int(n))
        col = self._sums[:, int(n)]
        return PartialSums(*(float(v) for v in col))

    def partial_sums_at(self, x: float) -> PartialSums:
        """Partial sums up to floor(x); all zero for x < 0."""
        if x < 0:
            return PartialSums(0.0, 0.0, 0.0, 0.0)
        return self.partial_sums(int(math.floor(x)))


def averaged(seq: WeightSeq, window: AveragingWindow, n: int, require_positive: bool = False) -> float:
    """(1/d(n)) * sum_{n <= k < n+d(n)} a_k, summed exactly."""
    if n < 0:
        raise WeightError(f"Index must be nonnegative, got {n}")
    d = window(n)
    value = math.fsum(seq.values(np.arange(n, n + d, dtype=np.int64)).tolist()) / d
    if require_positive and not value > 0:
        raise WeightError(f"Averaged weight ã_{n} = {value!r} is not positive")
    return value


def partial_sums(seq: WeightSeq, window: AveragingWindow, n: int) -> PartialSums:
    """(Ã_n, A_n, Ā_n, B_n) in one memoised pass."""
    return AveragedSeq(seq, window).partial_sums(n)


def trend_verdict(values: Sequence[float], atol: float = 1e-12) -> bool:
    """Finite-data surrogate for 'tends to zero' along an increasing grid.

    The grid is cut into three nested scales; the maximum of |value| on each
    must improve twice (or already be below ``atol``).
    """
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0 or not np.all(np.isfinite(v)):
        return False
    if np.all(v <= atol):
        return True
    if v.size < 3:
        return bool(v[-1] < v[0])
    m = [float(block.max()) for block in np.array_split(v, 3)]
    return all(m[i + 1] < m[i] or m[i + 1] <= atol for i in range(2))


@dataclass(frozen=True)
class PsiReport:
    x: Tuple[float, ...]
    deviation: Tuple[float, ...]
    verdict: bool
    violation: Optional[str] = None


def check_psi_lc_avg(
    seq: WeightSeq,
    window: AveragingWindow,
    psi: Callable[[float], float],
    x_grid: Sequence[float],
    v_grid: Sequence[float],
) -> PsiReport:
    """sup over v of |ã(x + v psi(x)) / ã(x) - 1| for each grid x."""
    avg = AveragedSeq(seq, window)
    deviations = []
    for x in x_grid:
        base = avg.tilde_at(x)
        if not base > 0:
            return PsiReport(tuple(x_grid), tuple(deviations), False, f"ã({x}) = {base!r} <= 0")
        s = psi(x)
        with np.errstate(over="ignore", invalid="ignore"):
            ratios = [avg.tilde_at(x + v * s) / base for v in v_grid]
        dev = max(abs(r - 1.0) if np.isfinite(r) else math.inf for r in ratios)
        deviations.append(dev)
    verdict = trend_verdict(deviations)
    log.debug("psi-l.c. on average check: deviations {} -> {}", deviations, verdict)
    return PsiReport(tuple(x_grid), tuple(deviations), verdict)


class MonotoneVariant(str, Enum):
    A2 = "A2"
    A3 = "A3"


@dataclass(frozen=True)
class MonotoneReport:
    variant: MonotoneVariant
    r: float
    c_observed: float
    c_inner: float
    verdict: bool
    violation: Optional[str] = None


def _monotone_constant(avg: AveragedSeq, r: float, variant: MonotoneVariant, lo: int, hi: int) -> Tuple[float, Optional[str]]:
    n = np.arange(lo, hi + 1, dtype=np.int64)
    tilde = avg.tilde_values(n)
    bad = np.flatnonzero(tilde <= 0)
    if bad.size:
        k = int(n[bad[0]])
        return math.inf, f"ã_{k} = {float(tilde[bad[0]])!r} <= 0"
    if variant == MonotoneVariant.A2:
        a = np.abs(avg.seq.values(np.arange(hi + 1, dtype=np.int64)))
        suffix = np.maximum.accumulate(a[::-1])[::-1]
        k_min = np.floor(n / r).astype(np.int64) + 1
        sup_a = np.where(k_min <= hi, suffix[np.minimum(k_min, hi)], 0.0)
    else:
        k_cap = int(math.ceil(hi * r))
        a = np.abs(avg.seq.values(np.arange(k_cap + 1, dtype=np.int64)))
        prefix = np.maximum.accumulate(a)
        k_max = np.ceil(n * r).astype(np.int64) - 1
        sup_a = np.where(k_max >= 0, prefix[np.clip(k_max, 0, k_cap)], 0.0)
    return float(np.max(sup_a / tilde)), None


def check_monotone_avg(
    seq: WeightSeq,
    window: AveragingWindow,
    r: float,
    variant: MonotoneVariant,
    lo: int,
    hi: int,
) -> MonotoneReport:
    """Observed c in |a_k| <= c ã_n (A2: k > n/r, A3: k < n r) on two nested ranges."""
    variant = MonotoneVariant(variant)
    if not r > 1:
        raise WeightError(f"Monotone-on-average ratio r must exceed 1, got {r}")
    if lo < 0 or hi <= lo:
        raise WeightError(f"Invalid index range [{lo}, {hi}]")
    avg = AveragedSeq(seq, window)
    mid = lo + (hi - lo) // 2
    c_inner, violation = _monotone_constant(avg, r, variant, lo, max(mid, lo + 1))
    c_full, violation_full = _monotone_constant(avg, r, variant, lo, hi)
    violation = violation or violation_full
    verdict = violation is None and math.isfinite(c_full) and c_full <= c_inner * (1.0 + MONOTONE_SLACK)
    return MonotoneReport(variant, r, c_full, c_inner, bool(verdict), violation)


def describe(seq: WeightSeq, window: AveragingWindow, n: int) -> Dict[str, object]:
    """Summary used by the ``weights-info`` subcommand."""
    avg = AveragedSeq(seq, window)
    head = min(n, 10)
    return {
        "kind": seq.kind,
        "envelope": seq.envelope()._asdict(),
        "first_values": seq.values(np.arange(head + 1)).tolist(),
        "tilde": avg.tilde(n),
        "window_length": window(n),
        "partial_sums": avg.partial_sums(n)._asdict(),
    }
