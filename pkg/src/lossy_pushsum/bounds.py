"""Analytical error bounds for two-node push-sum with message loss.

All functions take the failure probability ``p`` and return the bound on
the expected quadratic error ``R`` of the final consensus value (for two
nodes ``R`` lies in ``[0, 1]``).  Infinite series are truncated and then
corrected by an analytic bound on the discarded tail, always in the
conservative direction, so every returned value is a certified bound and
not merely an approximation of one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, TextIO

import numpy as np

__all__ = [
    "POWER_CAP",
    "BoundSet",
    "HighPTerm",
    "bound_set",
    "gamma",
    "highp_ratios",
    "high_p_term",
    "lower_bound_closed",
    "lower_bound_series",
    "r_term",
    "region",
    "t_pmf",
    "upper_bound_general",
    "upper_bound_highp",
    "write_bounds_csv",
]

# 2**t is exact in double precision for |t| <= 1022; keep headroom so that
# 2**t1 + 2**t2 + 1/2 never overflows.
POWER_CAP = 1000

HIGHP_TAIL_TARGET = 1e-9


def _check_p(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"failure probability must lie in [0, 1], got {p!r}")
    return p


def gamma(p: float) -> float:
    """Rate ``(1 - sqrt(1 - p**2)) / p``, extended by continuity to ``gamma(0) = 0``.

    Evaluated as ``p / (1 + sqrt(1 - p**2))``, which is algebraically equal
    and free of cancellation for small ``p``.
    """
    p = _check_p(p)
    return p / (1.0 + math.sqrt(1.0 - p * p))


def lower_bound_series(p: float, terms: int = 60) -> float:
    """Series lower bound ``gamma - 4(1-gamma) sum_i (2 gamma)^i / (2^i+1)^2``.

    The first ``terms`` summands are added exactly.  The remainder is bounded
    from above by the geometric series ``sum_{i>terms} (gamma/2)^i`` (using
    ``(2^i+1)^2 > 4^i``), and since the series is subtracted this keeps the
    result a valid lower bound.  The value is nondecreasing in ``terms``.
    """
    p = _check_p(p)
    if terms < 1:
        raise ValueError("terms must be >= 1")
    g = gamma(p)
    i = np.arange(1, terms + 1, dtype=float)
    partial = float(np.sum((2.0 * g) ** i / (2.0**i + 1.0) ** 2))
    tail = (g / 2.0) ** (terms + 1) / (1.0 - g / 2.0)
    return g - 4.0 * (1.0 - g) * (partial + tail)


def lower_bound_closed(p: float) -> float:
    """Closed-form relaxation of :func:`lower_bound_series`."""
    g = gamma(p)
    return g - 8.0 / 9.0 * g * (1.0 - g) - 2.0 / (2.0 - g) * g * g * (1.0 - g)


def upper_bound_general(p: float) -> float:
    """Upper bound valid for every ``p``, tight near both endpoints."""
    p = _check_p(p)
    first = p * (1.0 - p) ** 2 / (3.0 + p)
    poly = 18.0 + 23.0 * p + 50.0 * p**2 - 41.0 * p**3
    return first + p * poly / (25.0 * (1.0 + p * p))


def t_pmf(p: float, a):
    """Law of the signed failure-count difference ``t``.

    ``P(t = a) = sqrt((1-p)/(1+p)) * gamma(p)**|a|`` for integer ``a``
    (scalar or array).  At ``p = 0`` this is the point mass at 0; ``p = 1``
    has no proper distribution and is rejected.
    """
    p = _check_p(p)
    if p == 1.0:
        raise ValueError("t distribution is undefined at p = 1")
    a = np.abs(np.asarray(a))
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(a == np.round(a)):
            raise ValueError("t takes integer values only")
        a = a.astype(np.int64)
    if p == 0.0:
        out = (a == 0).astype(float)
    else:
        out = math.sqrt((1.0 - p) / (1.0 + p)) * gamma(p) ** a.astype(float)
    return float(out) if out.ndim == 0 else out


def _check_cap(*ts) -> None:
    for t in ts:
        if np.any(np.abs(np.asarray(t)) > POWER_CAP):
            raise ValueError(f"|t| exceeds the power cap {POWER_CAP}")


def highp_ratios(t1, t2):
    """Ratios ``x_1/w_1`` and ``x_2/w_2`` after the second successful transmission.

    The first delivery goes 1 -> 2, the second 2 -> 1, starting from values
    ``(-1, 1)``; ``t1 = k1 - l1`` and ``t2 = l2 - k2`` count the surplus of
    failed halvings.  Accepts integer scalars or broadcastable arrays.
    """
    _check_cap(t1, t2)
    e1 = np.ldexp(1.0, np.asarray(t1, dtype=np.int64))
    e2 = np.ldexp(1.0, np.asarray(t2, dtype=np.int64))
    ratio1 = (e1 - e2 - 0.5) / (e1 + e2 + 0.5)
    ratio2 = (e1 - 0.5) / (e1 + 0.5)
    ratio2 = np.broadcast_to(ratio2, np.shape(ratio1))
    if np.ndim(ratio1) == 0:
        return float(ratio1), float(ratio2)
    return ratio1, np.array(ratio2)


def _region_masks(t1, t2):
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    nonneg = t1 >= 0
    return {
        "a": t1 <= -1,
        "b": nonneg & (t1 >= t2 + 1),
        "c": nonneg & (t1 <= t2) & (2 * t1 >= t2),
        "d": nonneg & (2 * t1 + 1 <= t2),
    }


def region(t1: int, t2: int) -> str:
    """Region label ``'a'``-``'d'`` of the pair ``(t1, t2)``."""
    masks = _region_masks(t1, t2)
    hits = [name for name, m in masks.items() if bool(m)]
    assert len(hits) == 1, f"({t1}, {t2}) matched regions {hits}"
    return hits[0]


def r_term(a1, a2):
    """Squared error of the worse ratio, selected by the region table.

    Regions a and d use the first ratio, regions b and c the second.
    Vectorized over broadcastable integer arrays.
    """
    masks = _region_masks(a1, a2)
    count = sum(m.astype(np.int8) for m in masks.values())
    assert np.all(count == 1), "region predicates do not partition the input"
    ratio1, ratio2 = highp_ratios(a1, a2)
    use_first = masks["a"] | masks["d"]
    r = np.where(use_first, np.square(ratio1), np.square(ratio2))
    return float(r) if np.ndim(r) == 0 else r


@dataclass(frozen=True)
class HighPTerm:
    a1: int
    a2: int
    r: float


def high_p_term(a1: int, a2: int) -> HighPTerm:
    return HighPTerm(int(a1), int(a2), r_term(int(a1), int(a2)))


def _highp_tail(g: float, cutoff: int) -> float:
    # sum over pairs with max(|a1|, |a2|) > cutoff of g**(|a1|+|a2|):
    # full**2 - inner**2 with full - inner = 2 g**(cutoff+1) / (1 - g)
    full = (1.0 + g) / (1.0 - g)
    outside = 2.0 * g ** (cutoff + 1) / (1.0 - g)
    inner = full - outside
    return outside * (full + inner)


def _auto_cutoff(p: float) -> int:
    g = gamma(p)
    pref = (1.0 - p) / (2.0 * (1.0 + p))
    cutoff = 1
    while cutoff < POWER_CAP and pref * _highp_tail(g, cutoff) >= HIGHP_TAIL_TARGET:
        cutoff = min(POWER_CAP, cutoff * 2)
    lo, hi = max(1, cutoff // 2), cutoff
    while lo < hi:
        mid = (lo + hi) // 2
        if pref * _highp_tail(g, mid) < HIGHP_TAIL_TARGET:
            hi = mid
        else:
            lo = mid + 1
    return lo


def upper_bound_highp(p: float, cutoff: Optional[int] = None) -> float:
    """Upper bound tailored to high failure rates.

    Sums ``gamma**(|a1|+|a2|) * r(a1, a2)`` over ``|a1|, |a2| <= cutoff`` and
    adds the remaining mass of the weights with ``r`` replaced by its maximum
    1.  With ``cutoff=None`` the smallest cutoff whose tail allowance is below
    1e-9 is used (limited by :data:`POWER_CAP`).
    """
    p = _check_p(p)
    if p in (0.0, 1.0):
        raise ValueError("high-p bound is defined for 0 < p < 1 only")
    if cutoff is None:
        cutoff = _auto_cutoff(p)
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    if cutoff > POWER_CAP:
        raise ValueError(f"cutoff exceeds the power cap {POWER_CAP}")
    g = gamma(p)
    a = np.arange(-cutoff, cutoff + 1)
    weights = g ** np.abs(a).astype(float)
    r = r_term(a[:, None], a[None, :])
    inner = float(weights @ r @ weights)
    pref = (1.0 - p) / (2.0 * (1.0 + p))
    return 0.5 + pref * (inner + _highp_tail(g, cutoff))


@dataclass(frozen=True)
class BoundSet:
    """All analytical quantities for one failure probability.

    ``upper_highp`` is ``None`` at ``p`` in {0, 1}, where it is undefined.
    """

    p: float
    gamma: float
    lower_closed: float
    lower_series: float
    upper_general: float
    upper_highp: Optional[float]
    series_terms: int
    highp_cutoff: Optional[int]

    @property
    def lower(self) -> float:
        return max(self.lower_closed, self.lower_series)

    @property
    def upper(self) -> float:
        if self.upper_highp is None:
            return self.upper_general
        return min(self.upper_general, self.upper_highp)


def bound_set(p: float, series_terms: int = 60, highp_cutoff: Optional[int] = None) -> BoundSet:
    p = _check_p(p)
    highp = None
    if 0.0 < p < 1.0:
        if highp_cutoff is None:
            highp_cutoff = _auto_cutoff(p)
        highp = upper_bound_highp(p, highp_cutoff)
    else:
        highp_cutoff = None
    return BoundSet(
        p=p,
        gamma=gamma(p),
        lower_closed=lower_bound_closed(p),
        lower_series=lower_bound_series(p, series_terms),
        upper_general=upper_bound_general(p),
        upper_highp=highp,
        series_terms=series_terms,
        highp_cutoff=highp_cutoff,
    )


BOUND_COLUMNS = ("p", "gamma", "lower_closed", "lower_series", "upper_general", "upper_highp")


def write_bounds_csv(stream: TextIO, p_grid: Iterable[float]) -> list[BoundSet]:
    """Write one row per grid point; undefined entries are left empty."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(BOUND_COLUMNS)
    rows = []
    for p in p_grid:
        bs = bound_set(p)
        rows.append(bs)
        record = asdict(bs)
        writer.writerow(["" if record[c] is None else repr(float(record[c])) for c in BOUND_COLUMNS])
    return rows
