"""Binned measures on [0, 1] and the two-node invariance equation.

The law of the first push-sum coefficient for two nodes is the fixed point
of a mixture of four push-forwards (one per first-step outcome).  This
module provides the maps, a mass-exact push-forward of a piecewise-uniform
measure, the fixed-point iteration, the ``a_k`` grid permuted by the failure
maps, and the support-interval Markov chain whose stationary law yields the
general upper bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .bounds import _check_p

logger = logging.getLogger(__name__)

__all__ = [
    "DiscreteMeasure",
    "GridPoint",
    "MapFamily",
    "StationaryDistribution",
    "d1",
    "d2",
    "f1",
    "f2",
    "grid",
    "grid_point",
    "invariance_iterate",
    "invariance_step",
    "markov_stationary",
    "measure_R",
    "numeric_stationary",
    "pushforward",
    "recombine_upper_bound",
    "stationary_vector",
    "transition_matrix",
]

GRID_CAP = 60
MASS_TOL = 1e-12


def d1(x):
    """Delivered 1 -> 2: first coordinate after renormalization."""
    return 1.0 / (3.0 - 2.0 * x)


def d2(x):
    return 2.0 * x / (1.0 + 2.0 * x)


def f1(x):
    """Failed send by node 1."""
    return x / (2.0 - x)


def f2(x):
    return 2.0 * x / (1.0 + x)


@dataclass(frozen=True)
class MapFamily:
    """The four first-step maps with their mixture weights for failure rate ``p``."""

    p: float
    maps: tuple = (d1, d2, f1, f2)
    names: tuple = ("d1", "d2", "f1", "f2")

    @property
    def weights(self) -> tuple:
        q = (1.0 - self.p) / 2.0
        return (q, q, self.p / 2.0, self.p / 2.0)

    def __iter__(self):
        return iter(zip(self.weights, self.maps))


@dataclass
class DiscreteMeasure:
    """Masses over the uniform partition of [0, 1] into ``N`` bins."""

    bins: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=float)
        if self.bins.ndim != 1 or self.bins.size < 1:
            raise ValueError("bins must be a non-empty 1-D array")
        if np.any(self.bins < 0) or not np.all(np.isfinite(self.bins)):
            raise ValueError("bin masses must be finite and nonnegative")
        total = self.bins.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} differs from 1")

    @property
    def N(self) -> int:
        return self.bins.size

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    @classmethod
    def uniform(cls, N: int) -> "DiscreteMeasure":
        return cls(np.full(N, 1.0 / N))

    @classmethod
    def centered(cls, N: int) -> "DiscreteMeasure":
        bins = np.zeros(N)
        if N % 2:
            bins[N // 2] = 1.0
        else:
            bins[N // 2 - 1 : N // 2 + 1] = 0.5
        return cls(bins)

    @classmethod
    def from_samples(cls, x, N: int) -> "DiscreteMeasure":
        counts, _ = np.histogram(np.asarray(x, dtype=float), bins=N, range=(0.0, 1.0))
        if counts.sum() == 0:
            raise ValueError("no samples to histogram")
        return cls(counts / counts.sum())

    def mirrored(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.bins[::-1].copy())

    def symmetrized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(_normalize(0.5 * (self.bins + self.bins[::-1])))

    def total_variation(self, other: "DiscreteMeasure") -> float:
        return 0.5 * float(np.abs(self.bins - other.bins).sum())

    def bin_of(self, x: float) -> int:
        return min(int(math.floor(x * self.N)), self.N - 1)


def _normalize(bins: np.ndarray) -> np.ndarray:
    return bins / bins.sum()


def pushforward(measure: DiscreteMeasure, g: Callable) -> DiscreteMeasure:
    """Image of ``measure`` under a strictly increasing map of [0, 1] into itself.

    The mass of each source bin ``[u, v]`` is spread uniformly over
    ``[g(u), g(v)]`` and split across destination bins by overlap length.
    Equivalently, the image CDF is the piecewise-linear interpolation of the
    source CDF at the mapped edges.
    """
    edges = measure.edges
    mapped = np.asarray(g(edges), dtype=float)
    if not np.all(np.diff(mapped) > 0):
        raise ValueError("pushforward requires a strictly increasing map")
    if mapped[0] < -1e-15 or mapped[-1] > 1.0 + 1e-15:
        raise ValueError("map must send [0, 1] into [0, 1]")
    cdf = np.concatenate(([0.0], np.cumsum(measure.bins)))
    out = np.diff(np.interp(edges, mapped, cdf))
    np.clip(out, 0.0, None, out=out)
    return DiscreteMeasure(_normalize(out))


def invariance_step(measure: DiscreteMeasure, p: float) -> DiscreteMeasure:
    """One application of the invariance operator, symmetrized and renormalized."""
    out = np.zeros(measure.N)
    for weight, g in MapFamily(p):
        if weight > 0.0:
            out += weight * pushforward(measure, g).bins
    out = 0.5 * (out + out[::-1])
    return DiscreteMeasure(_normalize(out))


def invariance_iterate(
    p: float,
    N: int,
    iterations: int = 500,
    start: Literal["uniform", "centered"] = "uniform",
    tv_tol: float = 1e-10,
) -> DiscreteMeasure:
    """Approximate the invariant coefficient measure for two nodes.

    Iterates :func:`invariance_step` from ``start`` until the total-variation
    change of one pass drops below ``tv_tol`` or ``iterations`` passes ran.
    """
    p = _check_p(p)
    if p == 1.0:
        raise ValueError("the invariance equation has no unique solution at p = 1")
    if N < 100:
        raise ValueError("N must be >= 100")
    if start == "uniform":
        nu = DiscreteMeasure.uniform(N)
    elif start == "centered":
        nu = DiscreteMeasure.centered(N)
    else:
        raise ValueError(f"unknown start {start!r}")
    change = math.inf
    it = 0
    for it in range(1, iterations + 1):
        nxt = invariance_step(nu, p)
        change = nxt.total_variation(nu)
        nu = nxt
        if change < tv_tol:
            break
    logger.debug("invariance iteration p=%g N=%d: %d passes, last TV change %.3g", p, N, it, change)
    return nu


def measure_R(measure: DiscreteMeasure) -> float:
    """Quadratic error ``sum mass * (1 - 2 x)^2`` evaluated at bin centers."""
    return float(np.dot(measure.bins, (1.0 - 2.0 * measure.centers) ** 2))


@dataclass(frozen=True)
class GridPoint:
    k: int
    a_k: float


def grid(k: int) -> float:
    """Grid point ``a_k``; ``a_0 = 1/2`` and ``a_{-k} = 1 - a_k``."""
    k = int(k)
    if abs(k) > GRID_CAP:
        raise ValueError(f"|k| exceeds the grid cap {GRID_CAP}")
    if k >= 0:
        return 1.0 - 1.0 / (2.0**k + 1.0)
    return 1.0 / (2.0 ** (-k) + 1.0)


def grid_point(k: int) -> GridPoint:
    return GridPoint(int(k), grid(k))


# Support-interval Markov chain.  Each state is the label of an interval that
# contains the support of one mixture component; each transition is the
# image of that interval under one of (d1, d2, f1, f2).

def _chain_states(K: int) -> list[str]:
    return [f"A{i}" for i in range(K + 1)] + ["B'0", "B'1", "B''0", "B''1", "C0", "C1"]


def _chain_targets(state: str, K: int) -> tuple[str, str, str, str]:
    """Successor of ``state`` under (d1, d2, f1, f2)."""
    if state.startswith("A"):
        i = int(state[1:])
        nxt = f"A{min(i + 1, K)}"
        return nxt, nxt, "B'0", "B''0"
    table = {
        "B'0": ("A0", "B'0", "B'1", "C0"),
        "B''0": ("B''0", "A0", "C0", "B''1"),
        "B'1": ("A0", "B'1", "B'1", "C1"),
        "B''1": ("B''1", "A0", "C1", "B''1"),
        "C0": ("B''0", "B'0", "C1", "C1"),
        "C1": ("B''1", "B'1", "C1", "C1"),
    }
    return table[state]


def transition_matrix(p: float, K: int = 40) -> tuple[np.ndarray, list[str]]:
    """Row-stochastic transition matrix of the chain truncated at ``A_K``.

    ``A_K`` stands for all of ``A_K, A_{K+1}, ...`` (those states only feed
    each other and B'0/B''0), so the lumped chain is exact.
    """
    p = _check_p(p)
    states = _chain_states(K)
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    weights = MapFamily(p).weights
    for s in states:
        for w, target in zip(weights, _chain_targets(s, K)):
            P[index[s], index[target]] += w
    return P, states


@dataclass(frozen=True)
class StationaryDistribution:
    """Closed-form stationary masses; ``b*`` and ``c*`` are per pair of mirror states."""

    p: float
    b0: float
    b1: float
    c0: float
    c1: float
    S_A: float
    S_B: float
    S_C: float

    def a(self, i):
        """Mass of ``A_i`` (vectorized over ``i``)."""
        return self.p * (1.0 - self.p) ** (np.asarray(i, dtype=float) + 2.0)

    def a_tail(self, K: int) -> float:
        """Total mass of ``A_i`` for ``i >= K``."""
        return (1.0 - self.p) ** (K + 2)

    @property
    def total(self) -> float:
        return self.S_A + self.S_B + self.S_C


def markov_stationary(p: float) -> StationaryDistribution:
    p = _check_p(p)
    if p in (0.0, 1.0):
        raise ValueError("stationary distribution requires 0 < p < 1")
    q = 1.0 + p * p
    return StationaryDistribution(
        p=p,
        b0=2.0 * p * (1.0 - p) ** 2 / q,
        b1=2.0 * p * p * (1.0 - p * p) / q,
        c0=p * p * (1.0 - p) ** 2 / q,
        c1=2.0 * p**3 / q,
        S_A=(1.0 - p) ** 2,
        S_B=2.0 * p * (1.0 - p),
        S_C=p * p,
    )


def stationary_vector(dist: StationaryDistribution, K: int = 40) -> np.ndarray:
    """Closed-form stationary law laid out in :func:`transition_matrix` state order."""
    a = dist.a(np.arange(K))
    return np.concatenate(
        (a, [dist.a_tail(K), dist.b0 / 2, dist.b1 / 2, dist.b0 / 2, dist.b1 / 2, dist.c0, dist.c1])
    )


def numeric_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary law of a finite chain by solving ``pi (P - I) = 0, sum pi = 1``."""
    n = P.shape[0]
    A = np.vstack((P.T - np.eye(n), np.ones(n)))
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def recombine_upper_bound(p: float, terms: int = 200) -> float:
    """Mix the worst-case interval errors with the stationary weights.

    Uses the exact denominators ``(2^{i+1}+1)^2`` for the ``A_i`` intervals;
    the discarded tail ``i >= terms`` is bounded via ``r <= 4^{-(i+1)}``.
    """
    dist = markov_stationary(p)
    i = np.arange(terms, dtype=float)
    head = float(np.sum(dist.a(i) / (2.0 ** (i + 1) + 1.0) ** 2))
    ratio = (1.0 - p) / 4.0
    tail = p * (1.0 - p) ** 2 / 4.0 * ratio**terms / (1.0 - ratio)
    near, far = 9.0 / 25.0, 1.0
    return head + tail + near * dist.b0 + far * dist.b1 + near * dist.c0 + far * dist.c1
