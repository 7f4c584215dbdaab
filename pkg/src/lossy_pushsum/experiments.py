"""Experiment drivers: error sweeps and the push-sum vs consensus comparison.

For the comparison, each instance draws a failure rate ``p`` and an
influence ratio ``alpha`` and runs both algorithms in coefficient form.
The error is the mean quadratic error of the limiting coefficient vector;
the speed is the median number of steps until all agents' coefficient
vectors agree within ``eps`` (a bound on the spread for any inputs in a
unit box).  Records are then binned by (error, p) and each cell is
labelled with the algorithm that reaches that error faster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .coefficients import ErrorEstimate, estimate_R, quadratic_error, sample_taus
from .protocol import ProtocolParams, trial_rng

__all__ = [
    "RegionMap",
    "SpeedErrorRecord",
    "consensus_error_profile",
    "label_regions",
    "run_comparison",
    "simulate_grid",
]

ALGORITHMS = ("pushsum", "consensus")
_DESIGN_KEY = 0x5EED


def simulate_grid(
    p_grid: Iterable[float], n: int, trials: int, seed: int, threads: int = 1, alpha: float = 0.5
) -> list[ErrorEstimate]:
    """:func:`estimate_R` at every grid point; point ``i`` uses base seed ``seed + i``."""
    return [
        estimate_R(ProtocolParams(n, float(p), alpha), trials, seed + i, threads)
        for i, p in enumerate(p_grid)
    ]


@dataclass(frozen=True)
class SpeedErrorRecord:
    algorithm: str
    p: float
    alpha: float
    error: float
    stderr: float
    speed: float
    converged_fraction: float
    sample: int


def _record(algorithm, sample, params, batch) -> SpeedErrorRecord | None:
    ok = batch.converged & (batch.eps_steps > 0)
    if not ok.any():
        return None
    err = quadratic_error(batch.taus[ok])
    stderr = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else math.nan
    return SpeedErrorRecord(
        algorithm=algorithm,
        p=params.p,
        alpha=params.alpha,
        error=float(err.mean()),
        stderr=stderr,
        speed=float(np.median(batch.eps_steps[ok])),
        converged_fraction=float(ok.mean()),
        sample=sample,
    )


def run_comparison(
    samples: int,
    trials_per_sample: int,
    n: int = 5,
    eps: float = 1e-6,
    seed: int = 0,
    p_range: tuple[float, float] = (0.0, 1.0),
    alpha_range: tuple[float, float] = (0.0, 1.0),
    max_steps: int = 200_000,
    tol: float = 1e-10,
    threads: int = 1,
) -> list[SpeedErrorRecord]:
    """Draw ``samples`` instances of ``(p, alpha)`` uniformly and measure both algorithms.

    Instances whose trials never reach ``eps`` are dropped.  The output is
    ordered by sample index, push-sum first.
    """
    if eps < tol:
        raise ValueError("eps must not be below the coefficient tolerance")
    design = trial_rng(seed, _DESIGN_KEY)
    ps = design.uniform(*p_range, size=samples)
    # open interval for alpha: uniform() may return the lower endpoint
    alphas = design.uniform(*alpha_range, size=samples)
    alphas = np.clip(alphas, 1e-6, 1 - 1e-6)
    ps = np.clip(ps, 0.0, 1 - 1e-9)
    jobs = [(s, float(p), float(a)) for s, (p, a) in enumerate(zip(ps, alphas))]
    args = (n, trials_per_sample, eps, seed, max_steps, tol)
    if threads <= 1:
        parts = [_compare_chunk(jobs, *args)]
    else:
        chunks = [jobs[i::threads * 4] for i in range(threads * 4)]
        parts = Parallel(n_jobs=threads)(delayed(_compare_chunk)(c, *args) for c in chunks if c)
    records = [r for part in parts for r in part]
    records.sort(key=lambda r: (r.sample, ALGORITHMS.index(r.algorithm)))
    return records


def _compare_chunk(jobs, n, trials, eps, seed, max_steps, tol):
    records = []
    for s, p, a in jobs:
        params = ProtocolParams(n, p, a, max_steps, tol)
        for code, algorithm in enumerate(ALGORITHMS):
            keys = [(s, code, k) for k in range(trials)]
            batch = sample_taus(params, trials, seed, mode=algorithm, eps=eps, keys=keys,
                                skip_degenerate=True)
            rec = _record(algorithm, s, params, batch)
            if rec is not None:
                records.append(rec)
    return records


@dataclass
class RegionMap:
    """Cell labels over (p bins) x (error bins).

    ``a``: consensus is faster, ``b``: push-sum is faster, ``c``: no push-sum
    instance reached this error, ``-``: push-sum instances but no consensus
    instance to compare with.
    """

    error_edges: np.ndarray
    p_edges: np.ndarray
    labels: np.ndarray
    pushsum_count: np.ndarray
    consensus_count: np.ndarray

    def fraction(self, label: str, mask=None) -> float:
        sel = self.labels if mask is None else self.labels[mask]
        return float(np.mean(sel == label)) if sel.size else math.nan

    def rows(self):
        for i in range(len(self.p_edges) - 1):
            for j in range(len(self.error_edges) - 1):
                yield (
                    0.5 * (self.p_edges[i] + self.p_edges[i + 1]),
                    0.5 * (self.error_edges[j] + self.error_edges[j + 1]),
                    self.labels[i, j],
                    int(self.pushsum_count[i, j]),
                    int(self.consensus_count[i, j]),
                )


def label_regions(
    records: Sequence[SpeedErrorRecord], error_edges: Sequence[float], p_edges: Sequence[float]
) -> RegionMap:
    """Label each (p, error) cell by comparing the fastest instance of each algorithm in it."""
    error_edges = np.asarray(error_edges, dtype=float)
    p_edges = np.asarray(p_edges, dtype=float)
    shape = (len(p_edges) - 1, len(error_edges) - 1)
    best = {alg: np.full(shape, np.inf) for alg in ALGORITHMS}
    count = {alg: np.zeros(shape, dtype=np.int64) for alg in ALGORITHMS}
    for rec in records:
        i = np.searchsorted(p_edges, rec.p, side="right") - 1
        j = np.searchsorted(error_edges, rec.error, side="right") - 1
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            continue
        count[rec.algorithm][i, j] += 1
        best[rec.algorithm][i, j] = min(best[rec.algorithm][i, j], rec.speed)
    labels = np.full(shape, "-", dtype="<U1")
    ps, cs = count["pushsum"] > 0, count["consensus"] > 0
    labels[~ps] = "c"
    labels[ps & cs & (best["consensus"] < best["pushsum"])] = "a"
    labels[ps & cs & (best["consensus"] >= best["pushsum"])] = "b"
    return RegionMap(error_edges, p_edges, labels, count["pushsum"], count["consensus"])


def consensus_error_profile(
    n: int, alpha: float, p_values: Iterable[float], trials: int, seed: int = 0, threads: int = 1
) -> list[ErrorEstimate]:
    """Quadratic error of traditional consensus at fixed ``alpha`` across failure rates."""
    out = []
    for i, p in enumerate(p_values):
        params = ProtocolParams(n, float(p), alpha)
        batch = sample_taus(params, trials, seed + i, threads, mode="consensus")
        err = quadratic_error(batch.taus[batch.converged])
        out.append(ErrorEstimate(float(err.mean()), float(err.std(ddof=1) / math.sqrt(err.size)),
                                 trials, int((~batch.converged).sum()), float(p), n, alpha))
    return out
