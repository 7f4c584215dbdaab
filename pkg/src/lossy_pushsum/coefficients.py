"""Push-sum coefficients: the random simplex vector behind the final value.

Running push-sum on the unit vectors ``e_1, ..., e_n`` (one row ``z_i``
per agent) produces rows whose normalizations all converge to the same
vector ``tau``; the final value of any run on the same event stream is
``<tau, initial_values>``.  This module samples ``tau``, checks that
coupling pathwise, estimates the expected quadratic error ``R`` by Monte
Carlo, and histograms the law of ``tau``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np
from joblib import Parallel, delayed

from . import _kernels
from .measure import DiscreteMeasure, grid
from .protocol import (
    DegenerateStateError,
    EventStream,
    Mode,
    ProtocolParams,
    _MODE_CODE,
    blocks,
    run_to_consensus,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CoefficientState",
    "ErrorEstimate",
    "IntervalMasses",
    "TauBatch",
    "TauSample",
    "TriangleHistogram",
    "coefficient_step",
    "coupling_check",
    "empirical_measure",
    "estimate_R",
    "interval_masses",
    "quadratic_error",
    "sample_tau",
    "sample_taus",
    "write_tau_csv",
]

NONCONVERGED_LIMIT = 1e-3


class StreamMismatchError(RuntimeError):
    """The two coupled runs did not see the same events."""


@dataclass(frozen=True)
class CoefficientState:
    """Rows ``z[i]`` are the coefficient vectors held by agent ``i``."""

    z: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> "CoefficientState":
        return cls(np.eye(n))

    def normalized_rows(self) -> np.ndarray:
        return self.z / self.z.sum(axis=1, keepdims=True)


def coefficient_step(state: CoefficientState, params: ProtocolParams, event) -> CoefficientState:
    """Reference (uncompiled) coefficient update, same semantics as push-sum."""
    event.validate(state.z.shape[0])
    z = state.z.copy()
    share = params.alpha * z[event.sender]
    z[event.sender] *= 1.0 - params.alpha
    if event.delivered:
        z[event.receiver] += share
    return CoefficientState(z, state.t + 1)


@dataclass(frozen=True)
class TauSample:
    tau: np.ndarray
    converged: bool
    steps: int


def _finish_tau(z: np.ndarray, code: int) -> np.ndarray:
    rows = z / z.sum(axis=1, keepdims=True) if code == _kernels.PUSHSUM else z
    tau = np.clip(rows.mean(axis=0), 0.0, None)
    return tau / tau.sum()


def _coefficient_run(n, p, alpha, tol, eps, max_steps, code, stream_blocks):
    z = np.eye(n)
    eps_step = np.array([-1], dtype=np.int64)
    steps = 0
    converged = False
    for u in stream_blocks:
        k = _kernels.coefficient_block(z, u, p, alpha, tol, eps, code, steps, eps_step)
        if k == _kernels.DEGENERATE:
            raise DegenerateStateError(f"a coefficient row underflowed to zero (p={p}, alpha={alpha})")
        if k > 0:
            steps += k
            converged = True
            break
        steps += len(u)
    return _finish_tau(z, code), steps, converged, int(eps_step[0])


def _tau_trial(params: ProtocolParams, code: int, eps: float, seed: int, key):
    stream = EventStream(params.n, params.p, seed, key)
    return _coefficient_run(
        params.n, params.p, params.alpha, params.tol, eps, params.max_steps, code,
        blocks(stream, params.max_steps),
    )


def sample_tau(params: ProtocolParams, seed: int = 0, trial: int = 0) -> TauSample:
    """One push-sum coefficient, run until all normalized rows agree within ``params.tol``."""
    params.require_convergent()
    tau, steps, converged, _ = _tau_trial(params, _kernels.PUSHSUM, params.tol, seed, trial)
    return TauSample(tau, converged, steps)


@dataclass
class TauBatch:
    """Many coefficient runs; ``eps_steps`` is -1 where the ``eps`` level was never reached."""

    taus: np.ndarray
    steps: np.ndarray
    converged: np.ndarray
    eps_steps: np.ndarray
    keys: list


def _run_chunk(params, code, eps, seed, keys, skip_degenerate):
    out = []
    for k in keys:
        try:
            out.append(_tau_trial(params, code, eps, seed, k))
        except DegenerateStateError:
            if not skip_degenerate:
                raise
            out.append((np.full(params.n, np.nan), -1, False, -1))
    return (
        np.array([o[0] for o in out]).reshape(len(keys), params.n),
        np.array([o[1] for o in out], dtype=np.int64),
        np.array([o[2] for o in out], dtype=bool),
        np.array([o[3] for o in out], dtype=np.int64),
    )


def sample_taus(
    params: ProtocolParams,
    trials: int,
    seed: int = 0,
    threads: int = 1,
    mode: Mode = "pushsum",
    eps: Optional[float] = None,
    keys: Optional[Sequence] = None,
    skip_degenerate: bool = False,
) -> TauBatch:
    """Independent coefficient runs, trial ``k`` keyed by ``(seed, k)`` unless ``keys`` is given.

    Results do not depend on ``threads``.  A run whose weights underflow
    raises :class:`DegenerateStateError`, or with ``skip_degenerate`` is
    recorded as not converged with ``steps = -1`` and a NaN coefficient.
    """
    params.require_convergent()
    if trials < 1:
        raise ValueError("trials must be >= 1")
    keys = list(range(trials)) if keys is None else list(keys)
    code = _MODE_CODE[mode]
    eps = params.tol if eps is None else float(eps)
    if threads <= 1 or trials < 64:
        parts = [_run_chunk(params, code, eps, seed, keys, skip_degenerate)]
    else:
        chunks = [c.tolist() for c in np.array_split(np.arange(len(keys)), threads * 4) if c.size]
        parts = Parallel(n_jobs=threads)(
            delayed(_run_chunk)(params, code, eps, seed, [keys[i] for i in c], skip_degenerate)
            for c in chunks
        )
    taus, steps, conv, eps_steps = (np.concatenate(x) for x in zip(*parts))
    return TauBatch(taus, steps, conv, eps_steps, keys)


def quadratic_error(tau: np.ndarray) -> np.ndarray:
    """``n * sum_i (tau_i - 1/n)^2`` for each row of ``tau``."""
    tau = np.atleast_2d(tau)
    n = tau.shape[1]
    return n * np.sum((tau - 1.0 / n) ** 2, axis=1)


@dataclass(frozen=True)
class ErrorEstimate:
    R_hat: float
    stderr: float
    trials: int
    nonconverged: int
    p: float
    n: int
    alpha: float

    @property
    def nonconverged_fraction(self) -> float:
        return self.nonconverged / self.trials


def _summarize(params: ProtocolParams, batch: TauBatch) -> ErrorEstimate:
    trials = len(batch.converged)
    bad = int(np.count_nonzero(~batch.converged))
    if bad == trials:
        raise RuntimeError(f"no trial converged (p={params.p}, n={params.n}, alpha={params.alpha})")
    if bad:
        level = "exceeds" if bad / trials >= NONCONVERGED_LIMIT else "below"
        warnings.warn(
            f"{bad}/{trials} trials did not converge within {params.max_steps} steps "
            f"({level} the {NONCONVERGED_LIMIT:g} acceptance fraction); they are excluded",
            RuntimeWarning,
            stacklevel=3,
        )
    err = quadratic_error(batch.taus[batch.converged])
    stderr = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else math.nan
    return ErrorEstimate(float(err.mean()), stderr, trials, bad, params.p, params.n, params.alpha)


def estimate_R(params: ProtocolParams, trials: int, seed: int = 0, threads: int = 1) -> ErrorEstimate:
    """Monte Carlo estimate of the expected quadratic error with its standard error."""
    return _summarize(params, sample_taus(params, trials, seed, threads))


def coupling_check(
    params: ProtocolParams, initial_values: Sequence[float], seed: int = 0, trial: int = 0
) -> tuple[float, float]:
    """Final value of a direct run versus ``<tau, initial_values>`` on the same events."""
    params.require_convergent()
    values = np.asarray(initial_values, dtype=float)
    cache: list[np.ndarray] = []
    source = blocks(EventStream(params.n, params.p, seed, trial), params.max_steps)

    def shared():
        k = 0
        while True:
            if k == len(cache):
                nxt = next(source, None)
                if nxt is None:
                    return
                cache.append(nxt)
            yield cache[k]
            k += 1

    # direct run replayed from the shared blocks
    x = values.copy()
    w = np.ones(params.n)
    steps = 0
    no_trace = np.empty((0, 3))
    if _kernels.value_spread(x, w, _kernels.PUSHSUM) > params.tol:
        for u in shared():
            k = _kernels.value_block(x, w, u, params.p, params.alpha, params.tol,
                                     _kernels.PUSHSUM, steps, no_trace)
            if k > 0:
                steps += k
                break
            steps += len(u)
    lhs = float(np.mean(x / w))
    reference = run_to_consensus(params, values, "pushsum", seed, trial)
    if reference.steps != steps or reference.value != lhs:
        raise StreamMismatchError("replayed run diverged from the seeded run")

    tau, _, _, _ = _coefficient_run(params.n, params.p, params.alpha, params.tol, params.tol,
                                    params.max_steps, _kernels.PUSHSUM, shared())
    return lhs, float(tau @ values)


@dataclass
class TriangleHistogram:
    """Masses of ``(tau_1, tau_2)`` on a ``bins x bins`` grid over the unit square.

    Only cells meeting the simplex ``tau_1 + tau_2 <= 1`` can carry mass.
    """

    mass: np.ndarray

    @property
    def bins(self) -> int:
        return self.mass.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) / self.bins


def empirical_measure(
    params: ProtocolParams, trials: int, bins: int, seed: int = 0, threads: int = 1
):
    """Histogram of sampled coefficients: 1-D in ``tau_1`` for two agents, 2-D for three."""
    if params.n not in (2, 3):
        raise ValueError("empirical measures are available for n = 2 or n = 3")
    batch = sample_taus(params, trials, seed, threads)
    _summarize(params, batch)
    taus = batch.taus[batch.converged]
    if params.n == 2:
        return DiscreteMeasure.from_samples(taus[:, 0], bins)
    counts, _, _ = np.histogram2d(taus[:, 0], taus[:, 1], bins=bins, range=[[0, 1], [0, 1]])
    return TriangleHistogram(counts / counts.sum())


@dataclass(frozen=True)
class IntervalMasses:
    """``s[i]`` = mass of ``(a_i, a_{i+1})``, ``t[i]`` = mass of the atom at ``a_i``.

    Both are averaged with their mirror images about 1/2.  ``tail`` is the
    mass at or beyond ``a_{depth+1}`` on both sides.
    """

    s: np.ndarray
    t: np.ndarray
    tail: float

    @property
    def total(self) -> float:
        return 2.0 * self.s.sum() + self.t[0] + 2.0 * self.t[1:].sum() + self.tail


def interval_masses(measure: DiscreteMeasure, depth: int) -> IntervalMasses:
    """Masses of the grid intervals ``(a_i, a_{i+1})`` for ``i = 0..depth``.

    The atom at ``a_k`` is taken to be the mass of the single bin containing
    it, so every ``a_k`` (``k <= depth + 1``) must lie strictly inside a bin
    and consecutive grid points must be separated by at least one full bin.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    N = measure.N
    m = measure.bins
    idx = []
    for k in range(depth + 2):
        pos = grid(k) * N
        if pos == math.floor(pos):
            raise ValueError(f"grid point a_{k} falls on a bin edge; use a different bin count")
        idx.append(int(math.floor(pos)))
    for k in range(depth + 1):
        if idx[k + 1] - idx[k] < 2:
            raise ValueError(f"depth {depth} exceeds the bin resolution (N={N})")
    mirror = m[::-1]
    s = np.array([0.5 * (m[idx[k] + 1 : idx[k + 1]].sum() + mirror[idx[k] + 1 : idx[k + 1]].sum())
                  for k in range(depth + 1)])
    t = np.array([0.5 * (m[idx[k]] + mirror[idx[k]]) for k in range(depth + 1)])
    if idx[0] != N - 1 - idx[0]:
        raise ValueError("the central atom must sit in a single central bin (odd N)")
    t[0] = m[idx[0]]
    tail = float(m[idx[-1]:].sum() + mirror[idx[-1]:].sum())
    return IntervalMasses(s, t, tail)


def write_tau_csv(stream: TextIO, batch: TauBatch) -> None:
    n = batch.taus.shape[1]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["trial", *[f"tau_{i + 1}" for i in range(n)], "steps", "converged"])
    for key, tau, steps, conv in zip(batch.keys, batch.taus, batch.steps, batch.converged):
        writer.writerow([key, *[repr(float(v)) for v in tau], int(steps), int(conv)])
