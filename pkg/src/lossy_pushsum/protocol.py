"""Push-sum and traditional consensus with lossy transmissions.

At each tick an ordered pair ``(sender, receiver)`` of distinct agents is
drawn uniformly from the complete graph, then a coin decides whether the
message is lost.  The reference step functions here operate on immutable
:class:`SystemState` values; long runs use the compiled kernels in
:mod:`lossy_pushsum._kernels`, fed from the same event stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "AgentState",
    "DegenerateStateError",
    "EdgeEvent",
    "EventStream",
    "ProtocolParams",
    "SystemState",
    "TrialRecord",
    "consensus_step",
    "fit_decay_rate",
    "push_sum_step",
    "run_to_consensus",
    "spread",
    "trajectory",
    "trial_rng",
]

Mode = Literal["pushsum", "consensus"]
_MODE_CODE = {"pushsum": _kernels.PUSHSUM, "consensus": _kernels.CONSENSUS}

FIRST_BLOCK = 256
MAX_BLOCK = 1 << 16


class DegenerateStateError(ArithmeticError):
    """A weight became zero, negative or non-finite."""


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    p: float
    alpha: float = 0.5
    max_steps: int = 1_000_000
    tol: float = 1e-12

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")

    def require_convergent(self) -> None:
        if self.p >= 1.0:
            raise ValueError("runs that seek convergence need p < 1")


@dataclass(frozen=True)
class AgentState:
    x: float
    w: float = 1.0


@dataclass(frozen=True)
class EdgeEvent:
    sender: int
    receiver: int
    delivered: bool

    def validate(self, n: int) -> None:
        if not (0 <= self.sender < n and 0 <= self.receiver < n):
            raise ValueError(f"agent index out of range for n={n}: {self}")
        if self.sender == self.receiver:
            raise ValueError(f"sender and receiver coincide: {self}")


@dataclass(frozen=True)
class SystemState:
    agents: tuple
    t: int = 0

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "SystemState":
        return cls(tuple(AgentState(float(v), 1.0) for v in values))

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def values(self) -> np.ndarray:
        return np.array([a.x for a in self.agents])

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.w for a in self.agents])

    def ratios(self) -> np.ndarray:
        return self.values / self.weights


def _updated(state: SystemState, changes: dict) -> SystemState:
    agents = list(state.agents)
    for k, agent in changes.items():
        agents[k] = agent
    return SystemState(tuple(agents), state.t + 1)


def push_sum_step(state: SystemState, params: ProtocolParams, event: EdgeEvent) -> SystemState:
    """Sender keeps ``1 - alpha`` of its (x, w); the receiver gets the rest if delivered."""
    event.validate(state.n)
    a = params.alpha
    i, j = event.sender, event.receiver
    si, sj = state.agents[i], state.agents[j]
    changes = {i: AgentState((1 - a) * si.x, (1 - a) * si.w)}
    if event.delivered:
        changes[j] = AgentState(sj.x + a * si.x, sj.w + a * si.w)
    return _updated(state, changes)


def consensus_step(state: SystemState, params: ProtocolParams, event: EdgeEvent) -> SystemState:
    """Receiver moves a fraction ``alpha`` toward the sender's value; weights stay 1."""
    event.validate(state.n)
    if not event.delivered:
        return replace(state, t=state.t + 1)
    a = params.alpha
    si, sj = state.agents[event.sender], state.agents[event.receiver]
    return _updated(state, {event.receiver: AgentState((1 - a) * sj.x + a * si.x, sj.w)})


def spread(state: SystemState, mode: Mode = "pushsum") -> float:
    """Range ``max - min`` of the ratios ``x/w`` (push-sum) or of the values (consensus)."""
    if mode == "consensus":
        v = state.values
    else:
        w = state.weights
        if not np.all(np.isfinite(w) & (w > 0)):
            raise DegenerateStateError(f"weights must be finite and positive, got {w}")
        v = state.values / w
    return float(v.max() - v.min())


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent generator for one trial, keyed by ``(seed, trial)``.

    Streams come from :class:`numpy.random.SeedSequence` with the trial
    index as spawn key, so they do not depend on how trials are scheduled.
    """
    key = trial if isinstance(trial, tuple) else (int(trial),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


class EventStream:
    """Seeded stream of :class:`EdgeEvent`.

    Each event consumes two uniforms, so concatenating blocks of any size
    yields the same sequence of events.
    """

    def __init__(self, n: int, p: float, seed: int, trial=0):
        self.n = int(n)
        self.p = float(p)
        self._rng = trial_rng(seed, trial)
        self.consumed = 0

    def uniforms(self, k: int) -> np.ndarray:
        self.consumed += k
        return self._rng.random((k, 2))

    def events(self, k: int) -> list[EdgeEvent]:
        s, r, d = _kernels.decode(self.uniforms(k), self.n, self.p)
        return [EdgeEvent(int(a), int(b), bool(c)) for a, b, c in zip(s, r, d)]

    def __iter__(self) -> Iterator[EdgeEvent]:
        while True:
            yield from self.events(FIRST_BLOCK)


def blocks(stream: EventStream, max_steps: int) -> Iterator[np.ndarray]:
    """Uniform blocks of geometrically growing size, at most ``max_steps`` events in total."""
    size = FIRST_BLOCK
    left = max_steps
    while left > 0:
        k = min(size, left)
        left -= k
        yield stream.uniforms(k)
        size = min(2 * size, MAX_BLOCK)


@dataclass(frozen=True)
class TrialRecord:
    value: float
    steps: int
    converged: bool
    seed: int
    trial: int = 0


def run_to_consensus(
    params: ProtocolParams,
    initial_values: Sequence[float],
    mode: Mode = "pushsum",
    seed: int = 0,
    trial: int = 0,
) -> TrialRecord:
    """Run until the spread is at most ``params.tol`` or the step budget is spent.

    The reported value is the mean of the ratios (or values) at stop time.
    """
    params.require_convergent()
    x = np.array(initial_values, dtype=float)
    if x.shape != (params.n,):
        raise ValueError(f"expected {params.n} initial values, got shape {x.shape}")
    w = np.ones(params.n)
    code = _MODE_CODE[mode]
    steps = 0
    converged = _kernels.value_spread(x, w, code) <= params.tol
    no_trace = np.empty((0, 3))
    if not converged:
        stream = EventStream(params.n, params.p, seed, trial)
        for u in blocks(stream, params.max_steps):
            k = _kernels.value_block(x, w, u, params.p, params.alpha, params.tol, code, steps, no_trace)
            if k == _kernels.DEGENERATE:
                raise DegenerateStateError("weight renormalization failed: a weight underflowed")
            if k > 0:
                steps += k
                converged = True
                break
            steps += len(u)
    if mode == "pushsum":
        if not np.all(np.isfinite(w) & (w > 0)):
            raise DegenerateStateError("weight renormalization failed")
        value = float(np.mean(x / w))
    else:
        value = float(np.mean(x))
    return TrialRecord(value, steps, bool(converged), int(seed), int(trial))


@dataclass
class Trajectory:
    """Per-step hull of a run: ``upper`` = max ratio, ``lower`` = min ratio."""

    upper: np.ndarray
    lower: np.ndarray
    min_weight: np.ndarray
    initial_spread: float
    final_state: SystemState = field(repr=False)

    @property
    def spread(self) -> np.ndarray:
        return self.upper - self.lower


def trajectory(
    params: ProtocolParams,
    initial_values: Sequence[float],
    steps: int,
    mode: Mode = "pushsum",
    seed: int = 0,
    trial: int = 0,
) -> Trajectory:
    """Run exactly ``steps`` events (no early stop) recording the hull after each one.

    Weights are shown after the periodic power-of-two rescaling.
    """
    x = np.array(initial_values, dtype=float)
    w = np.ones(params.n)
    code = _MODE_CODE[mode]
    trace = np.empty((steps, 3))
    initial = _kernels.value_spread(x, w, code)
    stream = EventStream(params.n, params.p, seed, trial)
    k = _kernels.value_block(x, w, stream.uniforms(steps), params.p, params.alpha, -1.0, code, 0, trace)
    if k == _kernels.DEGENERATE:
        raise DegenerateStateError("weight renormalization failed: a weight underflowed")
    final = SystemState(tuple(AgentState(a, b) for a, b in zip(x, w)), steps)
    return Trajectory(trace[:, 0], trace[:, 1], trace[:, 2], initial, final)


def fit_decay_rate(spreads: np.ndarray, floor: float = 1e-13) -> float:
    """Least-squares slope of ``log(spread)`` against the step index.

    Only the prefix where the spread exceeds ``floor`` times its first value
    is used; past that point it sits at rounding level.  Returns ``nan`` if
    fewer than two points remain.
    """
    s = np.asarray(spreads, dtype=float)
    if s.size == 0 or not s[0] > 0:
        return math.nan
    below = np.nonzero(s <= floor * s[0])[0]
    stop = below[0] if below.size else s.size
    if stop < 2:
        return math.nan
    t = np.arange(stop, dtype=float)
    return float(np.polyfit(t, np.log(s[:stop]), 1)[0])
