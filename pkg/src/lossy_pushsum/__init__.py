"""Push-sum averaging under message loss: simulation, error bounds and invariant measures."""

from .bounds import (
    BoundSet,
    bound_set,
    gamma,
    highp_ratios,
    lower_bound_closed,
    lower_bound_series,
    r_term,
    t_pmf,
    upper_bound_general,
    upper_bound_highp,
)
from .coefficients import (
    ErrorEstimate,
    TauSample,
    coupling_check,
    empirical_measure,
    estimate_R,
    interval_masses,
    sample_tau,
)
from .measure import (
    DiscreteMeasure,
    grid,
    invariance_iterate,
    markov_stationary,
    measure_R,
    pushforward,
    recombine_upper_bound,
)
from .protocol import (
    AgentState,
    EdgeEvent,
    ProtocolParams,
    SystemState,
    TrialRecord,
    consensus_step,
    push_sum_step,
    run_to_consensus,
    spread,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "BoundSet",
    "DiscreteMeasure",
    "EdgeEvent",
    "ErrorEstimate",
    "ProtocolParams",
    "SystemState",
    "TauSample",
    "TrialRecord",
    "bound_set",
    "consensus_step",
    "coupling_check",
    "empirical_measure",
    "estimate_R",
    "gamma",
    "grid",
    "highp_ratios",
    "interval_masses",
    "invariance_iterate",
    "lower_bound_closed",
    "lower_bound_series",
    "markov_stationary",
    "measure_R",
    "push_sum_step",
    "pushforward",
    "r_term",
    "recombine_upper_bound",
    "run_to_consensus",
    "sample_tau",
    "spread",
    "t_pmf",
    "upper_bound_general",
    "upper_bound_highp",
]
