"""Chunk allocation, replication and adaptive scheduling for multipath uploads."""
from .distributions import (
    DomainError,
    Exponential,
    Gamma,
    GridSpec,
    LogNormal,
    MarkovModulatedExp,
    MmppParams,
    Weibull,
    chunk_cdf,
    mgf_log,
)
from .intermittent import (
    enumerate_nr,
    optimal_allocation_search,
    optimal_nr,
    optimal_two_path_exponential,
    proportional_allocation,
    psi_exponential,
    replication_latency,
    synchronization_cost,
)
from .order_stats import d_operator, eta_r, mean_upload_latency, mu_operator
from .bounds import decay_rates, optimal_allocation_by_decay, tail_bound
from .inference import GammaPosterior, em_fit, viterbi_map
from .simulator import PathConfig, TrafficConfig, simulate
from .adaptive import AdaptiveScheduler, make_sampler

__all__ = [
    "AdaptiveScheduler",
    "DomainError",
    "Exponential",
    "Gamma",
    "GammaPosterior",
    "GridSpec",
    "LogNormal",
    "MarkovModulatedExp",
    "MmppParams",
    "PathConfig",
    "TrafficConfig",
    "Weibull",
    "chunk_cdf",
    "d_operator",
    "decay_rates",
    "em_fit",
    "enumerate_nr",
    "eta_r",
    "make_sampler",
    "mean_upload_latency",
    "mgf_log",
    "mu_operator",
    "optimal_allocation_by_decay",
    "optimal_allocation_search",
    "optimal_nr",
    "optimal_two_path_exponential",
    "proportional_allocation",
    "psi_exponential",
    "replication_latency",
    "simulate",
    "synchronization_cost",
    "tail_bound",
    "viterbi_map",
]

__version__ = "0.1.0"
