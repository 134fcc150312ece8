"""Fault-tolerant supervision of long-running workloads on preemptible instances.

Subpackages: ``coordinator`` (run/resume state machine), ``checkpoint``
(store + checkpointer plugins), ``eviction`` (scheduled-events client),
``cloudmock`` (hermetic metadata-service mock), ``workload`` (deterministic
toy workload), ``spotsim`` (makespan/cost simulator), ``cli``.
"""

from .config import ConfigError, CoordinatorConfig, dump_config, load_config
from .coordinator import ActionPlan, RunOutcome, on_eviction_notice, resume, run
from .spotsim import PricingModel, SimParams, SimResult, simulate

__all__ = [
    "ActionPlan",
    "ConfigError",
    "CoordinatorConfig",
    "PricingModel",
    "RunOutcome",
    "SimParams",
    "SimResult",
    "dump_config",
    "load_config",
    "on_eviction_notice",
    "resume",
    "run",
    "simulate",
]

__version__ = "0.1.0"
