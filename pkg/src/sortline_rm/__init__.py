"""Hierarchical parametric assume-guarantee contracts with resilience managers,
exercised on a deterministic simulation of a colour sorting line."""

from .contract_core import (
    AssumptionViolated,
    ContractNode,
    ContractTree,
    GuaranteeViolated,
    Infeasible,
    LatencyContract,
    Measurement,
    Satisfied,
    check_refinement,
    evaluate,
    reallocate,
    slack,
)
from .metrics import Metrics, metrics_from_trace
from .observer import Observer, ObserverConfig, ViolationReport
from .scenario import Scenario, load_scenario, loads_scenario, scenario_from_dict
from .simulation import RunResult, Simulation, run_scenario

__version__ = "0.1.0"
