"""Per-contract runtime observers.

An observer turns job completions into measurements, evaluates them and
produces violation reports. It never mutates the contract it watches.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .contract_core import (
    AssumptionViolated,
    GuaranteeViolated,
    LatencyContract,
    Measurement,
    evaluate,
)
from .errors import UsageError

GUARANTEE = "guarantee"
ASSUMPTION = "assumption"


@dataclass(frozen=True)
class ObserverConfig:
    window: int = 5
    safety_factor_num: int = 1
    safety_factor_den: int = 1

    def __post_init__(self):
        if self.window < 1:
            raise UsageError("observer window must be >= 1")
        if self.safety_factor_den <= 0 or self.safety_factor_num < self.safety_factor_den:
            raise UsageError("safety factor must be a rational >= 1")

    @property
    def safety_factor(self) -> Fraction:
        return Fraction(self.safety_factor_num, self.safety_factor_den)


@dataclass(frozen=True)
class ViolationReport:
    contract_id: str
    timestamp: int
    observed: int
    demand: int
    kind: str
    job_id: object = None
    budget: int = 0

    def to_payload(self) -> dict:
        return {
            "contract": self.contract_id,
            "violation_kind": self.kind,
            "observed": self.observed,
            "demand": self.demand,
            "budget": self.budget,
            "job": self.job_id,
        }


class Observer:
    def __init__(self, contract_id: str, config: ObserverConfig = ObserverConfig()):
        self.contract_id = contract_id
        self.config = config
        self.window: deque = deque(maxlen=config.window)

    def demand_estimate(self) -> int:
        if not self.window:
            raise UsageError(f"observer {self.contract_id}: empty window")
        cfg = self.config
        return max(self.window) * cfg.safety_factor_num // cfg.safety_factor_den

    def observed_worst(self) -> int:
        return max(self.window) if self.window else 0

    def record(self, contract: LatencyContract, job_start: int, job_end: int,
               assumption_held: bool = True, job_id=None) -> Optional[ViolationReport]:
        m = Measurement(contract.id, job_id, job_start, job_end, assumption_held)
        self.window.append(m.response)
        result = evaluate(contract, m)
        if isinstance(result, GuaranteeViolated):
            return ViolationReport(contract.id, job_end, m.response,
                                   self.demand_estimate(), GUARANTEE, job_id, contract.budget)
        if isinstance(result, AssumptionViolated):
            return ViolationReport(contract.id, job_end, m.response,
                                   contract.budget, ASSUMPTION, job_id, contract.budget)
        return None
