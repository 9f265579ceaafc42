"""Run metrics and the trace -> metrics reducer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

RECOVERY_KINDS = ("mode_switch", "reallocation", "escalation", "degradation", "safe_stop")


def throughput(ejected: int, first_entry, last_eject) -> Fraction:
    """Tokens delivered into bins per simulated second of line activity.

    The active span runs from the first LS1 entry to the last ejection, so
    idle time after the work is done does not dilute the rate.
    """
    if not ejected or first_entry is None or last_eject is None or last_eject <= first_entry:
        return Fraction(0)
    return Fraction(ejected * 1_000_000, last_eject - first_entry)


@dataclass
class Metrics:
    tokens_in: int = 0
    sorted_correct: int = 0
    missorted: int = 0
    missed: int = 0
    in_flight: int = 0
    not_admitted: int = 0
    violations_by_contract: dict = field(default_factory=dict)
    recoveries: dict = field(default_factory=lambda: {k: 0 for k in RECOVERY_KINDS})
    time_degraded: int = 0
    final_speed_level: int = 0
    throughput: Fraction = Fraction(0)

    def to_dict(self) -> dict:
        return {
            "tokens_in": self.tokens_in,
            "sorted_correct": self.sorted_correct,
            "missorted": self.missorted,
            "missed": self.missed,
            "in_flight": self.in_flight,
            "not_admitted": self.not_admitted,
            "violations_by_contract": dict(sorted(self.violations_by_contract.items())),
            "recoveries": {k: self.recoveries.get(k, 0) for k in RECOVERY_KINDS},
            "time_degraded": self.time_degraded,
            "final_speed_level": self.final_speed_level,
            "throughput": str(self.throughput),
            "throughput_per_s": float(self.throughput),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def metrics_from_trace(records) -> Metrics:
    """Rebuild :class:`Metrics` from trace records alone."""
    m = Metrics()
    first_entry = last_eject = None
    ejected = 0
    level, level_since = 0, 0
    end_time = 0
    for r in records:
        kind, p, t = r["kind"], r["payload"], r["t"]
        if kind == "token_enter":
            m.tokens_in += 1
            if first_entry is None:
                first_entry = t
        elif kind == "token_state":
            if p["state"] == "ejected":
                ejected += 1
                last_eject = t
                if p["correct"]:
                    m.sorted_correct += 1
                else:
                    m.missorted += 1
            else:
                m.missed += 1
        elif kind == "not_admitted":
            m.not_admitted += 1
        elif kind == "violation":
            c = p["contract"]
            m.violations_by_contract[c] = m.violations_by_contract.get(c, 0) + 1
        elif kind == "recovery":
            m.recoveries[p["action"]] = m.recoveries.get(p["action"], 0) + 1
        elif kind == "speed_change" and not p["noop"]:
            if level > 0:
                m.time_degraded += t - level_since
            level, level_since = p["level"], t
        elif kind == "run_end":
            end_time = t
    if level > 0:
        m.time_degraded += end_time - level_since
    m.final_speed_level = level
    m.in_flight = m.tokens_in - m.sorted_correct - m.missorted - m.missed
    m.throughput = throughput(ejected, first_entry, last_eject)
    return m
