"""Run a scenario: plant + observers + resilience managers + faults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .engine import RANK_FAULT, EventQueue, Trace
from .fault_inject import apply_faults
from .metrics import Metrics, throughput
from .observer import ASSUMPTION, Observer
from .plant_sim import (
    BIN_OF_COLOR,
    EJECTED,
    MISSED,
    ON_BELT,
    PIPELINE,
    Plant,
    end_to_end_budget,
)
from .rm_hierarchy import (
    DEGRADE_CMD,
    MODE_CMD,
    PARAM_UPDATE,
    STOP_CMD,
    VIOLATION,
    MessageLayer,
    ResilienceManager,
    RmMessage,
    SystemView,
)
from .scenario import E2E, Scenario


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    metrics: Metrics


class Simulation:
    """One deterministic execution of a scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = s = scenario.with_overrides()
        self.queue = EventQueue()
        self.trace = Trace()
        self.plant = Plant(s.geometry, s.components, self.queue, self.trace, s.speed_levels)
        self.tree = s.build_contract_tree()
        self.layer = MessageLayer(self.queue, self.trace, s.msg_latency)
        self.observers = {c: Observer(c, s.observer) for c in ("PC",) + PIPELINE}
        self.owner = {cid: rm.id for rm in s.rm_tree for cid in rm.owned}
        self.job_results: dict = {}
        self.active_faults: set = set()
        self.violation_counts: dict = {}
        self.speed_log = [(0, 0)]

        self.view = SystemView(
            tree=self.tree, observers=self.observers, components=s.components,
            speed_level=lambda: self.plant.belt.level, n_levels=len(s.speed_levels),
            level_budget=self.level_budget)
        rm_nodes = {n.id: n for n in s.rm_tree}
        self.rms = {n.id: ResilienceManager(n, self.view, self.layer, self.trace, rm_nodes)
                    for n in s.rm_tree}
        for rid, rm in self.rms.items():
            self.layer.register(rid, rm.receive)
        for comp in s.components:
            self.layer.register(comp, self._component_endpoint)
        self.layer.register("contracts", self._component_endpoint)
        self.layer.register("belt", self._belt_endpoint)

        self.plant.job_listeners.append(self._on_job)
        self.plant.speed_listeners.append(self._on_speed)

    # -- budgets --------------------------------------------------------

    def level_budget(self, node_id, level) -> int:
        if node_id == E2E:
            return end_to_end_budget(self.scenario.geometry, self.scenario.speed_levels[level])
        return self.tree.contract(node_id).budget

    def _set_budget(self, cid, budget, cause):
        old = self.tree.set_budget(cid, budget)
        self.trace.emit(self.queue.now, "budget_change", contract=cid, old=old, new=budget,
                        cause=cause, refinement=self.tree.refinement_holds())

    def _on_speed(self, level):
        self.speed_log.append((self.queue.now, level))
        self._set_budget(E2E, self.level_budget(E2E, level), "speed_change")

    # -- endpoints ------------------------------------------------------

    def _component_endpoint(self, msg: RmMessage):
        if msg.kind == PARAM_UPDATE:
            self._set_budget(msg.body["contract"], msg.body["new_budget"], msg.sender)
        elif msg.kind == MODE_CMD:
            comp = self.scenario.components[msg.body["component"]]
            previous, comp.active_mode = comp.active_mode, msg.body["mode"]
            self.trace.emit(self.queue.now, "mode_change", component=comp.name,
                            mode=comp.active_mode, previous=previous,
                            nominal=comp.nominal, effective=comp.effective_latency,
                            coarse_counting=(comp.name == "PC" and comp.active_mode == "fast"))

    def _belt_endpoint(self, msg: RmMessage):
        if msg.kind == DEGRADE_CMD:
            if self.plant.belt.running:
                self.plant.set_speed(msg.body["level"])
        elif msg.kind == STOP_CMD:
            self.plant.halt()

    # -- monitoring -----------------------------------------------------

    def _assumption(self, component, job, input_valid) -> bool:
        if component == "BS":
            return input_valid and self.job_results.get(("CP", job)) == "ok"
        if component == "EC":
            return input_valid and self.job_results.get(("BS", job)) == "ok"
        return True

    def _on_job(self, component, job, arrival, start, end, input_valid):
        contract = self.tree.by_component(component)
        held = self._assumption(component, job, input_valid)
        report = self.observers[contract.id].record(contract, arrival, end, held, job)
        if report is None:
            self.job_results[(component, job)] = "ok"
            return
        self.job_results[(component, job)] = (
            "excused" if report.kind == ASSUMPTION else "violated")
        self.violation_counts[contract.id] = self.violation_counts.get(contract.id, 0) + 1
        self.trace.emit(self.queue.now, "violation", **report.to_payload())
        if self.scenario.rm_enabled:
            self.layer.send(RmMessage(VIOLATION, f"obs:{contract.id}", self.owner[contract.id],
                                      dataclasses.asdict(report)))

    # -- faults ---------------------------------------------------------

    def _fault_event(self):
        apply_faults(self.scenario.faults, self.plant, self.queue.now, self.active_faults)

    # -- run ------------------------------------------------------------

    def run(self) -> RunResult:
        s = self.scenario
        arrivals = s.resolved_arrivals()
        self.trace.emit(0, "run_start", scenario=s.name, seed=s.seed, duration=s.duration,
                        rm_enabled=s.rm_enabled, msg_latency=s.msg_latency,
                        base_period=s.geometry.base_period,
                        budgets=self.tree.snapshot())
        times = sorted({t for f in s.faults for t in f.transitions(s.duration)})
        for t in times:
            self.queue.schedule(t, self._fault_event, rank=RANK_FAULT)
        for i, (t, color) in enumerate(arrivals):
            if t < s.duration:  # half-open run window, as for generated arrivals
                self.plant.schedule_arrival(t, i, color)
        self.plant.start()
        self.plant.advance(s.duration)
        for tid, color in self.plant.loader:
            self.plant.not_admitted += 1
            self.trace.emit(s.duration, "not_admitted", token=tid, color=color, reason="backlog")
        self.trace.emit(s.duration, "run_end", pulses=self.plant.belt.pulse_count,
                        speed_level=self.plant.belt.level, running=self.plant.belt.running,
                        budgets=self.tree.snapshot())
        return RunResult(s, self.trace, self.live_metrics())

    def live_metrics(self) -> Metrics:
        """Metrics from simulator state (independent of the trace reducer)."""
        tokens = self.plant.tokens.values()
        ejected = [t for t in tokens if t.state == EJECTED]
        m = Metrics(
            tokens_in=len(self.plant.tokens),
            sorted_correct=sum(1 for t in ejected if t.bin == BIN_OF_COLOR[t.color]),
            missorted=sum(1 for t in ejected if t.bin != BIN_OF_COLOR[t.color]),
            missed=sum(1 for t in tokens if t.state == MISSED),
            in_flight=sum(1 for t in tokens if t.state == ON_BELT),
            not_admitted=self.plant.not_admitted,
            violations_by_contract=dict(self.violation_counts),
            final_speed_level=self.plant.belt.level,
        )
        for rm in self.rms.values():
            for k, v in rm.recovery_counts.items():
                m.recoveries[k] = m.recoveries.get(k, 0) + v
        log = self.speed_log + [(self.scenario.duration, None)]
        m.time_degraded = sum(t1 - t0 for (t0, lv), (t1, _) in zip(log, log[1:]) if lv)
        first = min((t.entry_time for t in tokens), default=None)
        last = max((t.exit_time for t in ejected), default=None)
        m.throughput = throughput(len(ejected), first, last)
        return m


def run_scenario(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()
