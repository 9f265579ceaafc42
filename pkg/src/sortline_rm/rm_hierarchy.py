"""Resilience managers and the message layer they coordinate over.

Each RM owns a set of contracts. On a guarantee violation it tries its
action list in order: switch the violator to a faster behaviour mode,
redistribute budgets among the violator and its siblings, or escalate the
aggregate demand to its parent. The root RM answers escalations by slowing
the belt to the smallest sufficient speed level, or by stopping the line.

RMs share nothing with each other; everything they send goes through
:class:`MessageLayer`. They do read the contract tree, observers and
component mode tables through a :class:`SystemView`.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .contract_core import ContractTree, Infeasible, reallocate
from .engine import EventQueue, Trace
from .errors import ProtocolError
from .observer import ASSUMPTION, ViolationReport
from .plant_sim import DEFAULT_SPEED_LEVELS, SpeedLevel  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

MODE_SWITCH = "mode_switch"
REALLOCATE = "reallocate"
ESCALATE = "escalate"
DEGRADE = "degrade"
SAFE_STOP = "safe_stop"
ACTION_KINDS = (MODE_SWITCH, REALLOCATE, ESCALATE, DEGRADE, SAFE_STOP)
ROOT_ONLY = (DEGRADE, SAFE_STOP)

VIOLATION = "Violation"
ESCALATION = "Escalation"
PARAM_UPDATE = "ParamUpdate"
MODE_CMD = "ModeCmd"
DEGRADE_CMD = "DegradeCmd"
STOP_CMD = "StopCmd"
ACK = "Ack"
COMMAND_KINDS = (PARAM_UPDATE, MODE_CMD, DEGRADE_CMD, STOP_CMD)


@dataclass
class RmNode:
    id: str
    parent: Optional[str] = None
    children: list = field(default_factory=list)
    owned: list = field(default_factory=list)
    actions: list = field(default_factory=lambda: [MODE_SWITCH, REALLOCATE, ESCALATE])

    def __post_init__(self):
        for a in self.actions:
            if a not in ACTION_KINDS:
                raise ProtocolError(f"{self.id}: unknown recovery action {a!r}")
            if a in ROOT_ONLY and self.parent is not None:
                raise ProtocolError(f"{self.id}: {a} is reserved for the root RM")


@dataclass
class RmMessage:
    kind: str
    sender: str
    dest: str
    body: dict = field(default_factory=dict)
    sent_at: int = 0
    correlation_id: int = -1


def default_rm_tree() -> list:
    return [
        RmNode("RM_top", None, ["RM_proc", "RM_track"], ["e2e", "track"],
               [REALLOCATE, DEGRADE, SAFE_STOP]),
        RmNode("RM_proc", "RM_top", [], ["CP", "BS", "EC"], [MODE_SWITCH, REALLOCATE, ESCALATE]),
        RmNode("RM_track", "RM_top", [], ["PC"], [MODE_SWITCH, REALLOCATE, ESCALATE]),
    ]


class MessageLayer:
    """In-simulation pub/sub transport with a fixed delivery latency.

    Delivery order is ``(time, seq)``; with one latency for every pair this
    keeps FIFO order per sender/receiver. Every non-Ack message is answered
    with an Ack once the receiver's handler has returned.
    """

    def __init__(self, queue: EventQueue, trace: Trace, latency: int = 1_000):
        if latency < 0:
            raise ValueError("msg_latency must be >= 0")
        self.queue = queue
        self.trace = trace
        self.latency = latency
        self.endpoints: dict = {}
        self._corr = itertools.count()

    def register(self, name: str, handler: Callable):
        self.endpoints[name] = handler

    def send(self, msg: RmMessage) -> RmMessage:
        msg.sent_at = self.queue.now
        if msg.correlation_id < 0:
            msg.correlation_id = next(self._corr)
        self.deliver(msg, self.queue.now)
        return msg

    def deliver(self, msg: RmMessage, now: int) -> int:
        at = now + self.latency
        self.queue.schedule(at, self._receive, msg)
        return at

    def _receive(self, msg: RmMessage):
        self.trace.emit(self.queue.now, "msg", msg_kind=msg.kind, sender=msg.sender,
                        dest=msg.dest, corr=msg.correlation_id, sent_at=msg.sent_at,
                        body=msg.body)
        handler = self.endpoints.get(msg.dest)
        if handler is not None:
            handler(msg)
        if msg.kind != ACK:
            self.send(RmMessage(ACK, msg.dest, msg.sender, {"ack_of": msg.correlation_id},
                                correlation_id=msg.correlation_id))


@dataclass
class SystemView:
    """What an RM may read when deciding. RMs never write through it."""

    tree: ContractTree
    observers: dict
    components: dict
    speed_level: Callable[[], int]
    n_levels: int
    level_budget: Callable[[str, int], int]


class ResilienceManager:
    def __init__(self, node: RmNode, view: SystemView, layer: MessageLayer, trace: Trace,
                 rm_nodes: dict):
        self.node = node
        self.view = view
        self.layer = layer
        self.trace = trace
        self.rm_nodes = rm_nodes
        self.in_flight: dict = {}
        self.stopped = False
        self.recovery_counts: dict = {}

    @property
    def id(self) -> str:
        return self.node.id

    @property
    def is_root(self) -> bool:
        return self.node.parent is None

    def _now(self):
        return self.layer.queue.now

    def _note(self, kind, **payload):
        if kind == "recovery":
            a = payload["action"]
            self.recovery_counts[a] = self.recovery_counts.get(a, 0) + 1
        self.trace.emit(self._now(), kind, rm=self.id, **payload)

    # -- ownership ------------------------------------------------------

    def owned_subtree(self) -> set:
        out = set()
        for cid in self.node.owned:
            out.update(self.view.tree.subtree_ids(cid))
        return out

    def _check_locality(self, msgs):
        allowed = self.owned_subtree()
        for m in msgs:
            if m.kind == PARAM_UPDATE and m.body["contract"] not in allowed:
                raise ProtocolError(f"{self.id} may not update {m.body['contract']}")

    # -- receive loop ---------------------------------------------------

    def receive(self, msg: RmMessage):
        if msg.kind == ACK:
            self._acked(msg.correlation_id)
            return
        try:
            if msg.kind == VIOLATION:
                out = self.handle_violation(ViolationReport(**msg.body))
            elif msg.kind == ESCALATION:
                out = self.handle_escalation(msg.body)
            else:
                raise ProtocolError(f"{self.id} cannot handle {msg.kind}")
        except ProtocolError as exc:
            log.warning("%s dropped %s: %s", self.id, msg.kind, exc)
            self._note("protocol_error", msg_kind=msg.kind, error=str(exc))
            return
        for m in out:
            self.layer.send(m)

    def _acked(self, corr):
        for key, pending in list(self.in_flight.items()):
            if corr in pending:
                pending.discard(corr)
                if not pending:
                    del self.in_flight[key]

    def _track(self, key, msgs):
        ids = set()
        for m in msgs:
            if m.correlation_id < 0:
                m.correlation_id = next(self.layer._corr)
            ids.add(m.correlation_id)
        if ids:
            self.in_flight[key] = ids

    # -- decisions ------------------------------------------------------

    def _demands(self, parent, violator, demand):
        view = self.view
        out = []
        for child in parent.children:
            c = child.contract
            if c.id == violator:
                d = demand
            else:
                obs = view.observers.get(c.id)
                worst = obs.observed_worst() if obs is not None else 0
                comp = view.components.get(c.component)
                nominal = comp.nominal if comp is not None else c.budget
                d = max(worst, nominal)
            out.append((c.id, d, c.budget_min, c.budget_max))
        return out

    def _param_updates(self, new_budgets, ordered_by=None):
        tree = self.view.tree
        changed = [(cid, b, tree.contract(cid).budget) for cid, b in new_budgets
                   if tree.contract(cid).budget != b]
        # shrink first so every prefix of the batch keeps refinement
        changed.sort(key=lambda x: 0 if x[1] < x[2] else 1)
        return [RmMessage(PARAM_UPDATE, self.id, self._endpoint_of(cid),
                          {"contract": cid, "new_budget": b, "old_budget": old})
                for cid, b, old in changed]

    def _endpoint_of(self, cid):
        comp = self.view.tree.contract(cid).component
        return comp if comp is not None else "contracts"

    def _mode_switch(self, contract, report):
        comp = self.view.components.get(contract.component)
        if comp is None or len(comp.modes) < 2:
            return None
        # inflation the current mode suffers beyond its nominal latency
        inflation = max(0, report.demand - comp.nominal)
        fits = [(lat, name) for name, lat in comp.modes.items()
                if name != comp.active_mode and lat + inflation <= contract.budget]
        if not fits:
            return None
        _, mode = max(fits)
        return RmMessage(MODE_CMD, self.id, comp.name, {"component": comp.name, "mode": mode})

    def handle_violation(self, report: ViolationReport) -> list:
        tree = self.view.tree
        cid = report.contract_id
        if cid not in tree or cid not in self.node.owned:
            raise ProtocolError(f"{self.id} got a report for unowned contract {cid!r}")
        if report.kind == ASSUMPTION:
            self._note("excused", contract=cid, job=report.job_id)
            return []
        contract = tree.contract(cid)
        parent = tree.parent(cid)
        key = parent.id if parent is not None else cid
        if key in self.in_flight:
            self._note("coalesced", contract=cid, node=key, job=report.job_id)
            return []

        infeasible = None
        demands = None
        for action in self.node.actions:
            if action == MODE_SWITCH:
                cmd = self._mode_switch(contract, report)
                if cmd is not None:
                    self._note("recovery", action=MODE_SWITCH, contract=cid, node=key,
                               component=cmd.body["component"], mode=cmd.body["mode"])
                    self._track(key, [cmd])
                    return [cmd]
            elif action == REALLOCATE and parent is not None:
                demands = self._demands(parent, cid, report.demand)
                result = reallocate(parent.contract.budget, demands)
                if isinstance(result, Infeasible):
                    infeasible = result
                    continue
                msgs = self._param_updates(result)
                self._check_locality(msgs)
                self._note("recovery", action="reallocation", contract=cid, node=key,
                           budgets=dict(result))
                self._track(key, msgs)
                return msgs
            elif action == ESCALATE and self.node.parent is not None and parent is not None:
                if demands is None:
                    demands = self._demands(parent, cid, report.demand)
                required = (infeasible.required if infeasible is not None
                            else sum(d[1] for d in demands))
                esc = RmMessage(ESCALATION, self.id, self.node.parent,
                                {"rm": self.id, "node": key, "required_budget": required,
                                 "demands": [list(d) for d in demands]})
                self._note("recovery", action="escalation", contract=cid, node=key,
                           required_budget=required)
                self._track(key, [esc])
                return [esc]
            elif action in ROOT_ONLY and parent is not None:
                if demands is None:
                    demands = self._demands(parent, cid, report.demand)
                return self._resolve(key, demands, sum(d[1] for d in demands))
        self._note("unhandled", contract=cid, node=key)
        return []

    def handle_escalation(self, esc: dict) -> list:
        if not self.is_root:
            fwd = RmMessage(ESCALATION, self.id, self.node.parent, dict(esc))
            self._note("forward", node=esc["node"], required_budget=esc["required_budget"])
            return [fwd]
        if esc["node"] not in self.view.tree:
            raise ProtocolError(f"escalation for unknown node {esc['node']!r}")
        if self.stopped:
            self._note("coalesced", node=esc["node"], reason="stopped")
            return []
        if esc["node"] in self.in_flight:
            self._note("coalesced", node=esc["node"], reason="in_flight")
            return []
        demands = [tuple(d) for d in esc["demands"]]
        return self._resolve(esc["node"], demands, esc["required_budget"])

    def choose_level(self, node_id, required) -> Optional[int]:
        """Smallest speed level, never below the current one, whose budget covers ``required``."""
        view = self.view
        current = view.speed_level()
        top = view.n_levels - 1 if DEGRADE in self.node.actions else current
        for level in range(current, top + 1):
            if view.level_budget(node_id, level) >= required:
                return level
        return None

    def _resolve(self, node_id, demands, required) -> list:
        view = self.view
        level = self.choose_level(node_id, required)
        result = None
        if level is not None:
            result = reallocate(view.level_budget(node_id, level), demands)
        if level is None or isinstance(result, Infeasible):
            if SAFE_STOP not in self.node.actions:
                self._note("unhandled", node=node_id, required_budget=required)
                return []
            self.stopped = True
            self._note("recovery", action=SAFE_STOP, node=node_id, required_budget=required)
            cmd = RmMessage(STOP_CMD, self.id, "belt", {"reason": node_id})
            self._track(node_id, [cmd])
            return [cmd]
        msgs = []
        degrade = level > view.speed_level()
        if degrade:
            msgs.append(RmMessage(DEGRADE_CMD, self.id, "belt", {"level": level}))
        msgs.extend(self._param_updates(result))
        self._check_locality(msgs)
        self._note("recovery", action="degradation" if degrade else "reallocation",
                   node=node_id, level=level, required_budget=required, budgets=dict(result))
        self._track(node_id, msgs)
        return msgs
