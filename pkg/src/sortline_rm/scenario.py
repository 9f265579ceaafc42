"""Scenario documents: parsing, validation and defaults.

A scenario is one JSON object (``schema_version`` 1). Every section except
``duration`` is optional; missing sections take the default sorting-line
configuration. Validation failures raise :class:`ScenarioError` carrying the
path of the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .contract_core import ContractNode, ContractTree, LatencyContract
from .errors import ConfigurationError, ProtocolError, ScenarioError, UsageError
from .fault_inject import ADDED_LATENCY, COLOR_MISREAD, FaultSpec, generate_arrivals
from .observer import ObserverConfig
from .plant_sim import (
    COLORS,
    COMPONENTS,
    DEFAULT_SPEED_LEVELS,
    PIPELINE,
    ComponentProc,
    LineGeometry,
    SpeedLevel,
    default_components,
    end_to_end_budget,
    validate_speed_levels,
)
from .rm_hierarchy import ACTION_KINDS, RmNode, default_rm_tree

SCHEMA_VERSION = 1
MAX_SEED = (1 << 64) - 1

E2E = "e2e"
TRACK = "track"

DEFAULT_BUDGETS = {"PC": 10_000, "CP": 40_000, "BS": 20_000, "EC": 20_000}

TOP_KEYS = {
    "schema_version", "name", "seed", "duration", "arrivals", "faults", "rm_enabled",
    "msg_latency", "geometry", "components", "contracts", "observer", "speed_levels",
    "rm_tree",
}


@dataclass
class Scenario:
    duration: int
    name: str = "scenario"
    seed: int = 0
    arrivals: list = field(default_factory=list)
    arrival_rate: Optional[int] = None
    faults: list = field(default_factory=list)
    rm_enabled: bool = True
    msg_latency: int = 1_000
    geometry: LineGeometry = field(default_factory=LineGeometry)
    components: dict = field(default_factory=default_components)
    contract_overrides: dict = field(default_factory=dict)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    speed_levels: tuple = DEFAULT_SPEED_LEVELS
    rm_tree: list = field(default_factory=default_rm_tree)

    def resolved_arrivals(self) -> list:
        if self.arrival_rate is not None:
            return generate_arrivals(self.seed, self.arrival_rate, self.duration)
        return list(self.arrivals)

    def with_overrides(self, seed=None, rm_enabled=None) -> "Scenario":
        s = replace(self, components={
            k: ComponentProc(v.name, dict(v.modes), v.active_mode)
            for k, v in self.components.items()})
        if seed is not None:
            s.seed = seed
        if rm_enabled is not None:
            s.rm_enabled = rm_enabled
        return s

    def build_contract_tree(self) -> ContractTree:
        """The sorting-line contract forest.

        ``e2e`` bounds the CP->BS->EC chain by the end-to-end budget at speed
        level 0; ``track`` bounds PC by the ejection window.
        """
        owner = {}
        for rm in self.rm_tree:
            for cid in rm.owned:
                owner[cid] = rm.id

        def leaf(name):
            o = self.contract_overrides.get(name, {})
            return ContractNode(LatencyContract(
                name, name, "input_valid",
                o.get("budget", DEFAULT_BUDGETS[name]),
                o.get("budget_min", 0), o.get("budget_max")), [], owner.get(name, ""))

        e2e_budget = end_to_end_budget(self.geometry, self.speed_levels[0])
        e2e = ContractNode(LatencyContract(E2E, None, "token_detected", e2e_budget),
                           [leaf(n) for n in PIPELINE], owner.get(E2E, ""))
        track = ContractNode(LatencyContract(TRACK, None, "belt_running",
                                             self.geometry.eject_window),
                             [leaf("PC")], owner.get(TRACK, ""))
        return ContractTree([e2e, track])


# -- parsing helpers --------------------------------------------------------

def _int(d, key, path, default=None, minimum=0, required=False):
    if key not in d:
        if required:
            raise ScenarioError(f"{path}.{key}" if path else key, "required field missing")
        return default
    v = d[key]
    where = f"{path}.{key}" if path else key
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(where, f"expected integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ScenarioError(where, f"must be >= {minimum}")
    return v


def _obj(d, key, path):
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ScenarioError(f"{path}.{key}" if path else key, "expected object")
    return v


def _no_extra(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ScenarioError(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _ratio(v, where):
    if (not isinstance(v, list) or len(v) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in v)):
        raise ScenarioError(where, "expected [numerator, denominator]")
    return v


def _arrivals(d, duration):
    spec = d.get("arrivals", {"explicit": []})
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ScenarioError("arrivals", "expected exactly one of explicit, periodic, rate")
    (mode, body), = spec.items()
    if mode == "explicit":
        if not isinstance(body, list):
            raise ScenarioError("arrivals.explicit", "expected list of [time, colour]")
        out, last = [], -1
        for i, item in enumerate(body):
            where = f"arrivals.explicit[{i}]"
            if not isinstance(item, list) or len(item) != 2:
                raise ScenarioError(where, "expected [time, colour]")
            t, color = item
            if isinstance(t, bool) or not isinstance(t, int) or t < 0:
                raise ScenarioError(where, "time must be a non-negative integer")
            if color not in COLORS:
                raise ScenarioError(where, f"colour must be one of {list(COLORS)}")
            if t <= last:
                raise ScenarioError(where, "arrival times must strictly increase")
            last = t
            out.append((t, color))
        return out, None
    if mode == "periodic":
        where = "arrivals.periodic"
        if not isinstance(body, dict):
            raise ScenarioError(where, "expected object")
        _no_extra(body, {"start", "interval", "count", "colors"}, where)
        start = _int(body, "start", where, 0)
        interval = _int(body, "interval", where, required=True, minimum=1)
        count = _int(body, "count", where, required=True)
        colors = body.get("colors", list(COLORS))
        if not colors or any(c not in COLORS for c in colors):
            raise ScenarioError(f"{where}.colors", f"colours must be from {list(COLORS)}")
        return [(start + i * interval, colors[i % len(colors)]) for i in range(count)], None
    if mode == "rate":
        where = "arrivals.rate"
        if not isinstance(body, dict):
            raise ScenarioError(where, "expected object")
        _no_extra(body, {"mean_interarrival"}, where)
        return [], _int(body, "mean_interarrival", where, required=True, minimum=1)
    raise ScenarioError(f"arrivals.{mode}", "unknown arrival mode")


def _fault(f, i):
    where = f"faults[{i}]"
    if not isinstance(f, dict):
        raise ScenarioError(where, "expected object")
    _no_extra(f, {"target", "kind", "magnitude", "wrong_color", "onset", "duration",
                  "pattern"}, where)
    target = f.get("target")
    if target not in COMPONENTS:
        raise ScenarioError(f"{where}.target", f"unknown component {target!r}")
    kind = f.get("kind", ADDED_LATENCY)
    if kind not in (ADDED_LATENCY, COLOR_MISREAD):
        raise ScenarioError(f"{where}.kind", f"unknown fault kind {kind!r}")
    if kind == COLOR_MISREAD and target != "CP":
        raise ScenarioError(f"{where}.target", "colour misreads apply to CP only")
    duration = f.get("duration")
    if duration is not None:
        duration = _int(f, "duration", where)
    pattern = f.get("pattern", {"type": "continuous"})
    period, duty = None, [1, 1]
    if not isinstance(pattern, dict) or pattern.get("type") not in ("continuous", "intermittent"):
        raise ScenarioError(f"{where}.pattern", "type must be continuous or intermittent")
    if pattern["type"] == "intermittent":
        period = _int(pattern, "period", f"{where}.pattern", required=True, minimum=1)
        duty = _ratio(pattern.get("duty", [1, 2]), f"{where}.pattern.duty")
    try:
        return FaultSpec(target, kind, _int(f, "magnitude", where, 0), f.get("wrong_color"),
                         _int(f, "onset", where, 0), duration, period, duty[0], duty[1])
    except UsageError as exc:
        raise ScenarioError(where, str(exc)) from None


def _components(d):
    comps = default_components()
    body = _obj(d, "components", "")
    for name, spec in body.items():
        where = f"components.{name}"
        if name not in COMPONENTS:
            raise ScenarioError(where, "unknown component")
        if not isinstance(spec, dict):
            raise ScenarioError(where, "expected object")
        _no_extra(spec, {"modes", "active_mode"}, where)
        modes = spec.get("modes", comps[name].modes)
        if not isinstance(modes, dict) or not modes:
            raise ScenarioError(f"{where}.modes", "expected non-empty object")
        for m in modes:
            _int(modes, m, f"{where}.modes")
        active = spec.get("active_mode", comps[name].active_mode)
        if active not in modes:
            raise ScenarioError(f"{where}.active_mode", f"unknown mode {active!r}")
        comps[name] = ComponentProc(name, dict(modes), active)
    return comps


def _rm_tree(d):
    if "rm_tree" not in d:
        return default_rm_tree()
    body = d["rm_tree"]
    if not isinstance(body, list) or not body:
        raise ScenarioError("rm_tree", "expected non-empty list")
    nodes = []
    for i, item in enumerate(body):
        where = f"rm_tree[{i}]"
        if not isinstance(item, dict) or not isinstance(item.get("id"), str):
            raise ScenarioError(where, "expected object with string id")
        _no_extra(item, {"id", "parent", "owned", "actions"}, where)
        actions = item.get("actions", ["mode_switch", "reallocate", "escalate"])
        for a in actions:
            if a not in ACTION_KINDS:
                raise ScenarioError(f"{where}.actions", f"unknown action {a!r}")
        try:
            nodes.append(RmNode(item["id"], item.get("parent"), [],
                                list(item.get("owned", [])), list(actions)))
        except ProtocolError as exc:
            raise ScenarioError(where, str(exc)) from None
    by_id = {n.id: n for n in nodes}
    if len(by_id) != len(nodes):
        raise ScenarioError("rm_tree", "duplicate RM id")
    for n in nodes:
        if n.parent is not None:
            if n.parent not in by_id:
                raise ScenarioError(f"rm_tree.{n.id}.parent", f"unknown RM {n.parent!r}")
            by_id[n.parent].children.append(n.id)
    return nodes


def _validate_ownership(scenario: Scenario):
    rms = {n.id: n for n in scenario.rm_tree}
    roots = [n for n in scenario.rm_tree if n.parent is None]
    if len(roots) != 1:
        raise ScenarioError("rm_tree", "exactly one root RM required")
    for n in scenario.rm_tree:
        seen, cur = set(), n
        while cur.parent is not None:
            if cur.id in seen:
                raise ScenarioError("rm_tree", "cycle in RM tree")
            seen.add(cur.id)
            cur = rms[cur.parent]

    tree = scenario.build_contract_tree()
    owner = {}
    for n in scenario.rm_tree:
        for cid in n.owned:
            if cid not in tree:
                raise ScenarioError(f"rm_tree.{n.id}.owned", f"unknown contract {cid!r}")
            if cid in owner:
                raise ScenarioError(f"rm_tree.{n.id}.owned", f"{cid} owned twice")
            owner[cid] = n.id
    for node in tree:
        if node.id not in owner:
            raise ScenarioError("rm_tree", f"contract {node.id} has no owner")

    def ancestors(rid):
        out = [rid]
        while rms[rid].parent is not None:
            rid = rms[rid].parent
            out.append(rid)
        return out

    for node in tree:
        for child in node.children:
            if owner[node.id] not in ancestors(owner[child.id]):
                raise ScenarioError("rm_tree", f"owner of {node.id} must be an ancestor of "
                                    f"the owner of {child.id}")


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    _no_extra(d, TOP_KEYS, "")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}")
    duration = _int(d, "duration", "", required=True)
    seed = _int(d, "seed", "", 0)
    if seed > MAX_SEED:
        raise ScenarioError("seed", "must fit in 64 bits")
    arrivals, rate = _arrivals(d, duration)
    faults = d.get("faults", [])
    if not isinstance(faults, list):
        raise ScenarioError("faults", "expected list")
    rm_enabled = d.get("rm_enabled", True)
    if not isinstance(rm_enabled, bool):
        raise ScenarioError("rm_enabled", "expected boolean")

    g = _obj(d, "geometry", "")
    _no_extra(g, {"sensor_pulse", "ejector_pulses", "eject_window", "actuation_margin",
                  "base_period", "entry_spacing"}, "geometry")
    gd = LineGeometry()
    ej = g.get("ejector_pulses", list(gd.ejector_pulses))
    if not isinstance(ej, list) or len(ej) != 3:
        raise ScenarioError("geometry.ejector_pulses", "expected three integers")
    try:
        geometry = LineGeometry(
            _int(g, "sensor_pulse", "geometry", gd.sensor_pulse), tuple(ej),
            _int(g, "eject_window", "geometry", gd.eject_window),
            _int(g, "actuation_margin", "geometry", gd.actuation_margin),
            _int(g, "base_period", "geometry", gd.base_period, minimum=1),
            _int(g, "entry_spacing", "geometry", gd.entry_spacing, minimum=1))
    except ConfigurationError as exc:
        raise ScenarioError("geometry", str(exc)) from None

    contracts = _obj(d, "contracts", "")
    overrides = {}
    for name, spec in contracts.items():
        where = f"contracts.{name}"
        if name not in DEFAULT_BUDGETS:
            raise ScenarioError(where, "unknown contract (only PC, CP, BS, EC are configurable)")
        if not isinstance(spec, dict):
            raise ScenarioError(where, "expected object")
        _no_extra(spec, {"budget", "budget_min", "budget_max"}, where)
        overrides[name] = {k: _int(spec, k, where) for k in spec if spec[k] is not None}

    obs = _obj(d, "observer", "")
    _no_extra(obs, {"window", "safety_factor"}, "observer")
    sf = _ratio(obs.get("safety_factor", [1, 1]), "observer.safety_factor")
    try:
        observer = ObserverConfig(_int(obs, "window", "observer", 5, minimum=1), sf[0], sf[1])
    except UsageError as exc:
        raise ScenarioError("observer", str(exc)) from None

    levels = DEFAULT_SPEED_LEVELS
    if "speed_levels" in d:
        raw = d["speed_levels"]
        if not isinstance(raw, list) or not raw:
            raise ScenarioError("speed_levels", "expected non-empty list of [num, den]")
        levels = tuple(SpeedLevel(i, *_ratio(v, f"speed_levels[{i}]")) for i, v in enumerate(raw))
        try:
            validate_speed_levels(levels)
        except ConfigurationError as exc:
            raise ScenarioError("speed_levels", str(exc)) from None

    name = d.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("name", "expected string")

    scenario = Scenario(
        duration=duration, name=name, seed=seed, arrivals=arrivals, arrival_rate=rate,
        faults=[_fault(f, i) for i, f in enumerate(faults)], rm_enabled=rm_enabled,
        msg_latency=_int(d, "msg_latency", "", 1_000), geometry=geometry,
        components=_components(d), contract_overrides=overrides, observer=observer,
        speed_levels=levels, rm_tree=_rm_tree(d))
    try:
        for lv in scenario.speed_levels:
            end_to_end_budget(geometry, lv)
        tree = scenario.build_contract_tree()
    except ConfigurationError as exc:
        raise ScenarioError("geometry", str(exc)) from None
    if not tree.refinement_holds():
        raise ScenarioError("contracts", "initial budgets violate refinement")
    _validate_ownership(scenario)
    return scenario


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return scenario_from_dict(data)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads_scenario(fh.read())
