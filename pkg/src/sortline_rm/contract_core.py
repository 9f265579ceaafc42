"""Parametric latency contracts, refinement checking and budget reallocation.

All durations are integer microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from .errors import ConfigurationError, UsageError


@dataclass
class LatencyContract:
    """Assume-guarantee pair whose guarantee is ``response <= budget``.

    ``budget`` is the only field that changes at runtime. ``budget_max=None``
    means "bounded by the parent node's current budget".
    """

    id: str
    component: Optional[str]
    assumption: str = "input_valid"
    budget: int = 0
    budget_min: int = 0
    budget_max: Optional[int] = None

    def __post_init__(self):
        if self.budget < 0 or self.budget_min < 0:
            raise ConfigurationError(f"contract {self.id}: negative duration")
        if self.budget < self.budget_min:
            raise ConfigurationError(
                f"contract {self.id}: budget {self.budget} < budget_min {self.budget_min}")
        if self.budget_max is not None and self.budget > self.budget_max:
            raise ConfigurationError(
                f"contract {self.id}: budget {self.budget} > budget_max {self.budget_max}")


@dataclass
class ContractNode:
    contract: LatencyContract
    children: list = field(default_factory=list)
    owner_rm: str = ""

    @property
    def id(self) -> str:
        return self.contract.id


@dataclass(frozen=True)
class Measurement:
    contract_id: str
    job_id: object
    start: int
    end: int
    assumption_held: bool = True

    def __post_init__(self):
        if self.end < self.start:
            raise UsageError(f"measurement end {self.end} precedes start {self.start}")

    @property
    def response(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Satisfied:
    pass


@dataclass(frozen=True)
class GuaranteeViolated:
    excess: int


@dataclass(frozen=True)
class AssumptionViolated:
    pass


EvalResult = Union[Satisfied, GuaranteeViolated, AssumptionViolated]


@dataclass(frozen=True)
class Infeasible:
    """Returned by :func:`reallocate` when no budget assignment fits."""

    required: int


def evaluate(contract: LatencyContract, m: Measurement) -> EvalResult:
    """Check one measurement against the contract.

    A failed assumption excuses the component; otherwise the bound is
    inclusive (``response == budget`` satisfies).
    """
    if m.contract_id != contract.id:
        raise UsageError(f"measurement for {m.contract_id!r} evaluated against {contract.id!r}")
    if not m.assumption_held:
        return AssumptionViolated()
    excess = m.response - contract.budget
    if excess > 0:
        return GuaranteeViolated(excess)
    return Satisfied()


def slack(contract: LatencyContract, observed_worst: int) -> int:
    return contract.budget - observed_worst


def check_refinement(node: ContractNode) -> bool:
    """Children of a pipeline node compose additively: sum must fit the parent."""
    if not node.children:
        raise UsageError(f"node {node.id} has no children")
    return sum(c.contract.budget for c in node.children) <= node.contract.budget


def reallocate(parent_budget: int, demands: Sequence[tuple]) -> Union[list, Infeasible]:
    """Redistribute ``parent_budget`` over children given their demands.

    ``demands`` holds ``(contract_id, demand, budget_min, budget_max)`` tuples;
    ``budget_max`` may be None (no bound beyond the parent). Each child first
    receives ``max(demand, budget_min)``; the residual is then split equally,
    capped at each ``budget_max``, and leftover microseconds from integer
    division go one each to the uncapped children in ascending id order.

    Returns ``[(contract_id, budget), ...]`` in input order, or
    :class:`Infeasible` when the floors cannot fit.
    """
    if not demands:
        raise UsageError("reallocate needs at least one demand")
    ids = [d[0] for d in demands]
    if len(set(ids)) != len(ids):
        raise UsageError("duplicate contract ids in demands")

    floor_, cap = {}, {}
    for cid, demand, bmin, bmax in demands:
        if demand < 0:
            raise UsageError(f"negative demand for {cid}")
        hi = parent_budget if bmax is None else min(bmax, parent_budget)
        floor_[cid] = max(demand, bmin)
        cap[cid] = hi
    total = sum(floor_.values())
    required = sum(d[1] for d in demands)
    if total > parent_budget or any(floor_[c] > cap[c] for c in ids):
        return Infeasible(required=max(required, total))

    budgets = dict(floor_)
    residual = parent_budget - total
    order = sorted(ids)
    while residual > 0:
        active = [c for c in order if budgets[c] < cap[c]]
        if not active:
            break
        share = residual // len(active)
        if share == 0:
            for c in active[:residual]:
                budgets[c] += 1
            residual = 0
            break
        for c in active:
            give = min(share, cap[c] - budgets[c])
            budgets[c] += give
            residual -= give
    return [(c, budgets[c]) for c in ids]


class ContractTree:
    """Registry over a forest of contract nodes.

    The tree shape is fixed at construction; budgets change through
    :meth:`set_budget`.
    """

    def __init__(self, roots: Sequence[ContractNode]):
        self.roots = list(roots)
        self._nodes: dict = {}
        self._parent: dict = {}
        for root in self.roots:
            self._index(root, None)

    def _index(self, node, parent):
        if node.id in self._nodes:
            raise ConfigurationError(f"contract {node.id} appears twice in the hierarchy")
        self._nodes[node.id] = node
        self._parent[node.id] = parent
        for child in node.children:
            self._index(child, node)

    def __contains__(self, cid) -> bool:
        return cid in self._nodes

    def __iter__(self) -> Iterator[ContractNode]:
        return iter(self._nodes.values())

    def node(self, cid) -> ContractNode:
        return self._nodes[cid]

    def contract(self, cid) -> LatencyContract:
        return self._nodes[cid].contract

    def parent(self, cid) -> Optional[ContractNode]:
        return self._parent[cid]

    def by_component(self, component) -> Optional[LatencyContract]:
        for node in self._nodes.values():
            if node.contract.component == component:
                return node.contract
        return None

    def subtree_ids(self, cid) -> list:
        out, stack = [], [self._nodes[cid]]
        while stack:
            n = stack.pop()
            out.append(n.id)
            stack.extend(reversed(n.children))
        return out

    def effective_max(self, cid) -> int:
        c = self.contract(cid)
        parent = self.parent(cid)
        if c.budget_max is not None:
            return c.budget_max
        return parent.contract.budget if parent is not None else c.budget

    def set_budget(self, cid, budget: int) -> int:
        """Set a contract budget; returns the previous value."""
        c = self.contract(cid)
        if budget < c.budget_min:
            raise UsageError(f"{cid}: budget {budget} below minimum {c.budget_min}")
        if c.budget_max is not None and budget > c.budget_max:
            raise UsageError(f"{cid}: budget {budget} above maximum {c.budget_max}")
        old, c.budget = c.budget, budget
        return old

    def refinement_holds(self) -> bool:
        return all(check_refinement(n) for n in self._nodes.values() if n.children)

    def snapshot(self) -> dict:
        return {cid: n.contract.budget for cid, n in sorted(self._nodes.items())}
