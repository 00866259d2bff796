"""Planning loop over the AND-OR search graph.

Each iteration selects the cheapest open molecule node under the active
cost model, expands it through the oracle, merges the reactions into the
graph, and propagates success and cost updates. The loop stops when the
budget is spent, every target is proved, or nothing is left to expand.
Batch planning clusters targets by feature similarity and plans each batch
in one shared graph so common intermediates are expanded once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .costmodel import CostModel, ZeroCost
from .molspace import ExpansionOracle, Inventory, MoleculeId, features
from .searchgraph import ContractViolation, NodeId, SearchGraph


class PlanningError(RuntimeError):
    """A planning call could not run to completion."""


@dataclass(frozen=True)
class PlanConfig:
    """Knobs of a planning run; batch fields only matter for batch_plan."""

    budget: int = 100
    k: int = 50
    mode: str = "graph"
    batch_size: int = 1
    clusters: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.mode not in ("graph", "tree"):
            raise ValueError(f"mode must be 'graph' or 'tree', got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clusters < 1:
            raise ValueError(f"clusters must be >= 1, got {self.clusters}")


@dataclass
class RouteReaction:
    cost: float
    children: list["RouteTree"]


@dataclass
class RouteTree:
    """A concrete synthesis plan: every leaf is an inventory molecule and
    every internal node carries its chosen reaction."""

    molecule: MoleculeId
    reaction: RouteReaction | None = None

    def to_dict(self) -> dict:
        if self.reaction is None:
            return {"molecule": self.molecule, "reaction": None}
        return {
            "molecule": self.molecule,
            "reaction": {
                "cost": self.reaction.cost,
                "children": [c.to_dict() for c in self.reaction.children],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteTree":
        rxn = d.get("reaction")
        if rxn is None:
            return cls(d["molecule"], None)
        return cls(d["molecule"], RouteReaction(
            cost=rxn["cost"],
            children=[cls.from_dict(c) for c in rxn["children"]],
        ))


@dataclass(frozen=True)
class RouteStats:
    length: int
    cost: float


def route_stats(route: RouteTree) -> RouteStats:
    """Number of reactions and total reaction cost of a route."""
    if route.reaction is None:
        return RouteStats(0, 0.0)
    length, cost = 1, route.reaction.cost
    for child in route.reaction.children:
        sub = route_stats(child)
        length += sub.length
        cost += sub.cost
    return RouteStats(length, cost)


def validate_route(route: RouteTree, inventory: Inventory) -> None:
    """Raise if any leaf is not purchasable or any cost is not positive."""
    if route.reaction is None:
        if route.molecule not in inventory:
            raise ValueError(f"route leaf {route.molecule!r} is not in the inventory")
        return
    if not route.reaction.cost > 0.0:
        raise ValueError(f"route reaction at {route.molecule!r} has non-positive cost")
    if not route.reaction.children:
        raise ValueError(f"route reaction at {route.molecule!r} has no reactants")
    for child in route.reaction.children:
        validate_route(child, inventory)


@dataclass
class TargetResult:
    molecule: MoleculeId
    success: bool
    first_success_iteration: int | None
    route: RouteTree | None

    def to_dict(self) -> dict:
        return {
            "molecule": self.molecule,
            "success": self.success,
            "first_success_iteration": self.first_success_iteration,
            "route": None if self.route is None else self.route.to_dict(),
        }


@dataclass
class TraceRecord:
    """Per-iteration event emitted by the planning loop."""

    iteration: int
    expanded: MoleculeId
    molecule_nodes: int
    reaction_nodes: int
    successes: tuple[bool, ...]


@dataclass
class PlanResult:
    targets: list[TargetResult]
    iterations: int
    molecule_nodes: int
    reaction_nodes: int
    mode: str
    trace: list[TraceRecord] = field(default_factory=list, repr=False)

    @property
    def all_success(self) -> bool:
        return all(t.success for t in self.targets)

    def to_dict(self) -> dict:
        return {
            "targets": [t.to_dict() for t in self.targets],
            "totals": {
                "iterations": self.iterations,
                "molecule_nodes": self.molecule_nodes,
                "reaction_nodes": self.reaction_nodes,
            },
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlanResult":
        targets = [
            TargetResult(
                molecule=t["molecule"], success=t["success"],
                first_success_iteration=t["first_success_iteration"],
                route=None if t["route"] is None else RouteTree.from_dict(t["route"]),
            )
            for t in d["targets"]
        ]
        totals = d["totals"]
        return cls(targets=targets, iterations=totals["iterations"],
                   molecule_nodes=totals["molecule_nodes"],
                   reaction_nodes=totals["reaction_nodes"], mode=d["mode"])


def select_next(graph: SearchGraph, cost_model: CostModel) -> NodeId:
    """Open molecule node with the lowest total cost; ties break toward the
    lowest node id. Calling this with no open nodes is a contract error."""
    costs = cost_model.open_costs(graph)
    if not costs:
        raise ContractViolation("select_next called with no open nodes")
    return min(costs.items(), key=lambda item: (item[1], item[0]))[0]


def plan(targets: list[str], oracle: ExpansionOracle, inventory: Inventory,
         cfg: PlanConfig, cost_model: CostModel | None = None,
         on_iteration=None) -> PlanResult:
    """Run the planning loop for one (possibly multi-target) graph.

    Targets are canonicalized and deduplicated up front. The loop keeps
    running until every target is proved, so later targets still benefit
    from expansions made after earlier ones succeed.
    """
    if not targets:
        raise ValueError("plan needs at least one target")
    cost_model = cost_model if cost_model is not None else ZeroCost()
    canon: list[str] = []
    for raw in targets:
        key = oracle.canonical(raw)
        if key not in canon:
            canon.append(key)
    graph = SearchGraph(dedup=cfg.mode == "graph")
    tids = [graph.add_target(key, inventory) for key in canon]
    first: dict[NodeId, int] = {
        t: 0 for t in tids if graph.nodes[t].success
    }
    iterations = 0
    trace: list[TraceRecord] = []
    while not graph.all_targets_successful() and iterations < cfg.budget:
        opens = graph.open_nodes()
        if not opens:
            break
        v = select_next(graph, cost_model)
        molecule = graph.nodes[v].molecule
        try:
            reactions = oracle.expand(molecule, cfg.k)
        except Exception as exc:
            raise PlanningError(f"oracle failed expanding {molecule!r}: {exc}") from exc
        affected = graph.merge_expand(v, reactions, inventory)
        graph.propagate_update(affected)
        iterations += 1
        for t in tids:
            if t not in first and graph.nodes[t].success:
                first[t] = iterations
        record = TraceRecord(
            iteration=iterations, expanded=molecule,
            molecule_nodes=graph.molecule_count(),
            reaction_nodes=graph.reaction_count(),
            successes=tuple(graph.nodes[t].success for t in tids),
        )
        trace.append(record)
        if on_iteration is not None:
            on_iteration(record)
    graph.check_invariants()
    results = []
    for key, t in zip(canon, tids):
        success = graph.nodes[t].success
        results.append(TargetResult(
            molecule=key, success=success,
            first_success_iteration=first.get(t),
            route=extract_route(graph, t) if success else None,
        ))
    return PlanResult(
        targets=results, iterations=iterations,
        molecule_nodes=graph.molecule_count(),
        reaction_nodes=graph.reaction_count(),
        mode=cfg.mode, trace=trace,
    )


def derivation_costs(graph: SearchGraph) -> dict[NodeId, float]:
    """Minimal total reaction cost proving each successful node from the
    inventory, by monotone value iteration over the successful subgraph."""
    best: dict[NodeId, float] = {}
    for node in graph.nodes:
        if node.kind == "molecule" and node.in_inventory:
            best[node.id] = 0.0
    successful = [n for n in graph.nodes if n.success]
    for _ in range(len(successful) + 1):
        changed = False
        for node in successful:
            if node.kind == "reaction":
                children = graph.succ[node.id]
                if all(c in best for c in children):
                    val = node.reaction_cost + sum(best[c] for c in children)
                else:
                    continue
            elif node.in_inventory:
                continue
            else:
                vals = [best[r] for r in graph.succ[node.id] if r in best]
                if not vals:
                    continue
                val = min(vals)
            if val < best.get(node.id, math.inf):
                best[node.id] = val
                changed = True
        if not changed:
            return best
    raise ContractViolation("derivation-cost iteration failed to converge")


def extract_route(graph: SearchGraph, target: NodeId) -> RouteTree:
    """Cheapest proof tree below a successful molecule node.

    At each molecule the successful reaction with the lowest derivation
    cost is chosen; positive costs make those choices strictly decreasing,
    so the descent cannot revisit the current path. The path set is still
    tracked and any candidate that would close a cycle is skipped.
    """
    root = graph.nodes[target]
    if root.kind != "molecule" or not root.success:
        raise PlanningError(f"node {target} is not a successful molecule node")
    best = derivation_costs(graph)

    def build(nid: NodeId, path: frozenset[NodeId]) -> RouteTree:
        node = graph.nodes[nid]
        if node.in_inventory:
            return RouteTree(node.molecule, None)
        extended = path | {nid}
        options = sorted(
            (best[r], r) for r in graph.succ[nid]
            if graph.nodes[r].success and r in best
        )
        for _, rid in options:
            children = graph.succ[rid]
            if any(c in extended for c in children):
                continue
            return RouteTree(node.molecule, RouteReaction(
                cost=graph.nodes[rid].reaction_cost,
                children=[build(c, extended) for c in children],
            ))
        raise ContractViolation(
            f"no acyclic successful reaction under molecule node {nid}"
        )

    return build(target, frozenset())


def kmeans(points: np.ndarray, k: int, seed: int = 0,
           max_iterations: int = 100) -> np.ndarray:
    """Lloyd's algorithm on real vectors; returns a cluster id per point.

    Initial centroids are distinct points sampled with the seed (falling
    back to repeats only when fewer distinct points exist than clusters);
    assignment ties and empty clusters resolve deterministically.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"kmeans expects a 2-D point array, got shape {pts.shape}")
    n = pts.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"kmeans needs 1 <= k <= {n} clusters, got {k}")
    rng = np.random.default_rng(seed)
    distinct = np.unique(pts, axis=0)
    if len(distinct) >= k:
        centroids = distinct[rng.choice(len(distinct), size=k, replace=False)]
    else:
        extra = rng.choice(len(distinct), size=k - len(distinct), replace=True)
        centroids = np.concatenate([distinct, distinct[extra]])
    assign: np.ndarray | None = None
    for _ in range(max_iterations):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return assign


def batch_plan(targets: list[str], oracle: ExpansionOracle, inventory: Inventory,
               cfg: PlanConfig, cost_model: CostModel | None = None,
               bits: int = 2048, on_iteration=None) -> list[PlanResult]:
    """Cluster targets, slice each cluster into batches, and plan every
    batch in one shared graph with budget scaled by the batch's size."""
    if not targets:
        raise ValueError("batch_plan needs at least one target")
    canon: list[str] = []
    for raw in targets:
        key = oracle.canonical(raw)
        if key not in canon:
            canon.append(key)
    if cfg.clusters > len(canon):
        raise ValueError(
            f"cannot form {cfg.clusters} clusters from {len(canon)} targets"
        )
    feats = np.stack([features(t, bits) for t in canon])
    assign = kmeans(feats, cfg.clusters, cfg.seed)
    results = []
    for cluster in range(cfg.clusters):
        members = [t for t, a in zip(canon, assign) if a == cluster]
        for start in range(0, len(members), cfg.batch_size):
            chunk = members[start:start + cfg.batch_size]
            chunk_cfg = replace(cfg, budget=cfg.budget * len(chunk))
            results.append(plan(chunk, oracle, inventory, chunk_cfg, cost_model,
                                on_iteration))
    return results
