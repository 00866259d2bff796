"""Deduplicated AND-OR search graph over molecules and reactions.

Molecule nodes are OR nodes (any successful reaction proves them, as does
inventory membership); reaction nodes are AND nodes (every reactant must be
proved). A global molecule memory interns each molecule key into exactly one
node, so intermediates discovered under one target are shared by every other
path that needs them. Disabling the memory (``dedup=False``) reproduces the
tree-search baseline where every reactant occurrence gets a fresh node.

Success is the least fixpoint of the AND-OR recursion seeded by the
inventory, so cycles introduced by sharing can never prove themselves.
Historical cost of a node is the cheapest directed path from any target,
summing reaction costs along the way.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .molspace import Inventory, MoleculeId, Reaction

NodeId = int

INF = math.inf


class ContractViolation(RuntimeError):
    """An internal invariant of the search graph was broken."""


@dataclass
class MoleculeNode:
    id: NodeId
    molecule: MoleculeId
    open: bool
    success: bool
    hist_cost: float
    in_inventory: bool

    kind = "molecule"


@dataclass
class ReactionNode:
    id: NodeId
    reaction_cost: float
    success: bool
    hist_cost: float

    kind = "reaction"


Node = MoleculeNode | ReactionNode


class SearchGraph:
    """Bipartite directed AND-OR graph grown by expanding open molecules."""

    def __init__(self, dedup: bool = True):
        self.dedup = dedup
        self.nodes: list[Node] = []
        self.succ: list[list[NodeId]] = []
        self.pred: list[list[NodeId]] = []
        self.targets: list[NodeId] = []
        self.memory: dict[MoleculeId, NodeId] = {}

    # -- construction -----------------------------------------------------

    def _new_node(self, node: Node) -> NodeId:
        self.nodes.append(node)
        self.succ.append([])
        self.pred.append([])
        return node.id

    def _new_molecule(self, molecule: MoleculeId, inventory: Inventory,
                      hist_cost: float) -> NodeId:
        nid = len(self.nodes)
        in_inv = molecule in inventory
        self._new_node(MoleculeNode(
            id=nid, molecule=molecule, open=not in_inv, success=in_inv,
            hist_cost=hist_cost, in_inventory=in_inv,
        ))
        if self.dedup:
            self.memory[molecule] = nid
        return nid

    def _add_edge(self, src: NodeId, dst: NodeId) -> None:
        if self.nodes[src].kind == self.nodes[dst].kind:
            raise ContractViolation(f"edge {src}->{dst} is not bipartite")
        self.succ[src].append(dst)
        self.pred[dst].append(src)

    def add_target(self, molecule: MoleculeId, inventory: Inventory) -> NodeId:
        """Insert (or re-point at) *molecule* as a search target with cost 0."""
        if self.dedup and molecule in self.memory:
            nid = self.memory[molecule]
        else:
            nid = self._new_molecule(molecule, inventory, hist_cost=0.0)
        if nid not in self.targets:
            self.targets.append(nid)
        if self.nodes[nid].hist_cost > 0.0:
            self.nodes[nid].hist_cost = 0.0
            self._relax_from([nid])
        return nid

    def merge_expand(self, v: NodeId, reactions: Iterable[Reaction],
                     inventory: Inventory) -> set[NodeId]:
        """Expand open molecule node *v* with the oracle's reactions.

        One reaction node per reaction; reactant molecules are looked up in
        the memory first (graph mode) so nothing is duplicated. An empty
        reaction list closes *v* as a permanent dead end. Returns the set of
        node ids whose status may have changed; pass it to
        :meth:`propagate_update`.
        """
        node = self.nodes[v]
        if node.kind != "molecule" or not node.open:
            raise ContractViolation(f"node {v} is not an open molecule node")
        if not math.isfinite(node.hist_cost):
            raise ContractViolation(f"node {v} has no finite historical cost")
        node.open = False
        affected = {v}
        for rxn in reactions:
            if rxn.product != node.molecule:
                raise ContractViolation(
                    f"reaction product {rxn.product!r} does not match node "
                    f"molecule {node.molecule!r}"
                )
            rid = len(self.nodes)
            self._new_node(ReactionNode(
                id=rid, reaction_cost=rxn.cost, success=False,
                hist_cost=node.hist_cost + rxn.cost,
            ))
            self._add_edge(v, rid)
            for mol in sorted(rxn.reactants):
                if self.dedup and mol in self.memory:
                    mid = self.memory[mol]
                    cand = self.nodes[rid].hist_cost
                    if cand < self.nodes[mid].hist_cost:
                        self.nodes[mid].hist_cost = cand
                else:
                    mid = self._new_molecule(mol, inventory, self.nodes[rid].hist_cost)
                self._add_edge(rid, mid)
                affected.add(mid)
            affected.add(rid)
        return affected

    # -- incremental maintenance ------------------------------------------

    def _local_success(self, nid: NodeId) -> bool:
        node = self.nodes[nid]
        if node.kind == "reaction":
            children = self.succ[nid]
            if not children:
                raise ContractViolation(f"reaction node {nid} has no reactants")
            return all(self.nodes[c].success for c in children)
        return node.in_inventory or any(self.nodes[r].success for r in self.succ[nid])

    def propagate_update(self, affected: Iterable[NodeId]) -> None:
        """Bring success flags and historical costs back to fixpoint after an
        expansion, touching only the predecessor/successor closure of the
        affected set."""
        self._relax_from(affected)
        queue = deque(affected)
        queued = set(queue)
        while queue:
            nid = queue.popleft()
            queued.discard(nid)
            new = self._local_success(nid)
            node = self.nodes[nid]
            if new == node.success:
                continue
            if node.success and not new:
                raise ContractViolation(
                    f"success of node {nid} flipped true->false during propagation"
                )
            node.success = new
            for p in self.pred[nid]:
                if p not in queued:
                    queue.append(p)
                    queued.add(p)

    def _relax_from(self, seeds: Iterable[NodeId]) -> None:
        # historical cost only decreases; push decreases along successor edges
        queue = deque(seeds)
        queued = set(queue)
        while queue:
            nid = queue.popleft()
            queued.discard(nid)
            base = self.nodes[nid].hist_cost
            if not math.isfinite(base):
                continue
            for s in self.succ[nid]:
                child = self.nodes[s]
                cand = base + (child.reaction_cost if child.kind == "reaction" else 0.0)
                if cand < child.hist_cost:
                    child.hist_cost = cand
                    if s not in queued:
                        queue.append(s)
                        queued.add(s)

    # -- full recomputation (reference implementations) --------------------

    def recompute_success(self) -> None:
        """From-scratch least fixpoint: everything false except the inventory,
        then grow monotonically until stable."""
        for node in self.nodes:
            node.success = node.kind == "molecule" and node.in_inventory
        changed = True
        while changed:
            changed = False
            for node in self.nodes:
                if not node.success and self._local_success(node.id):
                    node.success = True
                    changed = True

    def recompute_hist_costs(self) -> None:
        """From-scratch shortest-path relaxation from the targets."""
        for node in self.nodes:
            node.hist_cost = INF
        for t in self.targets:
            self.nodes[t].hist_cost = 0.0
        self._relax_from(list(self.targets))

    # -- queries ------------------------------------------------------------

    def hist_cost(self, v: NodeId) -> float:
        """Cheapest directed path cost from any target to *v* (inf if none)."""
        return self.nodes[v].hist_cost

    def open_nodes(self) -> set[NodeId]:
        return {n.id for n in self.nodes if n.kind == "molecule" and n.open}

    def molecule_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "molecule")

    def reaction_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "reaction")

    def all_targets_successful(self) -> bool:
        return all(self.nodes[t].success for t in self.targets)

    def check_invariants(self) -> None:
        """Structural sanity sweep; raises ContractViolation on breakage."""
        seen: dict[MoleculeId, NodeId] = {}
        for node in self.nodes:
            for s in self.succ[node.id]:
                if self.nodes[s].kind == node.kind:
                    raise ContractViolation(f"edge {node.id}->{s} is not bipartite")
                if node.id not in self.pred[s]:
                    raise ContractViolation(f"edge {node.id}->{s} missing back-link")
            if node.kind == "reaction":
                if len(self.pred[node.id]) != 1:
                    raise ContractViolation(
                        f"reaction node {node.id} has {len(self.pred[node.id])} products"
                    )
                if not self.succ[node.id]:
                    raise ContractViolation(f"reaction node {node.id} has no reactants")
            else:
                if node.in_inventory and self.succ[node.id]:
                    raise ContractViolation(f"inventory node {node.id} was expanded")
                if node.open and self.succ[node.id]:
                    raise ContractViolation(f"open node {node.id} has successors")
                if self.dedup:
                    if node.molecule in seen:
                        raise ContractViolation(
                            f"molecule {node.molecule!r} duplicated at nodes "
                            f"{seen[node.molecule]} and {node.id}"
                        )
                    seen[node.molecule] = node.id
        if self.dedup and len(self.memory) != self.molecule_count():
            raise ContractViolation("molecule memory out of sync with node table")

    # -- serialization -------------------------------------------------------

    def snapshot(self, labels: dict[NodeId, int] | None = None) -> dict:
        """JSON-ready structural snapshot, optionally with open-node labels."""
        nodes = []
        for node in self.nodes:
            if not math.isfinite(node.hist_cost):
                raise ContractViolation(f"node {node.id} has non-finite hist_cost")
            if node.kind == "molecule":
                nodes.append({
                    "kind": "molecule", "key": node.molecule, "open": node.open,
                    "success": node.success, "hist_cost": node.hist_cost,
                    "in_inventory": node.in_inventory,
                })
            else:
                nodes.append({
                    "kind": "reaction", "cost": node.reaction_cost,
                    "success": node.success, "hist_cost": node.hist_cost,
                })
        edges = [[src, dst] for src in range(len(self.nodes)) for dst in self.succ[src]]
        snap = {
            "version": 1,
            "dedup": self.dedup,
            "nodes": nodes,
            "edges": edges,
            "targets": list(self.targets),
            "labels": None if labels is None else {str(k): int(v) for k, v in labels.items()},
        }
        return snap

    @classmethod
    def from_snapshot(cls, snap: dict) -> "SearchGraph":
        if snap.get("version") != 1:
            raise ValueError(f"unsupported snapshot version {snap.get('version')!r}")
        g = cls(dedup=bool(snap["dedup"]))
        for i, rec in enumerate(snap["nodes"]):
            if rec["kind"] == "molecule":
                g._new_node(MoleculeNode(
                    id=i, molecule=rec["key"], open=rec["open"],
                    success=rec["success"], hist_cost=rec["hist_cost"],
                    in_inventory=rec["in_inventory"],
                ))
                if g.dedup:
                    g.memory[rec["key"]] = i
            else:
                g._new_node(ReactionNode(
                    id=i, reaction_cost=rec["cost"], success=rec["success"],
                    hist_cost=rec["hist_cost"],
                ))
        for src, dst in snap["edges"]:
            g._add_edge(src, dst)
        g.targets = list(snap["targets"])
        return g


def snapshot_to_json(snap: dict) -> str:
    """Canonical text encoding of a snapshot (bit-exact round trip)."""
    return json.dumps(snap, sort_keys=True, separators=(",", ":"))


def snapshot_from_json(text: str) -> dict:
    return json.loads(text)
