"""Cost models that rank open molecule nodes for expansion.

Every variant prices a node as historical cost plus a heuristic term:
zero for uninformed (uniform-cost) search, a small feature regressor
predicting remaining route cost, or the negative log of the policy
network's normalized score.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from . import policygnn
from .molspace import features
from .numerics import AdamState, Tensor, relu, tmean, zero_grads
from .searchgraph import NodeId, SearchGraph

VARIANTS = ("zero", "value_net", "gnn")


class CostModel:
    """Interface: a total cost per open molecule node; lower expands first."""

    variant: str = "abstract"

    def open_costs(self, graph: SearchGraph) -> dict[NodeId, float]:
        """Total cost for every open molecule node of the graph."""
        raise NotImplementedError

    def total_cost(self, graph: SearchGraph, v: NodeId) -> float:
        node = graph.nodes[v]
        if node.kind != "molecule" or not node.open:
            raise ValueError(f"node {v} is not an open molecule node")
        return self.open_costs(graph)[v]

    def save(self, path) -> None:
        raise ValueError(f"cost model {self.variant!r} has nothing to save")


class ZeroCost(CostModel):
    """No heuristic: pure historical cost, i.e. uniform-cost expansion."""

    variant = "zero"

    def open_costs(self, graph: SearchGraph) -> dict[NodeId, float]:
        return {v: graph.nodes[v].hist_cost for v in graph.open_nodes()}


class ValueNetCost(CostModel):
    """Two-layer regressor on molecule features predicting remaining route
    cost; the prediction is added to the historical cost."""

    variant = "value_net"

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray,
                 b2: np.ndarray, bits: int):
        self.w1, self.b1, self.w2, self.b2 = (np.asarray(a, dtype=np.float64)
                                              for a in (w1, b1, w2, b2))
        self.bits = bits

    @classmethod
    def zeros(cls, bits: int = 2048, hidden: int = 64) -> "ValueNetCost":
        return cls(np.zeros((bits, hidden)), np.zeros(hidden),
                   np.zeros((hidden, 1)), np.zeros(1), bits)

    def heuristic(self, molecule: str) -> float:
        x = features(molecule, self.bits)
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        return (h @ self.w2 + self.b2).item()

    def open_costs(self, graph: SearchGraph) -> dict[NodeId, float]:
        return {
            v: graph.nodes[v].hist_cost + self.heuristic(graph.nodes[v].molecule)
            for v in graph.open_nodes()
        }

    def save(self, path) -> None:
        hyper = {"variant": "value_net", "bits": self.bits,
                 "hidden": int(self.w1.shape[1])}
        nm.save_weights(path, [("w1", self.w1), ("b1", self.b1),
                               ("w2", self.w2), ("b2", self.b2)], hyper)

    @classmethod
    def load(cls, path) -> "ValueNetCost":
        arrays, hyper = nm.load_weights(path)
        if hyper.get("variant") != "value_net":
            raise ValueError(f"{path}: not a value-net checkpoint")
        return cls(arrays["w1"], arrays["b1"], arrays["w2"], arrays["b2"],
                   int(hyper["bits"]))


def remaining_cost_pairs(routes) -> list[tuple[str, float]]:
    """(molecule, remaining synthesis cost) for every node of each route;
    leaves cost nothing, internal nodes cost their chosen subtree."""
    pairs: list[tuple[str, float]] = []

    def walk(tree) -> float:
        if tree.reaction is None:
            pairs.append((tree.molecule, 0.0))
            return 0.0
        total = tree.reaction.cost + sum(walk(c) for c in tree.reaction.children)
        pairs.append((tree.molecule, total))
        return total

    for route in routes:
        walk(route)
    return pairs


def train_value_net(routes, bits: int = 2048, hidden: int = 64,
                    epochs: int = 200, lr: float = 1e-2,
                    seed: int = 0) -> ValueNetCost:
    """Fit the regressor on remaining-cost pairs harvested from routes."""
    pairs = remaining_cost_pairs(routes)
    if not pairs:
        raise ValueError("no routes to train the value net on")
    x = Tensor(np.stack([features(m, bits) for m, _ in pairs]))
    y = Tensor(np.array([[c] for _, c in pairs]))
    rng = np.random.default_rng(seed)
    w1 = Tensor(nm.kaiming_uniform(rng, bits, hidden), requires_grad=True)
    b1 = Tensor(np.zeros(hidden), requires_grad=True)
    w2 = Tensor(nm.kaiming_uniform(rng, hidden, 1), requires_grad=True)
    b2 = Tensor(np.zeros(1), requires_grad=True)
    params = [w1, b1, w2, b2]
    adam = AdamState(params, lr=lr)
    for _ in range(epochs):
        zero_grads(params)
        pred = relu(x @ w1 + b1) @ w2 + b2
        err = pred - y
        tmean(err * err).backward()
        adam.step()
    return ValueNetCost(w1.data, b1.data, w2.data, b2.data, bits)


class GnnCost(CostModel):
    """Policy-network guidance: heuristic is -lambda * ln(normalized score),
    with scores computed once per call for all open nodes together."""

    variant = "gnn"

    def __init__(self, params: policygnn.GnnParameters, lam: float = 1.0):
        if lam <= 0.0:
            raise ValueError(f"guidance weight lambda must be > 0, got {lam}")
        self.params = params
        self.lam = lam

    def scores(self, graph: SearchGraph) -> dict[NodeId, float]:
        return policygnn.score(graph.snapshot(), self.params).normalized

    def open_costs(self, graph: SearchGraph) -> dict[NodeId, float]:
        scores = self.scores(graph)
        return {
            v: graph.nodes[v].hist_cost - self.lam * math.log(s)
            for v, s in scores.items()
        }

    def save(self, path) -> None:
        self.params.save(path)

    @classmethod
    def load(cls, path, lam: float = 1.0) -> "GnnCost":
        return cls(policygnn.GnnParameters.load(path), lam)


def score_open_nodes(cost_model: CostModel, graph: SearchGraph) -> dict[NodeId, float]:
    """Normalized selection scores; only meaningful for the gnn variant."""
    if not isinstance(cost_model, GnnCost):
        raise ValueError(
            f"cost model {cost_model.variant!r} has no normalized scores"
        )
    return cost_model.scores(graph)


def make_cost_model(variant: str, checkpoint=None, lam: float = 1.0) -> CostModel:
    """Build a cost model from a CLI-style variant name and checkpoint."""
    if variant == "zero":
        return ZeroCost()
    if variant == "value_net":
        if checkpoint is None:
            raise ValueError("value_net cost model needs a checkpoint file")
        return ValueNetCost.load(checkpoint)
    if variant == "gnn":
        if checkpoint is None:
            raise ValueError("gnn cost model needs a checkpoint file")
        return GnnCost.load(checkpoint, lam)
    raise ValueError(f"unknown cost model variant {variant!r} (expected one of {VARIANTS})")
