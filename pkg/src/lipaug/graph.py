"""Computational graphs, the release operation, and Lipschitz augmentation.

A graph is a DAG of named nodes; every non-input node carries a composition
rule (a pure function of its predecessors' values, optionally with an exact
Jacobian companion).  ``release`` cuts a node free of its dependencies so it
becomes an input; plugging its original value back recovers the original
output.  ``lipschitz_augment`` builds, for a sequential net, the augmented
graph whose output multiplies the ramp loss's distance-from-1 by soft
indicators on every hidden-layer norm and every pairwise Jacobian-product
norm, which makes the output Lipschitz in every node with constants given by
``release_lipschitz_constants``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import soft_indicator
from .network import SmoothNet, forward_trace, ramp_loss

__all__ = [
    "Rule",
    "CompGraph",
    "AugmentationParams",
    "LipschitzConstants",
    "evaluate",
    "release",
    "check_forest_ordering",
    "sequential_graph",
    "lipschitz_augment",
    "augmented_loss",
    "release_lipschitz_constants",
    "op_norm",
]


def op_norm(a: np.ndarray) -> float:
    """Operator norm used by the augmentation plumbing (LAPACK SVD)."""
    return float(np.linalg.svd(a, compute_uv=False)[0])


@dataclass(frozen=True)
class Rule:
    """Composition rule: value from predecessor values, optional exact Jacobian."""

    fn: Callable
    jacobian: Optional[Callable] = None


class CompGraph:
    """Immutable DAG with per-node composition rules and one designated output.

    ``preds`` maps every node name to the (ordered) tuple of its direct
    predecessors; input nodes map to ().  ``dims`` gives each node's value
    shape.  On original construction the output must be the unique sink;
    released graphs pass the output through explicitly since cutting edges may
    orphan upstream nodes.
    """

    def __init__(self, preds, rules, dims, output=None):
        self.preds = {k: tuple(v) for k, v in preds.items()}
        self.rules = dict(rules)
        self.dims = {k: tuple(v) for k, v in dims.items()}
        names = set(self.preds)
        for name, ps in self.preds.items():
            for p in ps:
                if p not in names:
                    raise ValueError(f"node {name!r} depends on unknown node {p!r}")
        self.input_nodes = tuple(n for n in self.preds if not self.preds[n])
        for n in self.preds:
            if self.preds[n] and n not in self.rules:
                raise ValueError(f"non-input node {n!r} has no composition rule")
        self._order = self._topological_order()
        if output is None:
            succ_count = {n: 0 for n in self.preds}
            for ps in self.preds.values():
                for p in ps:
                    succ_count[p] += 1
            sinks = [n for n, c in succ_count.items() if c == 0]
            if len(sinks) != 1:
                raise ValueError(f"expected exactly one sink, found {sinks}")
            output = sinks[0]
        self.output_node = output

    def _topological_order(self):
        indeg = {n: len(ps) for n, ps in self.preds.items()}
        succ = {n: [] for n in self.preds}
        for n, ps in self.preds.items():
            for p in ps:
                succ[p].append(n)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop()
            order.append(n)
            for s in succ[n]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
        if len(order) != len(self.preds):
            raise ValueError("graph has a cycle")
        return order

    @property
    def internal_nodes(self):
        return tuple(
            n
            for n in self._order
            if self.preds[n] and n != self.output_node
        )


def evaluate(graph: CompGraph, inputs: dict) -> np.ndarray:
    """Topological evaluation; returns the output node's value."""
    values = {}
    for name in graph.input_nodes:
        if name not in inputs:
            raise ValueError(f"missing value for input node {name!r}")
        v = np.asarray(inputs[name], dtype=np.float64)
        if v.shape != graph.dims[name]:
            raise ValueError(
                f"input {name!r} has shape {v.shape}, expected {graph.dims[name]}"
            )
        values[name] = v
    for name in graph._order:
        if name in values:
            continue
        args = [values[p] for p in graph.preds[name]]
        values[name] = np.asarray(graph.rules[name].fn(*args), dtype=np.float64)
    return values[graph.output_node]


def release(graph: CompGraph, node: str) -> CompGraph:
    """Cut all inward edges of ``node``: it becomes an input of the new graph."""
    if node not in graph.preds:
        raise ValueError(f"unknown node {node!r}")
    if not graph.preds[node]:
        raise ValueError(f"node {node!r} is already an input node")
    preds = dict(graph.preds)
    preds[node] = ()
    rules = {k: v for k, v in graph.rules.items() if k != node}
    return CompGraph(preds, rules, graph.dims, output=graph.output_node)


def check_forest_ordering(graph: CompGraph, ordering) -> bool:
    """True iff ``ordering`` lists exactly the internal nodes and each one
    depends only on input nodes and earlier entries (in the original graph)."""
    ordering = list(ordering)
    for n in ordering:
        if n not in graph.preds:
            raise ValueError(f"unknown node {n!r} in ordering")
    if set(ordering) != set(graph.internal_nodes) or len(ordering) != len(
        graph.internal_nodes
    ):
        return False
    allowed = set(graph.input_nodes)
    for n in ordering:
        if not set(graph.preds[n]) <= allowed:
            return False
        allowed.add(n)
    return True


def _layer_rules(net: SmoothNet):
    """Composition rule (with exact Jacobian) for each layer 1..2r-1."""
    act = net.activation
    rules = []
    for j in range(1, net.num_layers + 1):
        if j % 2 == 1:
            w = net.weights[(j + 1) // 2 - 1]
            rules.append(
                Rule(
                    fn=lambda h, w=w: w @ h,
                    jacobian=lambda h, w=w: w,
                )
            )
        else:
            rules.append(
                Rule(
                    fn=act.fn,
                    jacobian=lambda h, d=act.deriv: np.diag(d(h)),
                )
            )
    return rules


def sequential_graph(net: SmoothNet) -> CompGraph:
    """Plain sequential graph computing the net's logits (output = last layer)."""
    q = net.num_layers
    rules = _layer_rules(net)
    preds = {"x": ()}
    dims = {"x": (net.input_dim,)}
    graph_rules = {}
    for j in range(1, q + 1):
        name = f"V{j}"
        preds[name] = ("x",) if j == 1 else (f"V{j - 1}",)
        dims[name] = (net.layer_dim(j),)
        graph_rules[name] = rules[j - 1]
    preds["O"] = tuple(f"V{j}" for j in range(1, q + 1))
    dims["O"] = (net.output_dim,)
    graph_rules["O"] = Rule(fn=lambda *vals: vals[-1])
    return CompGraph(preds, graph_rules, dims)


class AugmentationParams:
    """Thresholds defining the augmented loss.

    ``s[i-1]`` is the norm threshold for internal node i (1-based, +inf
    disables that indicator); ``kappa[i-1, j-1]`` is the threshold for the
    Jacobian product between layers i and j (i <= j).  The empty-product
    convention (j < i) is the constant 1 and is not stored.
    """

    def __init__(self, s, kappa):
        self.s = np.asarray(s, dtype=np.float64)
        self.kappa = np.asarray(kappa, dtype=np.float64)
        q = self.s.shape[0]
        if self.kappa.shape != (q, q):
            raise ValueError(f"kappa must be ({q}, {q}), got {self.kappa.shape}")
        if not np.all(self.s > 0.0):
            raise ValueError("all s thresholds must be strictly positive")
        iu = np.triu_indices(q)
        if not np.all(self.kappa[iu] > 0.0):
            raise ValueError("all kappa thresholds must be strictly positive")

    @property
    def q(self) -> int:
        return self.s.shape[0]

    @classmethod
    def infinite(cls, q: int) -> "AugmentationParams":
        """All indicators disabled: the augmented loss equals the plain loss."""
        return cls(np.full(q, np.inf), np.full((q, q), np.inf))

    def s_at(self, i: int) -> float:
        return float(self.s[i - 1])

    def kappa_between(self, frm: int, to: int) -> float:
        """kappa_{to <- frm}; 1 for inverted index pairs (to < frm)."""
        if to < frm:
            return 1.0
        return float(self.kappa[frm - 1, to - 1])


@dataclass
class LipschitzConstants:
    """Per-node Lipschitz constants of the augmented output after releasing the
    forest-ordering prefix ending at that node (1-based accessors)."""

    kappa_tilde_v: np.ndarray
    kappa_tilde_j: np.ndarray
    kappa_tilde_v_prime: np.ndarray

    def __post_init__(self):
        for arr in (self.kappa_tilde_v, self.kappa_tilde_j, self.kappa_tilde_v_prime):
            if np.any(np.isnan(arr)) or np.any(arr < 0.0):
                raise ValueError("Lipschitz constants must be nonnegative")

    def v(self, i: int) -> float:
        return float(self.kappa_tilde_v[i - 1])

    def j(self, i: int) -> float:
        return float(self.kappa_tilde_j[i - 1])

    def v_prime(self, i: int) -> float:
        return float(self.kappa_tilde_v_prime[i - 1])


def lipschitz_augment(
    net: SmoothNet, gamma: float, params: AugmentationParams
) -> CompGraph:
    """Augmented graph: layer nodes V_i, Jacobian nodes J_i, and an output rule
    that pulls the ramp loss toward 1 whenever a norm indicator trips.

    The graph takes two inputs: "x" (the example) and "y" (a length-1 vector
    holding the class index), since the ramp loss needs the label.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    q = net.num_layers
    if params.q != q:
        raise ValueError(f"params cover {params.q} nodes, net has {q} layers")
    rules = _layer_rules(net)

    preds = {"x": (), "y": ()}
    dims = {"x": (net.input_dim,), "y": (1,)}
    graph_rules = {}
    for j in range(1, q + 1):
        src = "x" if j == 1 else f"V{j - 1}"
        in_dim = net.layer_dim(j - 1)
        preds[f"V{j}"] = (src,)
        dims[f"V{j}"] = (net.layer_dim(j),)
        graph_rules[f"V{j}"] = rules[j - 1]
        preds[f"J{j}"] = (src,)
        dims[f"J{j}"] = (net.layer_dim(j), in_dim)
        graph_rules[f"J{j}"] = Rule(fn=rules[j - 1].jacobian)

    preds["O"] = (
        ("y",)
        + tuple(f"V{j}" for j in range(1, q + 1))
        + tuple(f"J{j}" for j in range(1, q + 1))
    )
    dims["O"] = (1,)

    def output_rule(yv, *rest):
        vs = rest[:q]
        ds = rest[q:]
        z = ramp_loss(vs[q - 1], int(yv[0]), gamma)
        prod = 1.0
        for i in range(1, q + 1):
            prod *= soft_indicator(
                float(np.linalg.norm(vs[i - 1])), params.s_at(i)
            )
        for i in range(1, q + 1):
            p = ds[i - 1]
            prod *= soft_indicator(op_norm(p), params.kappa_between(i, i))
            for j in range(i + 1, q + 1):
                p = ds[j - 1] @ p
                prod *= soft_indicator(op_norm(p), params.kappa_between(i, j))
        return np.array([(z - 1.0) * prod + 1.0])

    graph_rules["O"] = Rule(fn=output_rule)
    return CompGraph(preds, graph_rules, dims, output="O")


def augmented_loss(
    net: SmoothNet,
    x,
    y: int,
    gamma: float,
    params: AugmentationParams,
):
    """Value of the augmented loss at one example, plus every indicator value.

    Fast path over a forward trace; agrees with evaluating the graph from
    :func:`lipschitz_augment` to float precision.  Returns ``(value,
    indicators)`` where ``indicators`` maps ``("s", i)`` and
    ``("kappa", i, j)`` to the corresponding soft-indicator value.
    """
    q = net.num_layers
    if params.q != q:
        raise ValueError(f"params cover {params.q} nodes, net has {q} layers")
    trace = forward_trace(net, x)
    z = ramp_loss(trace.logits, y, gamma)
    indicators = {}
    prod = 1.0
    for i in range(1, q + 1):
        val = soft_indicator(
            float(np.linalg.norm(trace.layer_values[i])), params.s_at(i)
        )
        indicators[("s", i)] = val
        prod *= val
    for i in range(1, q + 1):
        for j in range(i, q + 1):
            val = soft_indicator(
                op_norm(trace.layer_jacobians[(i, j)]),
                params.kappa_between(i, j),
            )
            indicators[("kappa", i, j)] = val
            prod *= val
    return (z - 1.0) * prod + 1.0, indicators


def release_lipschitz_constants(
    net: SmoothNet,
    gamma: float,
    params: AugmentationParams,
    t=None,
) -> LipschitzConstants:
    """Lipschitz constants of the augmented output w.r.t. each released node.

    ``t`` is the per-node norm-threshold family entering the primed constants;
    it defaults to ``params.s``.  Summands whose indicator has an infinite
    threshold contribute nothing (the indicator is constant); a zero threshold
    is rejected.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    q = net.num_layers
    if params.q != q:
        raise ValueError(f"params cover {params.q} nodes, net has {q} layers")
    t = params.s if t is None else np.asarray(t, dtype=np.float64)
    kap = params.kappa_between

    # output-rule Lipschitz constants: only the last node feeds the ramp loss
    c = np.zeros(q + 1)
    c[q] = 1.0 / gamma
    # Jacobian-rule Lipschitz constants: activation layers bend, matrix layers don't
    kbar = np.zeros(q + 1)
    for j in range(2, q + 1, 2):
        kbar[j] = net.activation_deriv_lipschitz

    ktv = np.zeros(q)
    ktj = np.zeros(q)
    ktv_prime = np.zeros(q)
    for i in range(1, q + 1):
        total = 0.0
        for j in range(i, q + 1):
            if c[j] != 0.0:
                total += 3.0 * c[j] * kap(i + 1, j)
        for j in range(1, q + 1):
            for jp in range(j, q + 1):
                den = kap(j, jp)
                if math.isinf(den):
                    continue
                for ip in range(max(i + 1, j), jp + 1):
                    if kbar[ip] == 0.0:
                        continue
                    num = (
                        kbar[ip]
                        * kap(ip + 1, jp)
                        * kap(i + 1, ip - 1)
                        * kap(j, ip - 1)
                    )
                    total += 18.0 * num / den
        ktv[i - 1] = total

        total_j = 0.0
        for j in range(1, i + 1):
            for jp in range(i, q + 1):
                den = kap(j, jp)
                if math.isinf(den):
                    continue
                total_j += 4.0 * kap(i + 1, jp) * kap(j, i - 1) / den
        ktj[i - 1] = total_j

        extra = 0.0
        for j in range(i, q + 1):
            sj = float(t[j - 1])
            if math.isinf(sj):
                continue
            extra += kap(i + 1, j) / sj
        ktv_prime[i - 1] = ktv[i - 1] + extra

    return LipschitzConstants(ktv, ktj, ktv_prime)
