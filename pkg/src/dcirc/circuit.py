"""Compile influence diagrams into decision circuits.

A decision circuit is an arithmetic circuit whose internal nodes are sums,
products and maximizations. Compilation conditions on the variables of the
diagram's elimination order from the outside in (decisions become max
nodes, chance variables sum nodes) and memoizes subcircuits on the part of
the current instantiation that later families still depend on, so identical
subproblems are built once.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

from .model import CHANCE, DECISION, UTILITY_STATES, InfluenceDiagram

CONSTANT = "constant"
INDICATOR = "indicator"
PARAMETER = "parameter"
SUM = "sum"
PRODUCT = "product"
MAX = "max"

KIND_CODES = {CONSTANT: 0, INDICATOR: 1, PARAMETER: 2, SUM: 3, PRODUCT: 4, MAX: 5}

# (variable id, state index, parent-instantiation state indices)
ParamKey = tuple[str, int, tuple[int, ...]]
IndicatorKey = tuple[str, int]


@dataclass(frozen=True)
class MaxPayload:
    decision: str
    parents: tuple[int, ...]
    alternatives: tuple[int, ...]
    thetas: tuple[int, ...]
    lambdas: tuple[int, ...]


@dataclass(frozen=True)
class CircuitNode:
    id: int
    kind: str
    children: tuple[int, ...] = ()
    payload: Any = None


@dataclass(frozen=True, eq=False)
class DecisionCircuit:
    nodes: tuple[CircuitNode, ...]
    root: int
    indicators: Mapping[IndicatorKey, int]
    parameters: Mapping[ParamKey, int]
    decisions: Mapping[tuple[str, tuple[int, ...]], int]
    forced: Mapping[tuple[str, tuple[int, ...]], int] = field(default_factory=dict)
    pruned: bool = False

    @property
    def size(self) -> int:
        """Number of edges."""
        return sum(len(n.children) for n in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def kind_codes(self) -> list[int]:
        return [KIND_CODES[n.kind] for n in self.nodes]

    @cached_property
    def child_lists(self) -> list[tuple[int, ...]]:
        return [n.children for n in self.nodes]

    @cached_property
    def max_nodes(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == MAX]

    def same_structure(self, other: "DecisionCircuit") -> bool:
        return self.nodes == other.nodes and self.root == other.root


# --------------------------------------------------------------------------
# compilation


class _Builder:
    def __init__(self):
        self.nodes: list[CircuitNode] = []
        self.indicators: dict[IndicatorKey, int] = {}
        self.parameters: dict[ParamKey, int] = {}
        self.decisions: dict[tuple[str, tuple[int, ...]], int] = {}

    def add(self, kind: str, children=(), payload=None) -> int:
        nid = len(self.nodes)
        self.nodes.append(CircuitNode(nid, kind, tuple(children), payload))
        return nid

    def indicator(self, var: str, state: int) -> int:
        key = (var, state)
        if key not in self.indicators:
            self.indicators[key] = self.add(INDICATOR, payload=key)
        return self.indicators[key]

    def parameter(self, var: str, state: int, pa: tuple[int, ...]) -> int:
        key = (var, state, pa)
        if key not in self.parameters:
            self.parameters[key] = self.add(PARAMETER, payload=key)
        return self.parameters[key]


def compile_diagram(diagram: InfluenceDiagram, prune: bool = True) -> DecisionCircuit:
    """Compile ``diagram``; with ``prune`` the structural-zero pass is applied."""
    circuit = _compile(diagram)
    return prune_circuit(circuit, diagram) if prune else circuit


def _compile(diagram: InfluenceDiagram) -> DecisionCircuit:
    order = diagram.elimination_order
    n = len(order)
    pos = {v: i for i, v in enumerate(order)}
    upar = diagram.utility_node.parents

    # completion level of each family: the position of its last member
    families: list[tuple[str, tuple[str, ...], int]] = []
    for vid in order:
        members = (vid,) + diagram.var(vid).parents
        families.append((vid, members, max(pos[m] for m in members)))
    completing: list[list[str]] = [[] for _ in range(n)]
    for vid, _members, level in families:
        if diagram.var(vid).kind == CHANCE:
            completing[level].append(vid)

    relevant: list[tuple[int, ...]] = []
    for k in range(n + 1):
        rel = {pos[p] for p in upar if pos[p] < k}
        for _vid, members, level in families:
            if level >= k:
                rel.update(pos[m] for m in members if pos[m] < k)
        relevant.append(tuple(sorted(rel)))

    b = _Builder()
    memo: dict[tuple, int] = {}

    def family_inst(vid: str, inst: list[int]) -> tuple[int, ...]:
        return tuple(inst[pos[p]] for p in diagram.var(vid).parents)

    def build(k: int, inst: list[int]) -> int:
        key = (k, tuple(inst[j] for j in relevant[k]))
        hit = memo.get(key)
        if hit is not None:
            return hit
        if k == n:
            pa = tuple(inst[pos[p]] for p in upar)
            uid = diagram.utility_node.id
            terms = [b.add(PRODUCT, (b.indicator(uid, s), b.parameter(uid, s, pa)))
                     for s in range(len(UTILITY_STATES))]
            nid = b.add(SUM, terms)
        else:
            vid = order[k]
            var = diagram.var(vid)
            terms, thetas, lambdas = [], [], []
            for s in range(var.cardinality):
                inst.append(s)
                factors = [b.indicator(vid, s)]
                if var.kind == DECISION:
                    factors.append(b.parameter(vid, s, family_inst(vid, inst)))
                    thetas.append(factors[-1])
                    lambdas.append(factors[0])
                for cid in completing[k]:
                    factors.append(b.parameter(cid, inst[pos[cid]], family_inst(cid, inst)))
                factors.append(build(k + 1, inst))
                inst.pop()
                terms.append(b.add(PRODUCT, factors))
            if var.kind == DECISION:
                pa = family_inst(vid, inst)
                payload = MaxPayload(vid, pa, tuple(range(var.cardinality)), tuple(thetas), tuple(lambdas))
                nid = b.add(MAX, terms, payload)
                b.decisions[(vid, pa)] = nid
            else:
                nid = b.add(SUM, terms)
        memo[key] = nid
        return nid

    root = build(0, [])
    return DecisionCircuit(tuple(b.nodes), root, b.indicators, b.parameters, b.decisions)


# --------------------------------------------------------------------------
# pruning

_ZERO = -1


def _structural_zero(diagram: InfluenceDiagram, key: ParamKey) -> bool:
    vid, s, pa = key
    kind = diagram.var(vid).kind
    if kind == CHANCE:
        return diagram.probability(vid, s, pa) == 0.0
    if kind == DECISION:
        return diagram.available(vid, s, pa) == 0
    return False


def prune_circuit(circuit: DecisionCircuit, diagram: InfluenceDiagram) -> DecisionCircuit:
    """Remove every subcircuit multiplied by a structurally zero parameter.

    Products with a zero factor vanish, sums and maxes drop vanished children
    and nodes left with a single child are replaced by that child. A max node
    collapsed this way records its surviving alternative in ``forced``.
    """
    mapped: list[int | tuple] = []
    forced: dict[tuple[str, tuple[int, ...]], int] = {}
    # first pass: old id -> either _ZERO, ("old", id) leaf reuse or a new spec
    new_nodes: list[tuple[str, tuple[int, ...], Any]] = []

    def emit(kind, children=(), payload=None) -> int:
        new_nodes.append((kind, tuple(children), payload))
        return len(new_nodes) - 1

    for node in circuit.nodes:
        if node.kind == PARAMETER:
            mapped.append(_ZERO if _structural_zero(diagram, node.payload) else emit(PARAMETER, (), node.payload))
        elif node.kind == CONSTANT:
            mapped.append(_ZERO if node.payload == 0 else emit(CONSTANT, (), node.payload))
        elif node.kind == INDICATOR:
            mapped.append(emit(INDICATOR, (), node.payload))
        elif node.kind == PRODUCT:
            kids = [mapped[c] for c in node.children]
            if _ZERO in kids:
                mapped.append(_ZERO)
                continue
            kids = [c for c in kids if not (new_nodes[c][0] == CONSTANT and new_nodes[c][2] == 1)]
            if not kids:
                mapped.append(emit(CONSTANT, (), 1.0))
            elif len(kids) == 1:
                mapped.append(kids[0])
            else:
                mapped.append(emit(PRODUCT, kids))
        elif node.kind == SUM:
            kids = [mapped[c] for c in node.children if mapped[c] != _ZERO]
            if not kids:
                mapped.append(_ZERO)
            elif len(kids) == 1:
                mapped.append(kids[0])
            else:
                mapped.append(emit(SUM, kids))
        else:
            p: MaxPayload = node.payload
            keep = [i for i, c in enumerate(node.children) if mapped[c] != _ZERO]
            if not keep:
                mapped.append(_ZERO)
            elif len(keep) == 1:
                forced[(p.decision, p.parents)] = p.alternatives[keep[0]]
                mapped.append(mapped[node.children[keep[0]]])
            else:
                payload = (p, keep)
                mapped.append(emit(MAX, [mapped[node.children[i]] for i in keep], payload))
        # leaves referenced by max payloads are re-resolved after compaction

    root = mapped[circuit.root]
    if root == _ZERO:
        root = emit(CONSTANT, (), 0.0)

    # compaction: keep nodes reachable from the root, preserving order
    reach = [False] * len(new_nodes)
    reach[root] = True
    for i in range(len(new_nodes) - 1, -1, -1):
        if reach[i]:
            for c in new_nodes[i][1]:
                reach[c] = True
    renum: dict[int, int] = {}
    nodes: list[CircuitNode] = []
    indicators: dict = {}
    parameters: dict = {}
    for i, (kind, kids, payload) in enumerate(new_nodes):
        if not reach[i]:
            continue
        nid = len(nodes)
        renum[i] = nid
        nodes.append(CircuitNode(nid, kind, tuple(renum[c] for c in kids), payload))
        if kind == INDICATOR:
            indicators[payload] = nid
        elif kind == PARAMETER:
            parameters[payload] = nid

    decisions = {}
    for idx, node in enumerate(nodes):
        if node.kind != MAX:
            continue
        p, keep = node.payload
        thetas = tuple(parameters[circuit.nodes[p.thetas[i]].payload] for i in keep)
        lambdas = tuple(indicators[circuit.nodes[p.lambdas[i]].payload] for i in keep)
        payload = MaxPayload(p.decision, p.parents, tuple(p.alternatives[i] for i in keep), thetas, lambdas)
        nodes[idx] = CircuitNode(node.id, MAX, node.children, payload)
        decisions[(p.decision, p.parents)] = node.id

    return DecisionCircuit(tuple(nodes), renum[root], indicators, parameters, decisions,
                           forced=forced, pruned=True)


# --------------------------------------------------------------------------
# inspection


def circuit_stats(circuit: DecisionCircuit) -> dict[str, Any]:
    counts = Counter(n.kind for n in circuit.nodes)
    depth = [0] * len(circuit.nodes)
    for n in circuit.nodes:
        if n.children:
            depth[n.id] = 1 + max(depth[c] for c in n.children)
    return {
        "nodes": {k: counts.get(k, 0) for k in KIND_CODES},
        "node_count": len(circuit.nodes),
        "edges": circuit.size,
        "depth": depth[circuit.root],
    }


def _labels(diagram: InfluenceDiagram, vid: str, pa: tuple[int, ...]) -> dict[str, str]:
    return {p: diagram.var(p).states[s] for p, s in zip(diagram.var(vid).parents, pa)}


def _payload_document(diagram: InfluenceDiagram, node: CircuitNode):
    if node.kind == CONSTANT:
        return node.payload
    if node.kind == INDICATOR:
        vid, s = node.payload
        return {"variable": vid, "state": diagram.var(vid).states[s]}
    if node.kind == PARAMETER:
        vid, s, pa = node.payload
        return {"variable": vid, "state": diagram.var(vid).states[s], "parents": _labels(diagram, vid, pa)}
    if node.kind == MAX:
        p: MaxPayload = node.payload
        var = diagram.var(p.decision)
        return {"decision": p.decision, "parents": _labels(diagram, p.decision, p.parents),
                "alternatives": [var.states[a] for a in p.alternatives]}
    return None


def circuit_to_document(circuit: DecisionCircuit, diagram: InfluenceDiagram) -> dict[str, Any]:
    return {
        "nodes": [{"id": n.id, "kind": n.kind, "payload": _payload_document(diagram, n),
                   "children": list(n.children)} for n in circuit.nodes],
        "root": circuit.root,
    }


def dump_circuit(circuit: DecisionCircuit, diagram: InfluenceDiagram) -> str:
    return json.dumps(circuit_to_document(circuit, diagram), indent=1)
