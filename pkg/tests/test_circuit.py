import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcirc.circuit import (INDICATOR, MAX, PARAMETER, PRODUCT, SUM, circuit_stats, circuit_to_document,
                           compile_diagram, prune_circuit)
from dcirc.model import CHANCE
from dcirc.oracle import RandomLimits, joint_table, random_diagram
from dcirc.sweep import E, E_PRIME, leaf_assignment, leaf_vector, sweep_down, sweep_up

from conftest import coin


def test_single_coin_structure():
    c = compile_diagram(coin(p=0.3), prune=False)
    kinds = [n.kind for n in c.nodes]
    # two levels of summation: one over x at the root, one over u per x
    assert kinds.count(SUM) == 3
    assert _sum_depth(c, c.root) == 2
    assert kinds.count(MAX) == 0
    assert kinds.count(INDICATOR) == 4
    assert kinds.count(PARAMETER) == 6
    root = c.nodes[c.root]
    assert root.kind == SUM and len(root.children) == 2
    # each root term is lambda_x * theta_x * (sum over u of lambda_u * theta_u|x)
    for s, term in enumerate(root.children):
        node = c.nodes[term]
        assert node.kind == PRODUCT
        leaves = {c.nodes[k].payload for k in node.children if c.nodes[k].kind != SUM}
        assert leaves == {("X", s), ("X", s, ())}
        inner = [c.nodes[k] for k in node.children if c.nodes[k].kind == SUM][0]
        pays = [{c.nodes[g].payload for g in c.nodes[t].children} for t in inner.children]
        assert pays == [{("U", 0), ("U", 0, (s,))}, {("U", 1), ("U", 1, (s,))}]


def test_no_decision_diagram_has_no_max(oil_field):
    assert circuit_stats(compile_diagram(oil_field))["nodes"][MAX] == 0


def test_wildcatter_shape(wildcatter):
    unpruned = compile_diagram(wildcatter, prune=False)
    maxes = [n for n in unpruned.nodes if n.kind == MAX]
    assert sorted(n.payload.decision for n in maxes) == ["T", "W", "W", "W", "W"]
    root = unpruned.nodes[unpruned.root]
    assert root.kind == MAX and root.payload.decision == "T"
    # one parameter leaf per family instantiation
    payloads = [n.payload for n in unpruned.nodes if n.kind == PARAMETER]
    assert len(payloads) == len(set(payloads))


def test_pruning_drops_impossible_report_branch(wildcatter):
    unpruned = compile_diagram(wildcatter, prune=False)
    pruned = compile_diagram(wildcatter)
    assert pruned.size < unpruned.size
    t_notest = wildcatter.var("T").states.index("notest")
    r_positive = wildcatter.var("R").states.index("positive")
    assert ("W", (t_notest, r_positive)) in unpruned.decisions
    assert ("W", (t_notest, r_positive)) not in pruned.decisions
    assert ("R", r_positive, (t_notest, 0)) not in pruned.parameters


def test_pruning_without_zeros_is_identity(oil_field):
    c = compile_diagram(oil_field, prune=False)
    p = prune_circuit(c, oil_field)
    assert p.same_structure(c)


def test_stats_edges_equal_child_counts(wildcatter):
    for prune in (True, False):
        c = compile_diagram(wildcatter, prune=prune)
        stats = circuit_stats(c)
        assert stats["edges"] == sum(len(n.children) for n in c.nodes) == c.size
        assert sum(stats["nodes"].values()) == stats["node_count"] == len(c.nodes)


def test_empty_evidence_single_node_has_no_max():
    assert circuit_stats(compile_diagram(coin()))["nodes"][MAX] == 0


@given(st.integers(0, 10**6))
def test_topological_order_and_single_root(seed):
    c = compile_diagram(random_diagram(seed))
    parents = [0] * len(c.nodes)
    for n in c.nodes:
        assert all(k < n.id for k in n.children)
        for k in n.children:
            parents[k] += 1
    assert [i for i, p in enumerate(parents) if p == 0] == [c.root]


@given(st.integers(0, 10**6))
def test_compilation_is_deterministic(seed):
    d = random_diagram(seed, RandomLimits(zero_probability=0.3))
    assert compile_diagram(d).same_structure(compile_diagram(d))
    assert compile_diagram(d, prune=False).same_structure(compile_diagram(d, prune=False))


@given(st.integers(0, 10**6))
def test_every_family_leaf_present_before_pruning(seed):
    d = random_diagram(seed)
    c = compile_diagram(d, prune=False)
    for v in d.variables:
        for s in range(v.cardinality):
            assert (v.id, s) in c.indicators
            for pa in d.parent_instantiations(v.id):
                assert (v.id, s, pa) in c.parameters


def _mlf(diagram, lam):
    """Brute-force multilinear function over all joint instantiations."""
    table = joint_table(diagram.with_evidence({}))
    total = 0.0
    for row, m, v in zip(table.states, table.mass, table.value):
        weight = m
        for col, s in zip(table.columns, row):
            weight *= lam[(col, int(s))]
        theta = diagram.utility_function(v)
        total += weight * (lam[("U", 0)] * theta + lam[("U", 1)] * (1 - theta))
    return total


@given(st.integers(0, 10**6), st.data())
def test_mlf_equivalence_without_decisions(seed, data):
    limits = RandomLimits(max_chance=3, max_states=2, max_decisions=0, max_joint=12)
    d = random_diagram(seed, limits)
    c = compile_diagram(d, prune=False)
    lam = {k: float(data.draw(st.sampled_from([0, 1]))) for k in c.indicators}
    assign = leaf_assignment(d, E)
    assign.indicators.update(lam)
    got = sweep_up(c, assign).root_value
    assert abs(got - _mlf(d, lam)) < 1e-12


def test_random_deterministic_cpt_prune_equivalence():
    rng = np.random.default_rng(7)
    limits = RandomLimits(max_chance=3, max_decisions=1, zero_probability=1.0)
    tested = 0
    for seed in range(40):
        d = random_diagram(seed, limits)
        if len(d.variables) != 4:
            continue
        pruned, full = compile_diagram(d), compile_diagram(d, prune=False)
        for _ in range(100):
            assign = leaf_assignment(d, E_PRIME)
            for k in assign.indicators:
                assign.indicators[k] = float(rng.integers(0, 2))
            a = sweep_down(pruned, sweep_up(pruned, assign))
            b = sweep_down(full, sweep_up(full, assign))
            assert abs(a.root_value - b.root_value) <= 1e-12
            for key, nid in pruned.parameters.items():
                assert abs(a.derivative[nid] - b.derivative[full.parameters[key]]) <= 1e-12
            for key, nid in pruned.indicators.items():
                assert abs(a.derivative[nid] - b.derivative[full.indicators[key]]) <= 1e-12
        tested += 1
    assert tested >= 3


def _below(c, nid):
    seen, stack = set(), [nid]
    while stack:
        k = stack.pop()
        if k not in seen:
            seen.add(k)
            stack.extend(c.nodes[k].children)
    return seen


def _sum_depth(c, nid):
    n = c.nodes[nid]
    if not n.children:
        return 0
    return (n.kind == SUM) + max(_sum_depth(c, k) for k in n.children)


@given(st.integers(0, 10**6))
def test_decision_order_soundness(seed):
    """Under a max node for D only D and later variables carry indicators, each fully summed."""
    d = random_diagram(seed)
    c = compile_diagram(d, prune=False)
    order = d.elimination_order
    for nid in c.max_nodes:
        dec = c.nodes[nid].payload.decision
        later = set(order[order.index(dec):]) | {d.utility_node.id}
        below = [c.nodes[k].payload for k in _below(c, nid) if c.nodes[k].kind == INDICATOR]
        assert {v for v, _s in below} <= later
        assert not {v for v, _s in below} & set(d.var(dec).parents)
        for v in {v for v, _s in below}:
            assert {s for w, s in below if w == v} == set(range(d.card(v)))


def test_dump_format(wildcatter):
    c = compile_diagram(wildcatter)
    doc = json.loads(json.dumps(circuit_to_document(c, wildcatter)))
    assert set(doc) == {"nodes", "root"}
    assert doc["root"] == c.root
    for n, raw in zip(doc["nodes"], c.nodes):
        assert set(n) == {"id", "kind", "payload", "children"}
        assert n["children"] == list(raw.children)
    maxes = [n for n in doc["nodes"] if n["kind"] == MAX]
    assert {"decision", "parents", "alternatives"} <= set(maxes[0]["payload"])
