"""Influence diagrams with one binary utility node: types, validation, file I/O.

Tables are laid out row-major over parent instantiations with the last
declared parent varying fastest, the same order as
``itertools.product(*(range(k) for k in cards))``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterator, Mapping, Sequence

from .errors import ParseError, ValidationError
from .utility import EXPONENTIAL, LINEAR, UtilityFunction, UtilitySpec, local_risk_aversion

__all__ = [
    "CHANCE",
    "DECISION",
    "UTILITY",
    "UTILITY_STATES",
    "Variable",
    "InfluenceDiagram",
    "parse_diagram",
    "load_diagram",
    "serialize_diagram",
    "utilities_from_values",
    "local_risk_aversion",
    "instantiations",
]

CHANCE = "chance"
DECISION = "decision"
UTILITY = "utility"
UTILITY_STATES = ("u", "ubar")

PROB_TOL = 1e-9


def instantiations(cards: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """All joint state-index tuples, last position varying fastest."""
    return itertools.product(*(range(k) for k in cards))


def row_index(cards: Sequence[int], inst: Sequence[int]) -> int:
    idx = 0
    for k, s in zip(cards, inst):
        idx = idx * k + s
    return idx


@dataclass(frozen=True)
class Variable:
    id: str
    kind: str
    states: tuple[str, ...]
    parents: tuple[str, ...] = ()

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def state_index(self, label: str) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise ValidationError(f"unknown state {label!r}", node=self.id, invariant="state") from None


@dataclass(frozen=True, eq=False)
class InfluenceDiagram:
    """A validated influence diagram.

    ``cpts`` maps chance ids to rows of probabilities, ``availability`` maps
    decision ids to rows of 0/1 flags and ``values`` holds the value table of
    the single utility node. ``evidence`` maps chance ids to state indices.
    """

    name: str
    value_unit: str
    variables: tuple[Variable, ...]
    cpts: Mapping[str, tuple[tuple[float, ...], ...]]
    availability: Mapping[str, tuple[tuple[int, ...], ...]]
    values: tuple[float, ...]
    utility_spec: UtilitySpec
    evidence: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        _validate(self)

    def __eq__(self, other):
        if not isinstance(other, InfluenceDiagram):
            return NotImplemented
        return self.to_document() == other.to_document()

    def __hash__(self):
        return hash(json.dumps(self.to_document(), sort_keys=True))

    # -- lookups -----------------------------------------------------------
    @cached_property
    def _by_id(self) -> dict[str, Variable]:
        return {v.id: v for v in self.variables}

    def var(self, vid: str) -> Variable:
        try:
            return self._by_id[vid]
        except KeyError:
            raise ValidationError("no such variable", node=vid, invariant="reference") from None

    def __contains__(self, vid: str) -> bool:
        return vid in self._by_id

    def card(self, vid: str) -> int:
        return self.var(vid).cardinality

    def parent_cards(self, vid: str) -> tuple[int, ...]:
        return tuple(self.card(p) for p in self.var(vid).parents)

    def parent_instantiations(self, vid: str) -> list[tuple[int, ...]]:
        return list(instantiations(self.parent_cards(vid)))

    @property
    def chance_ids(self) -> list[str]:
        return [v.id for v in self.variables if v.kind == CHANCE]

    @cached_property
    def utility_node(self) -> Variable:
        return next(v for v in self.variables if v.kind == UTILITY)

    @cached_property
    def decision_order(self) -> tuple[str, ...]:
        """Decisions from first to last (by number of decision parents)."""
        decisions = [v for v in self.variables if v.kind == DECISION]
        decisions.sort(key=lambda d: sum(self.var(p).kind == DECISION for p in d.parents))
        return tuple(d.id for d in decisions)

    @cached_property
    def elimination_order(self) -> tuple[str, ...]:
        """Total order of chance and decision variables, outermost first.

        Chance variables observed before decision k are placed just after
        decision k-1; never-observed chance variables come last. Ties follow
        declaration order.
        """
        order: list[str] = []
        placed: set[str] = set()
        for d in self.decision_order:
            for v in self.variables:
                if v.kind == CHANCE and v.id in self.var(d).parents and v.id not in placed:
                    order.append(v.id)
                    placed.add(v.id)
            order.append(d)
            placed.add(d)
        order.extend(v.id for v in self.variables if v.kind == CHANCE and v.id not in placed)
        return tuple(order)

    @cached_property
    def utility_function(self) -> UtilityFunction:
        return self.utility_spec.resolve(self.values)

    def utilities(self) -> list[float]:
        return utilities_from_values(self.values, self.utility_function)

    @property
    def value_attributes(self) -> tuple[str, ...]:
        return self.utility_node.parents

    def value_of(self, inst: Mapping[str, int]) -> float:
        pa = tuple(inst[p] for p in self.value_attributes)
        return self.values[row_index(self.parent_cards(self.utility_node.id), pa)]

    def probability(self, vid: str, state: int, pa: Sequence[int]) -> float:
        return self.cpts[vid][row_index(self.parent_cards(vid), pa)][state]

    def available(self, did: str, alt: int, pa: Sequence[int]) -> int:
        return self.availability[did][row_index(self.parent_cards(did), pa)][alt]

    def descendants(self, vid: str) -> set[str]:
        children: dict[str, list[str]] = {v.id: [] for v in self.variables}
        for v in self.variables:
            for p in v.parents:
                children[p].append(v.id)
        seen: set[str] = set()
        stack = list(children[vid])
        while stack:
            c = stack.pop()
            if c not in seen:
                seen.add(c)
                stack.extend(children[c])
        return seen

    # -- derived diagrams ----------------------------------------------------
    def with_utility(self, spec: UtilitySpec) -> "InfluenceDiagram":
        return replace(self, utility_spec=spec)

    def with_risk_aversion(self, gamma: float) -> "InfluenceDiagram":
        """Same diagram, auto-normalized utility at a new risk aversion (0 = linear)."""
        if gamma == 0:
            return self.with_utility(UtilitySpec(LINEAR))
        return self.with_utility(UtilitySpec(EXPONENTIAL, risk_aversion=float(gamma)))

    def with_evidence(self, evidence: Mapping[str, str | int]) -> "InfluenceDiagram":
        ev = {}
        for k, s in evidence.items():
            ev[k] = s if isinstance(s, int) else self.var(k).state_index(s)
        return replace(self, evidence=ev)

    # -- serialization -------------------------------------------------------
    def to_document(self) -> dict[str, Any]:
        nodes = []
        for v in self.variables:
            if v.kind == CHANCE:
                nodes.append({"id": v.id, "kind": CHANCE, "states": list(v.states),
                              "parents": list(v.parents), "cpt": [list(r) for r in self.cpts[v.id]]})
            elif v.kind == DECISION:
                nodes.append({"id": v.id, "kind": DECISION, "alternatives": list(v.states),
                              "parents": list(v.parents),
                              "availability": [list(r) for r in self.availability[v.id]]})
            else:
                nodes.append({"id": v.id, "kind": UTILITY, "parents": list(v.parents),
                              "values": list(self.values)})
        doc = {"name": self.name, "value_unit": self.value_unit, "nodes": nodes,
               "utility_function": self.utility_spec.to_document()}
        if self.evidence:
            doc["evidence"] = {k: self.var(k).states[s] for k, s in self.evidence.items()}
        return doc


def utilities_from_values(values: Sequence[float], fn: UtilityFunction | UtilitySpec) -> list[float]:
    """theta_u for each value-table row; theta_ubar is ``1 - theta_u``."""
    if isinstance(fn, UtilitySpec):
        fn = fn.resolve(values)
    return [fn(v) for v in values]


# --------------------------------------------------------------------------
# validation


def _validate(d: InfluenceDiagram) -> None:
    ids = [v.id for v in d.variables]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ValidationError("duplicate id", node=sorted(dupes)[0], invariant="unique-id")
    by_id = {v.id: v for v in d.variables}

    utilities = [v for v in d.variables if v.kind == UTILITY]
    if len(utilities) != 1:
        raise ValidationError(f"expected exactly one utility node, found {len(utilities)}",
                              invariant="single-utility")
    for v in d.variables:
        if v.kind not in (CHANCE, DECISION, UTILITY):
            raise ValidationError(f"unknown kind {v.kind!r}", node=v.id, invariant="kind")
        if v.kind != UTILITY and len(v.states) < 2:
            raise ValidationError("needs at least two states", node=v.id, invariant="cardinality")
        if len(set(v.states)) != len(v.states):
            raise ValidationError("duplicate state label", node=v.id, invariant="cardinality")
        if len(set(v.parents)) != len(v.parents):
            raise ValidationError("duplicate parent", node=v.id, invariant="reference")
        for p in v.parents:
            if p not in by_id:
                raise ValidationError(f"unknown parent {p!r}", node=v.id, invariant="reference")
            if by_id[p].kind == UTILITY:
                raise ValidationError("the utility node cannot be a parent", node=v.id,
                                      invariant="reference")
    _check_acyclic(d.variables)

    for v in d.variables:
        rows = math.prod(by_id[p].cardinality for p in v.parents)
        if v.kind == CHANCE:
            table = d.cpts.get(v.id)
            if table is None:
                raise ValidationError("missing CPT", node=v.id, invariant="cpt")
            _check_shape(v, table, rows, v.cardinality, "cpt")
            for r, row in enumerate(table):
                if any(not (0.0 <= p <= 1.0) for p in row):
                    raise ValidationError(f"CPT row {r} has an entry outside [0, 1]", node=v.id,
                                          invariant="cpt-range")
                if abs(math.fsum(row) - 1.0) > PROB_TOL:
                    raise ValidationError(f"CPT row {r} sums to {math.fsum(row):.12g}", node=v.id,
                                          invariant="cpt-sum")
        elif v.kind == DECISION:
            table = d.availability.get(v.id)
            if table is None:
                raise ValidationError("missing availability table", node=v.id, invariant="availability")
            _check_shape(v, table, rows, v.cardinality, "availability")
            for r, row in enumerate(table):
                if any(a not in (0, 1) for a in row):
                    raise ValidationError(f"availability row {r} must be 0/1", node=v.id,
                                          invariant="availability")
                if not any(row):
                    raise ValidationError(f"availability row {r} has no alternative", node=v.id,
                                          invariant="availability")
        else:
            if len(d.values) != rows:
                raise ValidationError(f"value table has {len(d.values)} rows, expected {rows}",
                                      node=v.id, invariant="value-table")
            if any(not math.isfinite(x) for x in d.values):
                raise ValidationError("non-finite value", node=v.id, invariant="value-table")
    extra = set(d.cpts) - {v.id for v in d.variables if v.kind == CHANCE}
    if extra:
        raise ValidationError("CPT for a non-chance node", node=sorted(extra)[0], invariant="cpt")

    _check_decision_order(d, by_id)

    for k, s in d.evidence.items():
        if k not in by_id:
            raise ValidationError("evidence on unknown variable", node=k, invariant="evidence")
        if by_id[k].kind != CHANCE:
            raise ValidationError("evidence only on chance variables", node=k, invariant="evidence")
        if not 0 <= s < by_id[k].cardinality:
            raise ValidationError(f"evidence state {s} out of range", node=k, invariant="evidence")
    decision_ids = [v.id for v in d.variables if v.kind == DECISION]
    for k in d.evidence:
        for dec in decision_ids:
            if k in d.descendants(dec):
                raise ValidationError(f"evidence variable is responsive to decision {dec!r}",
                                      node=k, invariant="evidence")

    # resolving the utility function checks u(v) in (0, 1) for every entry
    spec = d.utility_spec
    if spec.kind not in (LINEAR, EXPONENTIAL):
        raise ValidationError(f"unknown utility type {spec.kind!r}", invariant="utility-function")
    if spec.kind == EXPONENTIAL and (spec.risk_aversion is None or not spec.risk_aversion > 0):
        raise ValidationError("exponential utility needs a positive risk_aversion",
                              invariant="utility-function")
    if (spec.u0 is None) != (spec.uinf is None):
        raise ValidationError("u0 and uinf must be given together", invariant="utility-function")
    d.utility_function  # noqa: B018


def _check_shape(v: Variable, table, rows: int, width: int, what: str) -> None:
    if len(table) != rows:
        raise ValidationError(f"{what} has {len(table)} rows, expected {rows}", node=v.id,
                              invariant=f"{what}-shape")
    for r, row in enumerate(table):
        if len(row) != width:
            raise ValidationError(f"{what} row {r} has {len(row)} entries, expected {width}",
                                  node=v.id, invariant=f"{what}-shape")


def _check_acyclic(variables: Sequence[Variable]) -> None:
    parents = {v.id: v.parents for v in variables}
    state: dict[str, int] = {}

    def visit(vid: str, path: list[str]):
        mark = state.get(vid)
        if mark == 1:
            raise ValidationError("directed cycle " + " -> ".join(path + [vid]), node=vid,
                                  invariant="acyclic")
        if mark == 2:
            return
        state[vid] = 1
        for p in parents[vid]:
            visit(p, path + [vid])
        state[vid] = 2

    for v in variables:
        visit(v.id, [])


def _check_decision_order(d: InfluenceDiagram, by_id: Mapping[str, Variable]) -> None:
    order = d.decision_order
    for k, did in enumerate(order):
        dec = by_id[did]
        earlier = order[:k]
        dec_parents = [p for p in dec.parents if by_id[p].kind == DECISION]
        if set(dec_parents) != set(earlier):
            raise ValidationError(
                "decisions must be totally ordered with every earlier decision a parent",
                node=did, invariant="total-order")
        if k:
            prev = by_id[order[k - 1]]
            missing = [p for p in prev.parents if p not in dec.parents]
            if missing:
                raise ValidationError(
                    f"no-forgetting violated: parent(s) {missing} of {prev.id!r} are not parents",
                    node=did, invariant="no-forgetting")
    for did in order:
        desc = d.descendants(did)
        for p in by_id[did].parents:
            if p in desc:
                raise ValidationError("information arc from a descendant", node=did,
                                      invariant="acyclic")


# --------------------------------------------------------------------------
# parsing


def _require(obj: Mapping, key: str, typ, locus: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", locus)
    val = obj[key]
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(f"field {key!r} must be a number", f"{locus}.{key}")
        return float(val)
    if not isinstance(val, typ):
        raise ParseError(f"field {key!r} must be {typ.__name__}", f"{locus}.{key}")
    return val


def _number_rows(rows, locus: str, *, flat: bool = False):
    if not isinstance(rows, list):
        raise ParseError("expected a list", locus)
    out = []
    for i, row in enumerate(rows):
        if flat:
            row = [row]
        if not isinstance(row, list):
            raise ParseError("expected a list of numbers", f"{locus}[{i}]")
        for j, x in enumerate(row):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise ParseError("expected a number", f"{locus}[{i}][{j}]" if not flat else f"{locus}[{i}]")
        out.append(tuple(row))
    return tuple(out)


def _str_list(obj: Mapping, key: str, locus: str, default=None) -> tuple[str, ...]:
    if key not in obj:
        if default is None:
            raise ParseError(f"missing field {key!r}", locus)
        return default
    val = obj[key]
    if not isinstance(val, list) or not all(isinstance(s, str) for s in val):
        raise ParseError(f"field {key!r} must be a list of strings", f"{locus}.{key}")
    return tuple(val)


def diagram_from_document(doc: Any) -> InfluenceDiagram:
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "$")
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ParseError("field 'name' must be str", "$.name")
    unit = doc.get("value_unit", "M$")
    if not isinstance(unit, str):
        raise ParseError("field 'value_unit' must be str", "$.value_unit")
    nodes = _require(doc, "nodes", list, "$")
    variables = []
    cpts: dict[str, tuple] = {}
    avail_raw: dict[str, tuple | None] = {}
    values = None
    for i, node in enumerate(nodes):
        locus = f"nodes[{i}]"
        if not isinstance(node, dict):
            raise ParseError("node must be an object", locus)
        vid = _require(node, "id", str, locus)
        kind = _require(node, "kind", str, locus)
        parents = _str_list(node, "parents", locus, default=())
        if kind == CHANCE:
            states = _str_list(node, "states", locus)
            cpts[vid] = tuple(tuple(float(x) for x in r)
                              for r in _number_rows(_require(node, "cpt", list, locus), f"{locus}.cpt"))
        elif kind == DECISION:
            states = _str_list(node, "alternatives", locus)
            if "availability" in node:
                avail_raw[vid] = tuple(tuple(int(x) if x in (0, 1) else x for x in r)
                                       for r in _number_rows(node["availability"], f"{locus}.availability"))
            else:
                avail_raw[vid] = None
        elif kind == UTILITY:
            states = UTILITY_STATES
            if values is not None:
                raise ValidationError("more than one utility node", node=vid, invariant="single-utility")
            values = tuple(float(r[0]) for r in _number_rows(_require(node, "values", list, locus),
                                                             f"{locus}.values", flat=True))
        else:
            raise ParseError(f"unknown kind {kind!r}", f"{locus}.kind")
        variables.append(Variable(vid, kind, states, parents))
    if values is None:
        raise ValidationError("diagram has no utility node", invariant="single-utility")

    by_id = {v.id: v for v in variables}
    availability = {}
    for vid, table in avail_raw.items():
        if table is None:
            v = by_id[vid]
            rows = 1
            for p in v.parents:
                if p not in by_id:
                    raise ValidationError(f"unknown parent {p!r}", node=vid, invariant="reference")
                rows *= len(by_id[p].states)
            table = tuple(tuple(1 for _ in v.states) for _ in range(rows))
        availability[vid] = table

    uf = _require(doc, "utility_function", dict, "$")
    kind = _require(uf, "type", str, "$.utility_function")
    gamma = None
    if kind == EXPONENTIAL:
        gamma = _require(uf, "risk_aversion", float, "$.utility_function")
    elif kind != LINEAR:
        raise ParseError(f"unknown utility type {kind!r}", "$.utility_function.type")
    u0 = _require(uf, "u0", float, "$.utility_function") if "u0" in uf else None
    uinf = _require(uf, "uinf", float, "$.utility_function") if "uinf" in uf else None
    spec = UtilitySpec(kind, gamma, u0, uinf)

    evidence = {}
    raw_ev = doc.get("evidence", {})
    if not isinstance(raw_ev, dict):
        raise ParseError("evidence must be an object", "$.evidence")
    for k, s in raw_ev.items():
        if not isinstance(s, str):
            raise ParseError("evidence state must be a string", f"$.evidence.{k}")
        if k not in by_id:
            raise ValidationError("evidence on unknown variable", node=k, invariant="evidence")
        evidence[k] = by_id[k].state_index(s)

    return InfluenceDiagram(name, unit, tuple(variables), cpts, availability, values, spec, evidence)


def parse_diagram(document: str) -> InfluenceDiagram:
    """Parse and validate a diagram file (JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return diagram_from_document(doc)


def load_diagram(path) -> InfluenceDiagram:
    with open(path, encoding="utf-8") as fh:
        return parse_diagram(fh.read())


def serialize_diagram(diagram: InfluenceDiagram) -> str:
    return json.dumps(diagram.to_document(), indent=2)
