"""Upward (evaluation) and downward (differentiation) sweeps over a circuit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .circuit import DecisionCircuit, IndicatorKey, MaxPayload, ParamKey
from .errors import UndefinedConditionalError
from .model import CHANCE, DECISION, InfluenceDiagram

E_PRIME = "e_prime"
E = "e"

_SUM, _PROD, _MAX = 3, 4, 5

# relative gap below which two alternatives count as tied; keeps the
# lowest-index choice stable against rounding in equivalent subcircuits
TIE_TOL = 1e-12


@dataclass
class LeafAssignment:
    """Values for every indicator and parameter leaf of a diagram."""

    indicators: dict[IndicatorKey, float]
    parameters: dict[ParamKey, float]
    mode: str = E_PRIME

    def copy(self) -> "LeafAssignment":
        return LeafAssignment(dict(self.indicators), dict(self.parameters), self.mode)


@dataclass(frozen=True)
class Strategy:
    """One policy per decision: parent instantiation -> alternative index."""

    policies: Mapping[str, Mapping[tuple[int, ...], int]]

    def choice(self, decision: str, pa: tuple[int, ...]) -> int:
        return self.policies[decision][pa]

    def with_policy(self, decision: str, policy: Mapping[tuple[int, ...], int]) -> "Strategy":
        merged = dict(self.policies)
        merged[decision] = dict(self.policies[decision]) | dict(policy)
        return Strategy(merged)

    def key(self) -> tuple:
        return tuple((d, tuple(sorted(p.items()))) for d, p in sorted(self.policies.items()))

    def __eq__(self, other):
        return isinstance(other, Strategy) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def rows(self, diagram: InfluenceDiagram) -> Iterator[tuple[str, dict[str, str], str]]:
        for d in diagram.decision_order:
            var = diagram.var(d)
            for pa in diagram.parent_instantiations(d):
                labels = {p: diagram.var(p).states[s] for p, s in zip(var.parents, pa)}
                yield d, labels, var.states[self.policies[d][pa]]

    def to_document(self, diagram: InfluenceDiagram) -> dict[str, list]:
        doc: dict[str, list] = {}
        for d, labels, alt in self.rows(diagram):
            doc.setdefault(d, []).append({"parents": labels, "alternative": alt})
        return doc

    def describe(self, diagram: InfluenceDiagram) -> list[str]:
        lines = []
        for d, labels, alt in self.rows(diagram):
            cond = ", ".join(f"{p}={s}" for p, s in labels.items())
            lines.append(f"{d} | {cond}: {alt}" if cond else f"{d}: {alt}")
        return lines


@dataclass
class SweepWorkspace:
    circuit: DecisionCircuit
    value: list[float]
    mode: str = E_PRIME
    derivative: list[float] | None = None
    chosen: dict[int, int] = field(default_factory=dict)
    ties: list[int] = field(default_factory=list)
    optimized: bool = False

    @property
    def root_value(self) -> float:
        return self.value[self.circuit.root]

    def _derivs(self) -> list[float]:
        if self.derivative is None:
            raise RuntimeError("downward sweep has not been run on this workspace")
        return self.derivative

    def indicator_derivative(self, var: str, state: int) -> float:
        nid = self.circuit.indicators.get((var, state))
        return 0.0 if nid is None else self._derivs()[nid]

    def parameter_derivative(self, key: ParamKey) -> float:
        nid = self.circuit.parameters.get(key)
        return 0.0 if nid is None else self._derivs()[nid]

    def parameter_derivatives(self) -> dict[ParamKey, float]:
        d = self._derivs()
        return {k: d[nid] for k, nid in self.circuit.parameters.items()}

    def indicator_derivatives(self) -> dict[IndicatorKey, float]:
        d = self._derivs()
        return {k: d[nid] for k, nid in self.circuit.indicators.items()}


def leaf_assignment(diagram: InfluenceDiagram, mode: str = E_PRIME, strategy: Strategy | None = None,
                    utilities: Sequence[float] | None = None) -> LeafAssignment:
    """Assignment for evidence ``e'`` (``mode=E_PRIME``) or ``e`` (``mode=E``).

    Decision parameters carry availability flags, or the 0/1 policy of
    ``strategy`` when one is given.
    """
    indicators: dict[IndicatorKey, float] = {}
    parameters: dict[ParamKey, float] = {}
    for var in diagram.variables:
        if var.kind == CHANCE:
            observed = diagram.evidence.get(var.id)
            for s in range(var.cardinality):
                indicators[(var.id, s)] = 1.0 if observed is None or observed == s else 0.0
            for r, pa in enumerate(diagram.parent_instantiations(var.id)):
                for s, p in enumerate(diagram.cpts[var.id][r]):
                    parameters[(var.id, s, pa)] = p
        elif var.kind == DECISION:
            for s in range(var.cardinality):
                indicators[(var.id, s)] = 1.0
            for r, pa in enumerate(diagram.parent_instantiations(var.id)):
                for s, a in enumerate(diagram.availability[var.id][r]):
                    if strategy is not None:
                        a = 1.0 if strategy.choice(var.id, pa) == s else 0.0
                    parameters[(var.id, s, pa)] = float(a)
        else:
            indicators[(var.id, 0)] = 1.0
            indicators[(var.id, 1)] = 1.0 if mode == E else 0.0
            thetas = diagram.utilities() if utilities is None else utilities
            for pa, th in zip(diagram.parent_instantiations(var.id), thetas):
                parameters[(var.id, 0, pa)] = th
                parameters[(var.id, 1, pa)] = 1.0 - th
    return LeafAssignment(indicators, parameters, mode)


def leaf_vector(circuit: DecisionCircuit, assignment: LeafAssignment) -> list[float]:
    vals = [0.0] * len(circuit.nodes)
    for key, nid in circuit.indicators.items():
        vals[nid] = assignment.indicators[key]
    for key, nid in circuit.parameters.items():
        vals[nid] = assignment.parameters[key]
    for n in circuit.nodes:
        if n.kind == "constant":
            vals[n.id] = float(n.payload)
    return vals


def sweep_up(circuit: DecisionCircuit, assignment: LeafAssignment | Sequence[float],
             optimize: bool = False) -> SweepWorkspace:
    """Evaluate every node bottom-up.

    With ``optimize`` each max node keeps its best child (lowest alternative
    index among children within ``TIE_TOL`` of the best) and the decision parameters of the other alternatives are
    zeroed in the workspace, so the workspace holds the strategy-fixed
    polynomial. Without it, max nodes are evaluated as sums over children,
    which is exact when the decision parameters encode a strategy.
    """
    if isinstance(assignment, LeafAssignment):
        mode = assignment.mode
        val = leaf_vector(circuit, assignment)
    else:
        mode = E_PRIME
        val = list(assignment)
    ws = SweepWorkspace(circuit, val, mode, optimized=optimize)
    kinds = circuit.kind_codes
    children = circuit.child_lists
    nodes = circuit.nodes
    for i, k in enumerate(kinds):
        if k == _SUM:
            val[i] = sum([val[c] for c in children[i]])
        elif k == _PROD:
            p = 1
            for c in children[i]:
                p *= val[c]
            val[i] = p
        elif k == _MAX:
            ch = children[i]
            if not optimize:
                val[i] = sum([val[c] for c in ch])
                continue
            pl: MaxPayload = nodes[i].payload
            cands = [j for j in range(len(ch)) if val[pl.lambdas[j]] != 0.0 and val[pl.thetas[j]] != 0.0]
            if not cands:
                cands = list(range(len(ch)))
            top = max(val[ch[j]] for j in cands)
            near = [j for j in cands if top - val[ch[j]] <= TIE_TOL * abs(top)]
            best = near[0]
            if len(near) > 1:
                ws.ties.append(i)
            for j in range(len(ch)):
                if j != best:
                    val[pl.thetas[j]] = 0.0
                    val[ch[j]] = 0.0
            ws.chosen[i] = best
            val[i] = val[ch[best]]
    return ws


def sweep_down(circuit: DecisionCircuit, ws: SweepWorkspace) -> SweepWorkspace:
    """Accumulate d(root)/d(node) for every node, parents before children.

    Max nodes pass their derivative through as sums do. Products use the
    count of zero-valued children so structural zeros stay exact.
    """
    val = ws.value
    der = [0.0] * len(val)
    der[circuit.root] = 1.0
    kinds = circuit.kind_codes
    children = circuit.child_lists
    for i in range(len(val) - 1, -1, -1):
        d = der[i]
        if d == 0.0:
            continue
        k = kinds[i]
        if k == _SUM or k == _MAX:
            for c in children[i]:
                der[c] += d
        elif k == _PROD:
            ch = children[i]
            zeros = 0
            prod = 1.0
            for c in ch:
                v = val[c]
                if v == 0.0:
                    zeros += 1
                else:
                    prod *= v
            if zeros == 0:
                for c in ch:
                    der[c] += d * prod / val[c]
            elif zeros == 1:
                for c in ch:
                    if val[c] == 0.0:
                        der[c] += d * prod
    ws.derivative = der
    return ws


def extract_strategy(ws: SweepWorkspace, diagram: InfluenceDiagram) -> Strategy:
    """Policy tables from an optimizing sweep.

    Instantiations without a max node (collapsed by pruning, or pruned away
    as impossible) get the forced alternative or the lowest available one.
    """
    if not ws.optimized:
        raise ValueError("strategy extraction needs an optimizing upward sweep")
    circuit = ws.circuit
    policies: dict[str, dict[tuple[int, ...], int]] = {}
    for d in diagram.decision_order:
        table = {}
        for r, pa in enumerate(diagram.parent_instantiations(d)):
            nid = circuit.decisions.get((d, pa))
            if nid is not None:
                pl: MaxPayload = circuit.nodes[nid].payload
                table[pa] = pl.alternatives[ws.chosen[nid]]
            elif (d, pa) in circuit.forced:
                table[pa] = circuit.forced[(d, pa)]
            else:
                table[pa] = diagram.availability[d][r].index(1)
        policies[d] = table
    return Strategy(policies)


def tied_decisions(ws: SweepWorkspace) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for nid in ws.ties:
        pl: MaxPayload = ws.circuit.nodes[nid].payload
        out.append((pl.decision, pl.parents))
    return out


def conditional_probability(ws_e: SweepWorkspace, var: str, state: int) -> tuple[float, float]:
    """(P(x, e), P(x | e)) from an e-mode workspace after the downward sweep."""
    joint = ws_e.indicator_derivative(var, state)
    pe = ws_e.root_value
    if pe == 0.0:
        raise UndefinedConditionalError("probability of evidence is zero")
    return joint, joint / pe

