"""Brute-force reference computations.

Nothing here touches the circuit: expectations come from enumerating every
joint instantiation, optimal strategies from enumerating every strategy,
and the perfect hedge from a numerical solution of its constrained program.
The module is deliberately exponential-time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CapExceededError, ConvergenceError, UndefinedConditionalError
from .model import CHANCE, DECISION, UTILITY, InfluenceDiagram, Variable, instantiations, row_index
from .sweep import TIE_TOL, Strategy
from .utility import EXPONENTIAL, LINEAR, UtilitySpec

DEFAULT_STRATEGY_CAP = 10**6


@dataclass
class JointTable:
    """Every instantiation of the chance and decision variables.

    ``mass`` is the chance-only probability times the evidence indicator;
    multiply by :meth:`consistent` for the mass under one strategy.
    """

    diagram: InfluenceDiagram
    columns: tuple[str, ...]
    states: np.ndarray
    mass: np.ndarray
    value: np.ndarray

    @classmethod
    def build(cls, diagram: InfluenceDiagram) -> "JointTable":
        cols = tuple(v.id for v in diagram.variables if v.kind != UTILITY)
        cards = [diagram.card(c) for c in cols]
        states = np.array(list(instantiations(cards)), dtype=np.int64).reshape(-1, len(cols))
        col = {c: i for i, c in enumerate(cols)}
        mass = np.ones(len(states))
        for v in diagram.variables:
            if v.kind != CHANCE:
                continue
            table = np.array(diagram.cpts[v.id])
            rows = _row_indices(diagram, v, states, col)
            mass *= table[rows, states[:, col[v.id]]]
        for vid, s in diagram.evidence.items():
            mass *= states[:, col[vid]] == s
        u = diagram.utility_node
        values = np.array(diagram.values)
        value = values[_row_indices(diagram, u, states, col)]
        return cls(diagram, cols, states, mass, value)

    def column(self, vid: str) -> np.ndarray:
        return self.states[:, self.columns.index(vid)]

    def consistent(self, strategy: Strategy) -> np.ndarray:
        col = {c: i for i, c in enumerate(self.columns)}
        ok = np.ones(len(self.states), dtype=bool)
        for d in self.diagram.decision_order:
            var = self.diagram.var(d)
            pol = np.array([strategy.choice(d, pa) for pa in self.diagram.parent_instantiations(d)])
            rows = _row_indices(self.diagram, var, self.states, col)
            ok &= self.states[:, col[d]] == pol[rows]
        return ok

    def masses(self, strategy: Strategy) -> np.ndarray:
        return self.mass * self.consistent(strategy)


def _row_indices(diagram: InfluenceDiagram, var: Variable, states: np.ndarray, col: Mapping[str, int]) -> np.ndarray:
    idx = np.zeros(len(states), dtype=np.int64)
    for p in var.parents:
        idx = idx * diagram.card(p) + states[:, col[p]]
    return idx


def joint_table(diagram: InfluenceDiagram) -> JointTable:
    return JointTable.build(diagram)


# --------------------------------------------------------------------------
# strategies


def strategy_count(diagram: InfluenceDiagram) -> int:
    total = 1
    for d in diagram.decision_order:
        for row in diagram.availability[d]:
            total *= sum(row)
    return total


def enumerate_strategies(diagram: InfluenceDiagram, cap: int = DEFAULT_STRATEGY_CAP,
                         fixed: Mapping[str, Mapping[tuple[int, ...], int]] | None = None) -> list[Strategy]:
    """Every strategy respecting availability, in lexicographic policy order.

    Decisions in ``fixed`` keep the given policy.
    """
    fixed = fixed or {}
    slots = []
    for d in diagram.decision_order:
        for r, pa in enumerate(diagram.parent_instantiations(d)):
            if d in fixed:
                slots.append((d, pa, (fixed[d][pa],)))
            else:
                slots.append((d, pa, tuple(a for a, ok in enumerate(diagram.availability[d][r]) if ok)))
    count = math.prod(len(s[2]) for s in slots)
    if count > cap:
        raise CapExceededError(f"{count} strategies exceed the cap of {cap}")
    out = []
    for combo in itertools.product(*(s[2] for s in slots)):
        policies: dict[str, dict] = {d: {} for d in diagram.decision_order}
        for (d, pa, _), a in zip(slots, combo):
            policies[d][pa] = a
        out.append(Strategy(policies))
    return out


@dataclass
class FixedEvaluation:
    diagram: InfluenceDiagram
    strategy: Strategy
    eu: float
    ce: float
    p_evidence: float
    _table: JointTable = field(repr=False)
    _mass: np.ndarray = field(repr=False)

    def expected_value(self) -> float:
        return float(np.dot(self._mass, self._table.value) / self.p_evidence)

    def conditional(self, var: str) -> list[tuple[float, float | None, float | None]]:
        """(P(x|e), EU(s|x), CE(s|x)) for each state; None where P(x, e) = 0."""
        fn = self.diagram.utility_function
        u = np.array([fn(v) for v in self._table.value])
        col = self._table.column(var)
        out = []
        for s in range(self.diagram.card(var)):
            m = self._mass * (col == s)
            px = float(m.sum())
            if px == 0.0:
                out.append((0.0, None, None))
                continue
            eu = float(np.dot(m, u) / px)
            out.append((px / self.p_evidence, eu, fn.inverse(eu)))
        return out

    def conditional_ce(self, var: str) -> list[float | None]:
        return [c for _p, _eu, c in self.conditional(var)]


def evaluate_fixed(diagram: InfluenceDiagram, strategy: Strategy,
                   evidence: Mapping[str, str | int] | None = None,
                   table: JointTable | None = None) -> FixedEvaluation:
    """Exact EU and CE of a fixed strategy by joint enumeration."""
    if evidence is not None:
        diagram = diagram.with_evidence(evidence)
        table = None
    table = table or joint_table(diagram)
    fn = diagram.utility_function
    mass = table.masses(strategy)
    pe = float(mass.sum())
    if pe == 0.0:
        raise UndefinedConditionalError("probability of evidence is zero under this strategy")
    u = np.array([fn(v) for v in table.value])
    eu = float(np.dot(mass, u) / pe)
    return FixedEvaluation(diagram, strategy, eu, fn.inverse(eu), pe, table, mass)


@dataclass
class OptimalSolution:
    strategy: Strategy
    eu: float
    ce: float


def solve_optimal(diagram: InfluenceDiagram, cap: int = DEFAULT_STRATEGY_CAP,
                  fixed: Mapping[str, Mapping[tuple[int, ...], int]] | None = None) -> OptimalSolution:
    """Best strategy by exhaustive search; ties (within ``TIE_TOL``) keep the lexicographically first."""
    table = joint_table(diagram)
    fn = diagram.utility_function
    u = np.array([fn(v) for v in table.value])
    best = None
    for s in enumerate_strategies(diagram, cap, fixed):
        mass = table.masses(s)
        eu = float(np.dot(mass, u) / mass.sum())
        if best is None or eu - best[1] > TIE_TOL * abs(best[1]):
            best = (s, eu)
    return OptimalSolution(best[0], best[1], fn.inverse(best[1]))


# --------------------------------------------------------------------------
# perfect hedge


@dataclass
class HedgeSolution:
    payoffs: list[float | None]
    voph: float
    ce: float
    ce_ph: float
    mu: float
    constraint_residual: float
    mu_residual: float
    iterations: int


def voph_numeric(diagram: InfluenceDiagram, strategy: Strategy, var: str,
                 tol: float = 1e-8, max_iter: int = 500) -> HedgeSolution:
    """Solve max_y E[u(V + y(X))] s.t. E[y(X)] = 0 by bisection on the multiplier.

    For a multiplier ``mu`` the stationarity condition
    P(x) * gamma * exp(-gamma y) * (uinf - EU(x)) = mu * P(x) gives y(x; mu)
    in closed form; the constraint is then strictly decreasing in log(mu)
    and is bisected to ``tol``.
    """
    fe = evaluate_fixed(diagram, strategy)
    cond = fe.conditional(var)
    fn = diagram.utility_function
    live = [(i, p, eu) for i, (p, eu, _c) in enumerate(cond) if p > 0]
    if fn.kind == LINEAR:
        payoffs = [0.0 if p > 0 else None for p, _eu, _c in cond]
        return HedgeSolution(payoffs, 0.0, fe.ce, fe.ce, fn.u0, 0.0, 0.0, 0)

    g = fn.gamma
    gaps = [fn.uinf - eu for _i, _p, eu in live]

    def payoff(log_mu: float) -> list[float]:
        return [(math.log(gap) - (log_mu - math.log(g))) / g for gap in gaps]

    def constraint(log_mu: float) -> float:
        return math.fsum(p * y for (_i, p, _eu), y in zip(live, payoff(log_mu)))

    lo, hi = -1.0, 1.0
    while constraint(lo) < 0:
        lo -= 2 * (hi - lo)
    while constraint(hi) > 0:
        hi += 2 * (hi - lo)
    it = 0
    mid = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        c = constraint(mid)
        if c > 0:
            lo = mid
        else:
            hi = mid
        if abs(c) < tol and (hi - lo) < tol:
            break
    else:
        raise ConvergenceError("multiplier bisection did not converge",
                               {"constraint": constraint(mid), "bracket": hi - lo})
    ys = payoff(mid)
    mu = math.exp(mid)
    eu_ph = math.fsum(p * (fn.uinf - math.exp(-g * y) * gap) for (_i, p, _eu), y, gap in zip(live, ys, gaps))
    ce_ph = fn.inverse(eu_ph)
    mu_res = max(abs(g * math.exp(-g * y) * gap / mu - 1.0) for y, gap in zip(ys, gaps))
    payoffs: list[float | None] = [None] * len(cond)
    for (i, _p, _eu), y in zip(live, ys):
        payoffs[i] = y
    return HedgeSolution(payoffs, ce_ph - fe.ce, fe.ce, ce_ph, mu, constraint(mid), mu_res, it)


def voph_closed_loop(diagram: InfluenceDiagram, var: str, cap: int = DEFAULT_STRATEGY_CAP) -> float:
    """max over strategies of the hedged CE, minus the unhedged optimal CE."""
    best_plain = solve_optimal(diagram, cap).ce
    table = joint_table(diagram)
    best_hedged = -math.inf
    for s in enumerate_strategies(diagram, cap):
        fe = evaluate_fixed(diagram, s, table=table)
        cond = fe.conditional(var)
        hedged = math.fsum(p * c for p, _eu, c in cond if c is not None)
        best_hedged = max(best_hedged, hedged)
    return best_hedged - best_plain


# --------------------------------------------------------------------------
# random instances


@dataclass(frozen=True)
class RandomLimits:
    max_chance: int = 6
    max_states: int = 3
    max_decisions: int = 2
    max_alternatives: int = 3
    max_parents: int = 2
    max_value_parents: int = 3
    value_range: tuple[float, float] = (-10.0, 10.0)
    gamma_range: tuple[float, float] = (1e-4, 1e-1)
    max_strategies: int = 200
    max_joint: int = 1500
    zero_probability: float = 0.0
    unavailable: float = 0.0
    evidence_probability: float = 0.3
    linear_probability: float = 0.0


def random_diagram(seed: int, limits: RandomLimits | None = None) -> InfluenceDiagram:
    """Reproducible random diagram with a valid no-forgetting structure."""
    lim = limits or RandomLimits()
    rng = np.random.default_rng(seed)
    n_chance = int(rng.integers(1, lim.max_chance + 1))
    n_dec = int(rng.integers(1, lim.max_decisions + 1)) if lim.max_decisions else 0
    n_dec = min(n_dec, n_chance + 1)
    cards = {}
    names = [f"X{i}" for i in range(n_chance)] + [f"D{i}" for i in range(n_dec)]
    for nm in names:
        hi = lim.max_states if nm.startswith("X") else lim.max_alternatives
        cards[nm] = int(rng.integers(2, hi + 1))
    while math.prod(cards.values()) > lim.max_joint:
        big = max(cards, key=lambda k: (cards[k], k))
        cards[big] -= 1
        if cards[big] < 2:
            cards[big] = 2
            break

    # topological order with decisions in their own relative order
    order = [str(x) for x in rng.permutation([f"X{i}" for i in range(n_chance)])]
    for k in range(n_dec):
        order.insert(int(rng.integers(0, len(order) + 1)) if k == 0 else
                     int(rng.integers(order.index(f"D{k - 1}") + 1, len(order) + 1)), f"D{k}")
    position = {v: i for i, v in enumerate(order)}

    parents: dict[str, list[str]] = {}
    observed: list[list[str]] = []
    for v in order:
        earlier = order[:position[v]]
        if v.startswith("X"):
            k = int(rng.integers(0, min(lim.max_parents, len(earlier)) + 1))
            parents[v] = sorted((str(x) for x in rng.choice(earlier, size=k, replace=False)), key=position.get) if k else []
        else:
            pool = [x for x in earlier if x.startswith("X") and not any(x in o for o in observed)]
            k = int(rng.integers(0, min(2, len(pool)) + 1))
            observed.append([str(x) for x in rng.choice(pool, size=k, replace=False)] if k else [])
    for k in range(n_dec):
        _info_sets(parents, observed, n_dec, position)
        if strategy_total(cards, parents, n_dec) <= lim.max_strategies:
            break
    while strategy_total(cards, parents, n_dec) > lim.max_strategies:
        last = max((j for j in range(n_dec) if observed[j]), default=None)
        if last is None:
            big = max((f"D{j}" for j in range(n_dec)), key=lambda d: cards[d])
            if cards[big] == 2:
                break
            cards[big] -= 1
        else:
            observed[last].pop()
        _info_sets(parents, observed, n_dec, position)

    n_val = int(rng.integers(1, min(lim.max_value_parents, len(order)) + 1))
    vparents = sorted((str(x) for x in rng.choice(order, size=n_val, replace=False)), key=position.get)

    nodes = []
    cpts, avail = {}, {}
    for v in order:
        pc = [cards[p] for p in parents[v]]
        rows = math.prod(pc)
        if v.startswith("X"):
            table = []
            for _ in range(rows):
                row = rng.dirichlet(np.ones(cards[v]))
                if rng.random() < lim.zero_probability:
                    row[int(rng.integers(cards[v]))] = 0.0
                    row = row / row.sum()
                table.append(tuple(float(x) for x in row))
            cpts[v] = tuple(table)
        else:
            table = []
            for _ in range(rows):
                row = [1] * cards[v]
                if rng.random() < lim.unavailable:
                    row[int(rng.integers(cards[v]))] = 0
                table.append(tuple(row))
            avail[v] = tuple(table)
        kind = CHANCE if v.startswith("X") else DECISION
        prefix = "x" if kind == CHANCE else "d"
        nodes.append(Variable(v, kind, tuple(f"{prefix}{i}" for i in range(cards[v])), tuple(parents[v])))
    lo, hi = lim.value_range
    rows = math.prod(cards[p] for p in vparents)
    values = tuple(float(round(x, 6)) for x in rng.uniform(lo, hi, size=rows))
    nodes.append(Variable("U", UTILITY, ("u", "ubar"), tuple(vparents)))

    if rng.random() < lim.linear_probability:
        spec = UtilitySpec(LINEAR)
    else:
        glo, ghi = lim.gamma_range
        spec = UtilitySpec(EXPONENTIAL, risk_aversion=float(math.exp(rng.uniform(math.log(glo), math.log(ghi)))))

    diagram = InfluenceDiagram(f"random-{seed}", "M$", tuple(nodes), cpts, avail, values, spec, {})
    if rng.random() < lim.evidence_probability:
        decisions = [f"D{j}" for j in range(n_dec)]
        blocked = set().union(*(diagram.descendants(d) for d in decisions)) if decisions else set()
        cands = [v for v in order if v.startswith("X") and v not in blocked]
        if cands:
            var = cands[int(rng.integers(len(cands)))]
            table = joint_table(diagram)
            col = table.column(var)
            live = [s for s in range(cards[var]) if table.mass[col == s].sum() > 0]
            state = live[int(rng.integers(len(live)))]
            diagram = diagram.with_evidence({var: state})
    return diagram


def _info_sets(parents, observed, n_dec, position):
    acc: list[str] = []
    for k in range(n_dec):
        acc = acc + list(observed[k])
        prior = [f"D{j}" for j in range(k)]
        parents[f"D{k}"] = sorted(set(acc) | set(prior), key=position.get)


def strategy_total(cards, parents, n_dec) -> int:
    total = 1
    for k in range(n_dec):
        d = f"D{k}"
        total *= cards[d] ** math.prod(cards[p] for p in parents[d])
    return total
