"""Cross-checks of the circuit analyses against the brute-force oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from .analysis import (EvaluationResult, ce_of_gamma, compare_strategy, conditional_ce, evaluate,
                       evaluate_at, voph)
from .model import InfluenceDiagram
from .oracle import (RandomLimits, enumerate_strategies, evaluate_fixed, joint_table, random_diagram,
                     solve_optimal, voph_closed_loop, voph_numeric)
from .sweep import E, E_PRIME, leaf_assignment, leaf_vector, sweep_down, sweep_up

# check name -> tolerance; errors are absolute unless the name says otherwise
TOLERANCES = {
    "optimal_ce": 1e-9,
    "fixed_strategy_ce": 1e-9,
    "policy_change_ce": 1e-9,
    "conditional_ce": 1e-9,
    "ce_of_gamma": 1e-9,
    "voph": 1e-4,
    "hedge_mean": 1e-9,
    "voph_nonnegative": 1e-9,
    "voph_open_loop_bound": 1e-9,
    "derivative_relative": 1e-6,
    "utility_reconstruction": 1e-12,
    "utility_normalizer": 1e-12,
    "indicator_euler": 1e-12,
    "evidence_from_utility_indicators": 1e-12,
}

FD_STEP = Fraction(1, 10**6)


@dataclass
class Caps:
    seeds: int = 200
    fixed_strategies: int = 200
    gammas: int = 5
    finite_differences: bool = True
    closed_loop: bool = True
    limits: RandomLimits = field(default_factory=RandomLimits)


@dataclass
class CheckResult:
    name: str
    tolerance: float
    max_error: float = 0.0
    count: int = 0
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def add(self, error: float, where: str = "") -> None:
        self.count += 1
        if not error <= self.max_error:
            self.max_error = error if not math.isnan(error) else math.inf
            self.worst = where

    def to_document(self) -> dict:
        return {"name": self.name, "max_abs_error": self.max_error, "tolerance": self.tolerance,
                "count": self.count, "passed": self.passed, "worst": self.worst}


class Report:
    def __init__(self, names: Iterable[str] = TOLERANCES):
        self.checks = {n: CheckResult(n, TOLERANCES[n]) for n in names}

    def add(self, name: str, error: float, where: str = "") -> None:
        self.checks[name].add(error, where)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_document(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_document() for c in self.checks.values()]}


def _excess(value: float, bound: float) -> float:
    return max(0.0, value - bound)


def check_identities(result: EvaluationResult, report: Report, where: str) -> None:
    d, ws1, ws2 = result.diagram, result.ws_e_prime, result.ws_e
    rows = result.utility_derivatives()
    thetas = d.utilities()
    report.add("utility_reconstruction",
               abs(math.fsum(w * t for (_pa, w, _v), t in zip(rows, thetas)) - result.g_e_prime), where)
    report.add("utility_normalizer", abs(math.fsum(w for _pa, w, _v in rows) - result.g_e), where)
    uid = d.utility_node.id
    report.add("evidence_from_utility_indicators",
               abs(ws1.indicator_derivative(uid, 0) + ws1.indicator_derivative(uid, 1) - result.g_e), where)
    for ws in (ws1, ws2):
        for vid in d.chance_ids:
            lam = [ws.value[ws.circuit.indicators[(vid, s)]] if (vid, s) in ws.circuit.indicators else 0.0
                   for s in range(d.card(vid))]
            total = math.fsum(ws.indicator_derivative(vid, s) * lam[s] for s in range(d.card(vid)))
            report.add("indicator_euler", abs(total - ws.root_value), f"{where} {vid}")


def check_derivatives(result: EvaluationResult, report: Report, where: str) -> None:
    """Every leaf derivative against a central difference evaluated exactly.

    The circuit is multilinear in each leaf, so an exact central difference
    equals the derivative; rational arithmetic removes the cancellation error
    a double-precision difference suffers on tiny derivatives.
    """
    d, c = result.diagram, result.circuit
    leaves = list(c.indicators.items()) + list(c.parameters.items())
    for mode in (E_PRIME, E):
        base = leaf_vector(c, leaf_assignment(d, mode, strategy=result.strategy))
        ws = sweep_down(c, sweep_up(c, base))
        opt = result.ws_e_prime if mode == E_PRIME else result.ws_e
        exact = [Fraction(x) for x in base]
        for key, nid in leaves:
            plus, minus = list(exact), list(exact)
            plus[nid] += FD_STEP
            minus[nid] -= FD_STEP
            fd = float((sweep_up(c, plus).root_value - sweep_up(c, minus).root_value) / (2 * FD_STEP))
            for an in (ws.derivative[nid], opt.derivative[nid]):
                scale = max(abs(an), abs(fd))
                report.add("derivative_relative", 0.0 if scale == 0 else abs(fd - an) / scale,
                           f"{where} {mode} {key}")


def check_against_oracle(diagram: InfluenceDiagram, report: Report, where: str, caps: Caps,
                         rng: np.random.Generator) -> EvaluationResult:
    result = evaluate(diagram)
    table = joint_table(diagram)
    best = solve_optimal(diagram)
    report.add("optimal_ce", abs(result.ce - best.ce), where)

    strategies = enumerate_strategies(diagram)
    for s in strategies[: caps.fixed_strategies]:
        report.add("fixed_strategy_ce",
                   abs(evaluate_at(diagram, s, circuit=result.circuit).ce
                       - evaluate_fixed(diagram, s, table=table).ce), where)

    # policy changes: upstream at s*, D replaced, downstream best per information state
    fn = diagram.utility_function
    order = diagram.decision_order
    u = np.array([fn(v) for v in table.value])
    for k, dec in enumerate(order):
        upstream = {p: dict(result.strategy.policies[p]) for p in order[:k]}
        best_eu: dict[tuple, float] = {}
        for s in enumerate_strategies(diagram, fixed=upstream):
            mass = table.masses(s)
            eu = float(np.dot(mass, u) / mass.sum())
            pol = tuple(sorted(s.policies[dec].items()))
            if eu > best_eu.get(pol, -math.inf):
                best_eu[pol] = eu
        for pol, eu in best_eu.items():
            got = compare_strategy(result, dec, dict(pol))
            report.add("policy_change_ce", abs(got - fn.inverse(eu)), f"{where} {dec}")

    fe = evaluate_fixed(diagram, result.strategy, table=table)
    free = [v for v in diagram.chance_ids if v not in diagram.evidence]
    for vid in free:
        for a, b in zip(conditional_ce(result, vid), fe.conditional_ce(vid)):
            if a is None or b is None:
                report.add("conditional_ce", 0.0 if a is None and b is None else math.inf, f"{where} {vid}")
            else:
                report.add("conditional_ce", abs(a - b), f"{where} {vid}")

    for g in np.exp(rng.uniform(math.log(1e-4), math.log(1e-1), size=caps.gammas)):
        g = float(g)
        want = evaluate_fixed(diagram.with_risk_aversion(g), result.strategy).ce
        report.add("ce_of_gamma", abs(ce_of_gamma(result, g) - want), f"{where} gamma={g:.6g}")

    if fn.is_exponential:
        for vid in free:
            rep = voph(result, vid)
            num = voph_numeric(diagram, result.strategy, vid)
            report.add("voph", abs(rep.voph - num.voph), f"{where} {vid}")
            report.add("voph_nonnegative", max(0.0, -rep.voph), f"{where} {vid}")
            report.add("hedge_mean", abs(rep.expected_payoff([y or 0.0 for y in rep.payoffs])), f"{where} {vid}")
            if caps.closed_loop:
                report.add("voph_open_loop_bound", _excess(rep.voph, voph_closed_loop(diagram, vid)),
                           f"{where} {vid}")
    return result


def verify_diagram(diagram: InfluenceDiagram, caps: Caps | None = None, report: Report | None = None,
                   where: str = "", seed: int = 0) -> Report:
    caps = caps or Caps()
    report = report or Report()
    rng = np.random.default_rng(seed)
    result = check_against_oracle(diagram, report, where or diagram.name, caps, rng)
    check_identities(result, report, where or diagram.name)
    if caps.finite_differences:
        check_derivatives(result, report, where or diagram.name)
    return report


def verify_random(caps: Caps | None = None, progress: Callable[[int], None] | None = None) -> Report:
    caps = caps or Caps()
    report = Report()
    for seed in range(caps.seeds):
        verify_diagram(random_diagram(seed, caps.limits), caps, report, f"seed={seed}", seed)
        if progress:
            progress(seed)
    return report
