"""Sensitivity analyses computed from circuit partial derivatives.

Everything here consumes the four sweeps done by :func:`evaluate` (up and
down with evidence ``e'`` = e plus the best utility outcome, up and down
with evidence ``e`` at the optimal strategy). Only value of an alternative
and closed-loop risk-curve points sweep the circuit again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .circuit import DecisionCircuit, circuit_stats, compile_diagram
from .errors import AnalysisError, UnavailableAlternativeError, UnsupportedParameterError
from .model import CHANCE, DECISION, InfluenceDiagram
from .sweep import (
    E,
    E_PRIME,
    Strategy,
    SweepWorkspace,
    extract_strategy,
    leaf_assignment,
    sweep_down,
    sweep_up,
    tied_decisions,
)
from .utility import UtilityFunction

Policy = Mapping[tuple[int, ...], int]

_circuit_cache: dict[tuple[str, bool], DecisionCircuit] = {}
_CACHE_LIMIT = 64


def _structure_key(diagram: InfluenceDiagram) -> str:
    doc = diagram.to_document()
    doc.pop("utility_function")
    doc.pop("evidence", None)
    for node in doc["nodes"]:
        node.pop("values", None)
    return repr(doc)


def compile_cached(diagram: InfluenceDiagram, prune: bool = True) -> DecisionCircuit:
    """Compile, reusing circuits of diagrams that differ only in utilities or evidence."""
    key = (_structure_key(diagram), prune)
    circuit = _circuit_cache.get(key)
    if circuit is None:
        if len(_circuit_cache) >= _CACHE_LIMIT:
            _circuit_cache.clear()
        circuit = _circuit_cache[key] = compile_diagram(diagram, prune=prune)
    return circuit


@dataclass
class EvaluationResult:
    diagram: InfluenceDiagram
    circuit: DecisionCircuit
    utility: UtilityFunction
    strategy: Strategy
    ws_e_prime: SweepWorkspace
    ws_e: SweepWorkspace
    ties: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    @property
    def g_e_prime(self) -> float:
        return self.ws_e_prime.root_value

    @property
    def g_e(self) -> float:
        return self.ws_e.root_value

    @property
    def eu(self) -> float:
        return self.g_e_prime / self.g_e

    @property
    def ce(self) -> float:
        return self.utility.inverse(self.eu)

    @property
    def p_evidence(self) -> float:
        return self.g_e

    # derivative tables ----------------------------------------------------
    def utility_derivatives(self) -> list[tuple[tuple[int, ...], float, float]]:
        """(pa(U), d g(e'|s*) / d theta_u|pa(U), value) for every value-table row."""
        d = self.diagram
        uid = d.utility_node.id
        return [(pa, self.ws_e_prime.parameter_derivative((uid, 0, pa)), v)
                for pa, v in zip(d.parent_instantiations(uid), d.values)]

    def decision_derivatives(self, decision: str) -> dict[tuple[tuple[int, ...], int], float]:
        d = self.diagram
        out = {}
        for pa in d.parent_instantiations(decision):
            for a in range(d.card(decision)):
                out[(pa, a)] = self.ws_e_prime.parameter_derivative((decision, a, pa))
        return out

    def indicator_derivatives(self, var: str, mode: str = E_PRIME) -> list[float]:
        ws = self.ws_e_prime if mode == E_PRIME else self.ws_e
        return [ws.indicator_derivative(var, s) for s in range(self.diagram.card(var))]

    # fast path for curves: positive weights with their values
    @property
    def _weights(self) -> tuple[tuple[float, ...], tuple[float, ...], float, float]:
        cached = self.__dict__.get("_weights_cache")
        if cached is None:
            rows = [(w, v) for _pa, w, v in self.utility_derivatives() if w != 0.0]
            ws = tuple(w for w, _ in rows)
            vs = tuple(v for _, v in rows)
            cached = (ws, vs, math.fsum(ws), max(abs(v) for v in vs))
            self.__dict__["_weights_cache"] = cached
        return cached

    def to_document(self) -> dict:
        return {
            "ce": self.ce,
            "unit": self.diagram.value_unit,
            "p_evidence": self.p_evidence,
            "strategy": self.strategy.to_document(self.diagram),
            "circuit": circuit_stats(self.circuit),
            "ties": [{"decision": dd, "parents": list(pa)} for dd, pa in self.ties],
        }


def _finish(diagram: InfluenceDiagram, circuit: DecisionCircuit, ws1: SweepWorkspace,
            strategy: Strategy, utility: UtilityFunction | None = None) -> EvaluationResult:
    sweep_down(circuit, ws1)
    ws2 = sweep_up(circuit, leaf_assignment(diagram, E, strategy=strategy))
    sweep_down(circuit, ws2)
    if ws2.root_value == 0.0:
        raise AnalysisError("probability of the evidence is zero")
    return EvaluationResult(diagram, circuit, utility or diagram.utility_function, strategy, ws1, ws2,
                            tied_decisions(ws1) if ws1.optimized else [])


def evaluate(diagram: InfluenceDiagram, prune: bool = True,
             circuit: DecisionCircuit | None = None) -> EvaluationResult:
    """Solve the diagram: optimal strategy, EU, CE and every partial derivative."""
    circuit = circuit or compile_cached(diagram, prune)
    ws1 = sweep_up(circuit, leaf_assignment(diagram, E_PRIME), optimize=True)
    strategy = extract_strategy(ws1, diagram)
    return _finish(diagram, circuit, ws1, strategy)


def evaluate_at(diagram: InfluenceDiagram, strategy: Strategy, prune: bool = True,
                circuit: DecisionCircuit | None = None) -> EvaluationResult:
    """Evaluate the diagram with every decision clamped to ``strategy``."""
    circuit = circuit or compile_cached(diagram, prune)
    ws1 = sweep_up(circuit, leaf_assignment(diagram, E_PRIME, strategy=strategy))
    return _finish(diagram, circuit, ws1, strategy)


# --------------------------------------------------------------------------
# comparing strategies


def _check_policy(result: EvaluationResult, decision: str, policy: Policy) -> dict[tuple[int, ...], int]:
    d = result.diagram
    if decision not in d or d.var(decision).kind != DECISION:
        raise AnalysisError(f"{decision!r} is not a decision")
    full = dict(result.strategy.policies[decision])
    for r, pa in enumerate(d.parent_instantiations(decision)):
        if pa not in policy:
            continue
        alt = policy[pa]
        if not 0 <= alt < d.card(decision) or d.availability[decision][r][alt] == 0:
            raise UnavailableAlternativeError(
                f"alternative {alt} of {decision!r} is not available under {pa}")
        forced = result.circuit.forced.get((decision, pa))
        if forced is not None and forced != alt:
            raise UnavailableAlternativeError(
                f"{decision!r} under {pa} is forced to alternative {forced}")
        full[pa] = alt
    extra = set(policy) - set(full)
    if extra:
        raise AnalysisError(f"unknown parent instantiation(s) {sorted(extra)} for {decision!r}")
    return full


def compare_strategy(result: EvaluationResult, decision: str, policy: Policy) -> float:
    """CE after replacing one decision's policy, all other policies kept at s*.

    Instantiations absent from ``policy`` keep their optimal alternative.
    Later decisions use their optimal policies for whatever information
    state they reach; earlier decisions stay where s* put them.
    """
    full = _check_policy(result, decision, policy)
    ws = result.ws_e_prime
    total = math.fsum(ws.parameter_derivative((decision, alt, pa)) for pa, alt in full.items())
    return result.utility.inverse(total / result.g_e)


def compare_strategies(result: EvaluationResult, overrides: Sequence[tuple[str, Policy]]) -> float:
    """CE with several decisions' policies replaced at once.

    A single override takes the derivative fast path; several are evaluated
    by clamping the modified strategy and sweeping again.
    """
    if len(overrides) == 1:
        return compare_strategy(result, *overrides[0])
    strategy = result.strategy
    for decision, policy in overrides:
        strategy = strategy.with_policy(decision, _check_policy(result, decision, policy))
    return evaluate_at(result.diagram, strategy, circuit=result.circuit).ce


def strategy_delta(result: EvaluationResult, decision: str, policy_a: Policy, policy_b: Policy) -> float:
    """CE(policy_a) - CE(policy_b); a price under linear or exponential utility."""
    return compare_strategy(result, decision, policy_a) - compare_strategy(result, decision, policy_b)


@dataclass
class AlternativeValue:
    decision: str
    alternative: int
    voa: float
    ce: float
    ce_without: float
    indicator_derivative: float
    usage: str
    strategy_without: Strategy


def value_of_alternative(diagram: InfluenceDiagram | EvaluationResult, decision: str,
                         alternative: int) -> AlternativeValue:
    """Minimum payment to give up ``alternative``: CE(s*) - CE(best strategy without it)."""
    result = diagram if isinstance(diagram, EvaluationResult) else evaluate(diagram)
    d = result.diagram
    if decision not in d or d.var(decision).kind != DECISION:
        raise AnalysisError(f"{decision!r} is not a decision")
    if not 0 <= alternative < d.card(decision):
        raise UnavailableAlternativeError(f"{decision!r} has no alternative {alternative}")
    for r, pa in enumerate(d.parent_instantiations(decision)):
        row = d.availability[decision][r]
        if row[alternative] and sum(row) == 1:
            raise UnavailableAlternativeError(
                f"{decision!r} under {pa}: {d.var(decision).states[alternative]!r} is the only alternative")

    circuit = result.circuit
    assign = leaf_assignment(d, E_PRIME)
    assign.indicators[(decision, alternative)] = 0.0
    ws1 = sweep_up(circuit, assign, optimize=True)
    strategy = extract_strategy(ws1, d)
    ws2 = sweep_up(circuit, leaf_assignment(d, E, strategy=strategy))
    ce_without = result.utility.inverse(ws1.root_value / ws2.root_value)

    deriv = result.ws_e_prime.indicator_derivative(decision, alternative)
    g = result.g_e_prime
    if deriv == 0.0:
        usage = "never chosen at the optimal strategy"
    elif math.isclose(deriv, g, rel_tol=1e-12):
        usage = "chosen in every scenario at the optimal strategy"
    else:
        usage = "chosen in some scenarios at the optimal strategy"
    return AlternativeValue(decision, alternative, result.ce - ce_without, result.ce, ce_without,
                            deriv, usage, strategy)


# --------------------------------------------------------------------------
# risk aversion


def risk_derivative(result: EvaluationResult, parameter: str) -> float:
    """dCE(s*)/d(parameter) at the optimal strategy (open loop).

    ``parameter`` is one of ``gamma``, ``u0``, ``uinf``.
    """
    if parameter not in ("gamma", "u0", "uinf"):
        raise UnsupportedParameterError(f"unknown utility parameter {parameter!r}")
    fn = result.utility
    if parameter == "gamma" and not fn.is_exponential:
        raise UnsupportedParameterError("linear utility has no risk-aversion parameter")
    eu = result.eu
    slope = math.fsum(w * fn.du_dparam(parameter, v) for _pa, w, v in result.utility_derivatives())
    return fn.dinverse_dparam(parameter, eu) + fn.inverse_slope(eu) * slope / result.g_e


def ce_of_gamma(result: EvaluationResult, gamma: float) -> float:
    """CE of the fixed strategy under exponential utility with risk aversion ``gamma``.

    Uses only d g(e'|s)/d theta_u, which do not depend on the utilities, so
    each call costs O(|pa(U)|).
    """
    if not gamma > 0:
        raise AnalysisError("risk aversion must be positive; use expected_value for gamma = 0")
    ws, vs, total, vabs = result._weights
    if gamma * vabs < 0.5:
        s = 0.0
        for w, v in zip(ws, vs):
            s += w * math.expm1(-gamma * v)
        return -math.log1p(s / total) / gamma + 0.0
    m = -gamma * vs[0]
    for v in vs:
        if -gamma * v > m:
            m = -gamma * v
    s = 0.0
    for w, v in zip(ws, vs):
        s += w * math.exp(-gamma * v - m)
    return -(m + math.log(s / total)) / gamma + 0.0


def expected_value(result: EvaluationResult) -> float:
    """Risk-neutral CE of the fixed strategy (the gamma -> 0 limit)."""
    ws, vs, total, _ = result._weights
    return math.fsum(w * v for w, v in zip(ws, vs)) / total + 0.0


def ce_at(result: EvaluationResult, gamma: float) -> float:
    return expected_value(result) if gamma == 0 else ce_of_gamma(result, gamma)


@dataclass
class RiskCurve:
    gammas: list[float]
    curves: dict[str, list[float]]
    strategies: dict[str, Strategy]
    closed_loop: dict[float, float] = field(default_factory=dict)
    unit: str = "M$"

    def to_csv(self) -> str:
        labels = list(self.curves)
        lines = [",".join(["gamma"] + labels)]
        for i, g in enumerate(self.gammas):
            lines.append(",".join([f"{g:.12g}"] + [f"{self.curves[k][i]:.12g}" for k in labels]))
        return "\n".join(lines) + "\n"

    def crossovers(self, a: str, b: str) -> list[float]:
        """Grid gammas where the sign of curve a minus curve b changes (midpoints)."""
        diff = [x - y for x, y in zip(self.curves[a], self.curves[b])]
        out = []
        for i in range(1, len(diff)):
            if diff[i - 1] == 0 or diff[i] == 0 or (diff[i - 1] > 0) != (diff[i] > 0):
                if diff[i - 1] != diff[i]:
                    out.append(0.5 * (self.gammas[i - 1] + self.gammas[i]))
        return out


def solve_at_gamma(diagram: InfluenceDiagram, gamma: float, prune: bool = True) -> EvaluationResult:
    """Closed-loop re-solve with the utility re-normalized at ``gamma`` (0 = linear)."""
    return evaluate(diagram.with_risk_aversion(gamma), prune=prune)


def risk_curve(diagram: InfluenceDiagram, gammas: Sequence[float],
               strategies: Mapping[str, Strategy] | None = None,
               resolve_at: Iterable[float] = (), prune: bool = True) -> RiskCurve:
    """CE-versus-gamma curves for fixed strategies.

    Strategies come from ``strategies`` and from re-solving the diagram at each
    gamma in ``resolve_at``. Each strategy costs one clamped evaluation; every
    grid point after that is an O(|pa(U)|) closed-form evaluation.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise AnalysisError("empty gamma grid")
    if any(g < 0 for g in gammas):
        raise AnalysisError("risk aversion must be non-negative")
    chosen: dict[str, Strategy] = dict(strategies or {})
    closed: dict[float, float] = {}
    for g in resolve_at:
        solved = solve_at_gamma(diagram, g, prune)
        chosen.setdefault(f"optimal@{g:g}", solved.strategy)
        closed[g] = solved.ce
    if not chosen:
        chosen["optimal"] = evaluate(diagram, prune).strategy
    curves = {}
    for label, s in chosen.items():
        fixed = evaluate_at(diagram, s, prune)
        curves[label] = [ce_at(fixed, g) for g in gammas]
    return RiskCurve(gammas, curves, chosen, closed, diagram.value_unit)


# --------------------------------------------------------------------------
# perfect hedging


def _check_hedge_variable(result: EvaluationResult, var: str) -> None:
    d = result.diagram
    if var not in d or d.var(var).kind != CHANCE:
        raise AnalysisError(f"{var!r} is not a chance variable")
    if var in d.evidence:
        raise AnalysisError(f"{var!r} is observed in the evidence")


def conditional_ce(result: EvaluationResult, var: str) -> list[float | None]:
    """CE(s*|x) for each state of ``var``; ``None`` where P(x, e) = 0."""
    _check_hedge_variable(result, var)
    out: list[float | None] = []
    for s in range(result.diagram.card(var)):
        num = result.ws_e_prime.indicator_derivative(var, s)
        den = result.ws_e.indicator_derivative(var, s)
        out.append(None if den == 0.0 else result.utility.inverse(num / den))
    return out


@dataclass
class HedgeReport:
    variable: str
    states: tuple[str, ...]
    probabilities: list[float]
    conditional_ce: list[float | None]
    payoffs: list[float | None]
    ce: float
    ce_ph: float
    voph: float
    unit: str = "M$"
    notes: list[str] = field(default_factory=list)

    def expected_payoff(self, payoffs: Sequence[float]) -> float:
        return math.fsum(p * y for p, y in zip(self.probabilities, payoffs) if p > 0)

    def to_document(self) -> dict:
        return {
            "variable": self.variable,
            "unit": self.unit,
            "voph": self.voph,
            "ce": self.ce,
            "ce_ph": self.ce_ph,
            "states": [{"state": s, "probability": p, "conditional_ce": c, "hedge_payoff": y}
                       for s, p, c, y in zip(self.states, self.probabilities, self.conditional_ce,
                                             self.payoffs)],
            "notes": list(self.notes),
        }


def voph(result: EvaluationResult, var: str) -> HedgeReport:
    """Perfect hedge on ``var`` at the fixed optimal strategy and its value."""
    _check_hedge_variable(result, var)
    d = result.diagram
    states = d.var(var).states
    ge = result.g_e
    probs = [result.ws_e.indicator_derivative(var, s) / ge for s in range(len(states))]
    notes = []
    if not result.utility.is_exponential:
        notes.append("zero for a risk-neutral decision maker: linear utility")
        payoffs = [0.0 if p > 0 else None for p in probs]
        cces = conditional_ce(result, var)
        return HedgeReport(var, states, probs, cces, payoffs, result.ce, result.ce, 0.0, d.value_unit, notes)
    cces = conditional_ce(result, var)
    if any(c is None for c in cces):
        notes.append("states with zero probability are outside the hedge")
    ce_ph = math.fsum(p * c for p, c in zip(probs, cces) if c is not None)
    payoffs = [None if c is None else ce_ph - c for c in cces]
    return HedgeReport(var, states, probs, cces, payoffs, result.ce, ce_ph, ce_ph - result.ce, d.value_unit, notes)


def deal_price_bound(report: HedgeReport, payoffs: Sequence[float]) -> float:
    """Most one should pay for a deal paying ``payoffs[x]``: E[Y] + VoPH."""
    if len(payoffs) != len(report.states):
        raise AnalysisError("deal needs one payoff per state of the hedged variable")
    return report.expected_payoff(payoffs) + report.voph
