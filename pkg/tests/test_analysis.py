import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcirc.analysis import (ce_at, ce_of_gamma, compare_strategies, compare_strategy, conditional_ce,
                            deal_price_bound, evaluate, evaluate_at, expected_value, risk_curve,
                            risk_derivative, strategy_delta, value_of_alternative, voph)
from dcirc.errors import AnalysisError, UnavailableAlternativeError, UnsupportedParameterError
from dcirc.model import diagram_from_document
from dcirc.oracle import (RandomLimits, enumerate_strategies, evaluate_fixed, random_diagram, solve_optimal,
                          voph_numeric)
from dcirc.utility import EXPONENTIAL, UtilitySpec

from conftest import one_decision


def idx(d, var, label):
    return d.var(var).states.index(label)


@pytest.fixture(scope="module")
def r2(wildcatter):
    return evaluate(wildcatter)


@pytest.fixture(scope="module")
def r1(oil_field):
    return evaluate(oil_field)


def test_paper_ces(r1, r2):
    assert abs(r1.ce - 38.99) <= 0.01
    assert abs(r2.ce - 5.21) <= 0.01
    assert 0 < r2.eu < 1


def test_frozen_oracle_values(r1, r2):
    # exact CEs from joint enumeration of the bundled diagrams
    assert r1.ce == pytest.approx(38.99337956134877, abs=1e-9)
    assert r2.ce == pytest.approx(5.212139621681488, abs=1e-9)
    assert expected_value(r2) == pytest.approx(8.25, abs=1e-12)


def test_result_document(r2):
    doc = r2.to_document()
    assert doc["unit"] == "M$" and doc["circuit"]["edges"] == r2.circuit.size
    assert "eu" not in doc


def test_linear_ce_is_mean_value(wildcatter):
    d = wildcatter.with_risk_aversion(0)
    r = evaluate(d)
    assert abs(r.ce - evaluate_fixed(d, r.strategy).expected_value()) <= 1e-9


# strategy comparison ------------------------------------------------------


def test_dont_test(wildcatter, r2):
    ce = compare_strategy(r2, "T", {(): idx(wildcatter, "T", "notest")})
    assert abs(ce - 3.17) <= 0.01


def test_always_drill(wildcatter, r2):
    drill = idx(wildcatter, "W", "drill")
    ce = compare_strategy(r2, "W", {pa: drill for pa in wildcatter.parent_instantiations("W")})
    assert abs(ce - (-16.83)) <= 0.01


def test_identity_policy_is_exact(r2):
    for dec in ("T", "W"):
        assert compare_strategy(r2, dec, dict(r2.strategy.policies[dec])) == r2.ce


def test_delta(wildcatter, r2):
    opt = dict(r2.strategy.policies["T"])
    notest = {(): idx(wildcatter, "T", "notest")}
    delta = strategy_delta(r2, "T", opt, notest)
    assert abs(delta - 2.04) <= 0.02
    assert strategy_delta(r2, "T", notest, opt) == -delta
    assert strategy_delta(r2, "T", opt, opt) == 0.0


def test_unavailable_alternative_rejected():
    d = one_decision(availability=[[1, 0]])
    r = evaluate(d)
    with pytest.raises(UnavailableAlternativeError):
        compare_strategy(r, "D", {(): 1})


def test_not_a_decision(r2):
    with pytest.raises(AnalysisError):
        compare_strategy(r2, "A", {(): 0})


def test_multiple_overrides_match_oracle(wildcatter, r2):
    notest, drill = idx(wildcatter, "T", "notest"), idx(wildcatter, "W", "drill")
    w = {pa: drill for pa in wildcatter.parent_instantiations("W")}
    got = compare_strategies(r2, [("T", {(): notest}), ("W", w)])
    s = r2.strategy.with_policy("T", {(): notest}).with_policy("W", w)
    assert abs(got - evaluate_fixed(wildcatter, s).ce) <= 1e-9


@pytest.mark.parametrize("seed", range(8))
def test_last_decision_policies_match_oracle(seed):
    d = random_diagram(seed, RandomLimits(max_decisions=2, unavailable=0.2))
    if not d.decision_order:
        pytest.skip("no decision")
    r = evaluate(d)
    last = d.decision_order[-1]
    seen = set()
    for s in enumerate_strategies(d, fixed={k: dict(v) for k, v in r.strategy.policies.items() if k != last}):
        key = tuple(sorted(s.policies[last].items()))
        if key in seen:
            continue
        seen.add(key)
        assert abs(compare_strategy(r, last, dict(key)) - evaluate_fixed(d, s).ce) <= 1e-9


# value of an alternative ----------------------------------------------------


def test_value_of_test(wildcatter, r2):
    va = value_of_alternative(r2, "T", idx(wildcatter, "T", "test"))
    assert abs(va.voa - 2.04) <= 0.02
    assert va.usage == "chosen in every scenario at the optimal strategy"
    assert va.strategy_without.choice("T", ()) == idx(wildcatter, "T", "notest")


def test_unused_alternative_is_worth_nothing():
    d = one_decision(values=(1.0, 2.0))
    va = value_of_alternative(d, "D", 0)
    assert va.indicator_derivative == 0.0
    assert va.voa == 0.0
    assert va.usage == "never chosen at the optimal strategy"


def test_only_alternative_cannot_be_removed():
    with pytest.raises(UnavailableAlternativeError):
        value_of_alternative(one_decision(availability=[[1, 0]]), "D", 0)


@pytest.mark.parametrize("seed", range(10))
def test_value_of_alternative_matches_oracle(seed):
    d = random_diagram(seed, RandomLimits(max_decisions=2))
    if not d.decision_order:
        pytest.skip("no decision")
    dec = d.decision_order[0]
    doc = d.to_document()
    node = next(n for n in doc["nodes"] if n["id"] == dec)
    node["availability"] = [[0 if a == 0 else 1 for a in range(d.card(dec))] for _ in node["availability"]]
    without = solve_optimal(diagram_from_document(doc))
    va = value_of_alternative(d, dec, 0)
    assert abs(va.voa - (solve_optimal(d).ce - without.ce)) <= 1e-9


# risk aversion ------------------------------------------------------------


def test_risk_derivative_wrt_uinf_is_zero(r2):
    assert risk_derivative(r2, "uinf") == 0.0


def test_risk_derivative_wrt_u0_vanishes(r2):
    assert abs(risk_derivative(r2, "u0")) < 1e-10


def test_risk_derivative_matches_closed_form_difference(r2):
    g, h = r2.utility.gamma, 1e-7
    fd = (ce_of_gamma(r2, g + h) - ce_of_gamma(r2, g - h)) / (2 * h)
    assert math.isclose(risk_derivative(r2, "gamma"), fd, rel_tol=1e-5)


@given(st.integers(0, 10**6))
def test_risk_derivative_matches_curve_secant(seed):
    d = random_diagram(seed)
    r = evaluate(d)
    g = r.utility.gamma
    h = 1e-4 * g
    curve = risk_curve(d, [g - h, g + h], {"s": r.strategy})
    secant = (curve.curves["s"][1] - curve.curves["s"][0]) / (2 * h)
    # the secant itself carries rounding noise of order eps * |CE| / h
    noise = 1e-14 * (1 + max(abs(v) for v in d.values)) / h
    assert risk_derivative(r, "gamma") == pytest.approx(secant, rel=1e-5, abs=noise)


def test_risk_derivative_errors(r2, wildcatter):
    with pytest.raises(UnsupportedParameterError):
        risk_derivative(r2, "beta")
    with pytest.raises(UnsupportedParameterError):
        risk_derivative(evaluate(wildcatter.with_risk_aversion(0)), "gamma")


def test_ce_of_gamma_anchor(r2):
    assert abs(ce_of_gamma(r2, 0.002) - 5.21) <= 0.01
    assert ce_of_gamma(r2, r2.utility.gamma) == pytest.approx(r2.ce, abs=1e-9)


def test_ce_of_gamma_risk_neutral_limit(wildcatter, r2):
    want = evaluate_fixed(wildcatter, r2.strategy).expected_value()
    assert abs(ce_of_gamma(r2, 1e-9) - want) <= 1e-3
    assert ce_at(r2, 0.0) == pytest.approx(want, abs=1e-12)


@given(st.integers(0, 10**6), st.floats(1e-6, 0.5))
def test_ce_of_gamma_matches_clamped_reevaluation(seed, gamma):
    d = random_diagram(seed)
    r = evaluate(d)
    want = evaluate_at(d.with_risk_aversion(gamma), r.strategy).ce
    assert abs(ce_of_gamma(r, gamma) - want) <= 1e-9 * max(1.0, abs(want))


def test_ce_of_gamma_overflow_guard(r2):
    assert math.isfinite(ce_of_gamma(r2, 50.0))
    assert ce_of_gamma(r2, 50.0) == pytest.approx(-70.0, abs=0.1)


def test_ce_of_gamma_requires_positive(r2):
    with pytest.raises(AnalysisError):
        ce_of_gamma(r2, 0.0)


@given(st.integers(0, 10**6))
def test_ce_of_gamma_strictly_decreasing(seed):
    d = random_diagram(seed)
    r = evaluate(d)
    _w, vs, _t, _a = r._weights
    if max(vs) - min(vs) < 1e-3:
        return
    ces = [ce_of_gamma(r, g) for g in np.geomspace(1e-4, 1e-1, 30)]
    assert all(b < a for a, b in zip(ces, ces[1:]))


def test_wildcatter_curve_strictly_decreasing(r2):
    ces = [ce_of_gamma(r2, g) for g in np.linspace(1e-4, 0.01, 100)]
    assert all(b < a for a, b in zip(ces, ces[1:]))


@pytest.fixture(scope="module")
def curve(wildcatter):
    return risk_curve(wildcatter, np.linspace(0, 0.01, 101), resolve_at=[0, 0.002, 0.01])


def test_risk_curve_shape(curve, wildcatter):
    assert list(curve.curves) == ["optimal@0", "optimal@0.002", "optimal@0.01"]
    assert curve.curves["optimal@0"][0] == pytest.approx(9.5, abs=1e-12)
    assert all(c == 0.0 for c in curve.curves["optimal@0.01"])
    assert curve.crossovers("optimal@0", "optimal@0.002")
    assert curve.crossovers("optimal@0.002", "optimal@0.01")
    lines = curve.to_csv().splitlines()
    assert lines[0] == "gamma,optimal@0,optimal@0.002,optimal@0.01"
    assert len(lines) == 102


def test_flexibility_gap(curve):
    i = curve.gammas.index(0.002)
    gap = curve.curves["optimal@0.002"][i] - curve.curves["optimal@0.01"][i]
    assert abs(gap - 5.21) <= 0.02


def test_closed_loop_envelope(curve, wildcatter):
    for i, g in enumerate(curve.gammas[::10]):
        best = solve_optimal(wildcatter.with_risk_aversion(g)).ce
        for label in curve.curves:
            assert curve.curves[label][i * 10] <= best + 1e-9


def test_empty_grid(wildcatter):
    with pytest.raises(AnalysisError):
        risk_curve(wildcatter, [])


# hedging ----------------------------------------------------------------


def test_conditional_ce_oil_amount(r1):
    cces = conditional_ce(r1, "A")
    probs = [r1.ws_e.indicator_derivative("A", s) / r1.g_e for s in range(2)]
    assert abs(sum(p * c for p, c in zip(probs, cces)) - r1.ce - 7.68) <= 0.01


def _with_irrelevant(oil_field):
    doc = oil_field.to_document()
    doc["nodes"].insert(0, {"id": "Z", "kind": "chance", "states": ["a", "b", "c"], "parents": [],
                            "cpt": [[0.2, 0.3, 0.5]]})
    return diagram_from_document(doc)


def test_irrelevant_uncertainty(oil_field):
    r = evaluate(_with_irrelevant(oil_field))
    for c in conditional_ce(r, "Z"):
        assert c == pytest.approx(r.ce, abs=1e-9)
    rep = voph(r, "Z")
    assert abs(rep.voph) <= 1e-9
    assert all(abs(y) <= 1e-9 for y in rep.payoffs)


@pytest.mark.parametrize("seed", range(10))
def test_conditional_ce_matches_oracle(seed):
    d = random_diagram(seed, RandomLimits(zero_probability=0.3))
    r = evaluate(d)
    fe = evaluate_fixed(d, r.strategy)
    for v in d.chance_ids:
        if v in d.evidence:
            continue
        for a, b in zip(conditional_ce(r, v), fe.conditional_ce(v)):
            assert (a is None) == (b is None)
            if a is not None:
                assert abs(a - b) <= 1e-9


def test_voph_table(r1):
    got = {v: voph(r1, v).voph for v in "AOG"}
    for v, want in {"A": 7.68, "O": 3.26, "G": 1.61}.items():
        assert abs(got[v] - want) <= 0.01


def test_voph_frozen_numeric(r1):
    # values of the constrained program solved by multiplier bisection
    for v, want in {"A": 7.684916989250425, "O": 3.2598761192040513, "G": 1.6143725498969062}.items():
        assert voph(r1, v).voph == pytest.approx(want, abs=1e-7)


def test_hedge_report_contents(r1):
    rep = voph(r1, "G")
    assert abs(rep.expected_payoff(rep.payoffs)) < 1e-9
    assert rep.ce_ph == pytest.approx(rep.ce + rep.voph)
    for c, y in zip(rep.conditional_ce, rep.payoffs):
        assert c + y == pytest.approx(rep.ce_ph)
    assert rep.to_document()["states"][0]["state"] == "high"


@pytest.mark.parametrize("seed", range(10))
def test_voph_matches_numeric_program(seed):
    d = random_diagram(seed, RandomLimits(max_decisions=0))
    r = evaluate(d)
    for v in d.chance_ids:
        if v not in d.evidence:
            assert abs(voph(r, v).voph - voph_numeric(d, r.strategy, v).voph) <= 1e-4


def test_linear_voph_is_zero(oil_field):
    r = evaluate(oil_field.with_risk_aversion(0))
    rep = voph(r, "A")
    assert rep.voph == 0.0 and rep.payoffs == [0.0, 0.0]
    assert rep.notes


def test_voph_on_evidence_rejected(oil_field):
    r = evaluate(oil_field.with_evidence({"G": "low"}))
    with pytest.raises(AnalysisError):
        voph(r, "G")


def test_gold_futures_bound(oil_field, r1):
    rep = voph(r1, "G")
    deal = [-50.0, 100.0]
    assert rep.expected_payoff(deal) == pytest.approx(43.0, abs=1e-12)
    assert abs(deal_price_bound(rep, deal) - 44.61) <= 0.02


def test_deal_bound_degenerate_deals(r1):
    rep = voph(r1, "O")
    assert deal_price_bound(rep, [0.0, 0.0]) == rep.voph
    assert deal_price_bound(rep, rep.payoffs) == pytest.approx(rep.voph, abs=1e-12)
    with pytest.raises(AnalysisError):
        deal_price_bound(rep, [1.0])


@given(st.integers(0, 10**6), st.floats(0.2, 1.0))
def test_ce_invariant_under_renormalization(seed, a):
    d = random_diagram(seed)
    fn = d.utility_function
    other = d.with_utility(UtilitySpec(EXPONENTIAL, fn.gamma, a * fn.u0, a * fn.uinf + (1 - a) / 2))
    r, q = evaluate(d), evaluate(other)
    assert abs(r.ce - q.ce) <= 1e-6
    for v in d.chance_ids:
        if v not in d.evidence:
            assert abs(voph(r, v).voph - voph(q, v).voph) <= 1e-6
