"""Decision circuits for influence diagrams and their sensitivity analyses."""

from importlib import resources

from .analysis import (EvaluationResult, HedgeReport, RiskCurve, ce_of_gamma, compare_strategies,
                       compare_strategy, conditional_ce, deal_price_bound, evaluate, evaluate_at,
                       risk_curve, risk_derivative, strategy_delta, value_of_alternative, voph)
from .circuit import DecisionCircuit, circuit_stats, compile_diagram, prune_circuit
from .errors import (AnalysisError, DcircError, DiagramError, NormalizationError, ParseError,
                     UnavailableAlternativeError, ValidationError)
from .model import InfluenceDiagram, Variable, load_diagram, parse_diagram, serialize_diagram
from .sweep import Strategy, extract_strategy, sweep_down, sweep_up
from .utility import UtilityFunction, UtilitySpec, local_risk_aversion

__version__ = "0.1.0"


def example(name: str) -> InfluenceDiagram:
    """Bundled example diagram: ``"oil_field"`` (no decisions) or ``"wildcatter"`` (test and drill decisions)."""
    return parse_diagram(resources.files(__package__).joinpath("data", f"{name}.json").read_text())


__all__ = [
    "AnalysisError", "DcircError", "DecisionCircuit", "DiagramError", "EvaluationResult", "HedgeReport",
    "InfluenceDiagram", "NormalizationError", "ParseError", "RiskCurve", "Strategy",
    "UnavailableAlternativeError", "UtilityFunction", "UtilitySpec", "ValidationError", "Variable",
    "ce_of_gamma", "circuit_stats", "compare_strategies", "compare_strategy", "compile_diagram",
    "conditional_ce", "deal_price_bound", "evaluate", "evaluate_at", "example", "extract_strategy",
    "load_diagram", "local_risk_aversion", "parse_diagram", "prune_circuit", "risk_curve",
    "risk_derivative", "serialize_diagram", "strategy_delta", "sweep_down", "sweep_up",
    "value_of_alternative", "voph",
]
