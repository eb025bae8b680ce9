"""Command-line front end: ``dcirc <verb> <diagram.json> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Sequence

from . import analysis
from .circuit import circuit_stats, dump_circuit
from .errors import AnalysisError, DiagramError
from .model import DECISION, InfluenceDiagram, load_diagram
from .oracle import RandomLimits
from .verify import Caps, verify_diagram, verify_random

log = logging.getLogger("dcirc")

EXIT_OK, EXIT_INPUT, EXIT_ANALYSIS, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# policy strings


def parse_policy(diagram: InfluenceDiagram, decision: str, text: str) -> dict[tuple[int, ...], int]:
    """Parse ``"T=test;R=positive=drill,..."`` into {parent instantiation: alternative}.

    Each comma-separated entry is ``pattern=alternative``; a pattern is
    ``parent=state`` pairs joined by ``;`` and may leave parents out, in
    which case it covers every state of them. An entry with no pattern (or
    ``*``) covers every instantiation.
    """
    if decision not in diagram or diagram.var(decision).kind != DECISION:
        raise AnalysisError(f"{decision!r} is not a decision")
    var = diagram.var(decision)
    out: dict[tuple[int, ...], int] = {}
    for entry in (e.strip() for e in text.split(",")):
        if not entry:
            continue
        pattern, _, alt_label = entry.rpartition("=")
        if alt_label not in var.states:
            raise AnalysisError(f"{decision!r} has no alternative {alt_label!r}")
        alt = var.states.index(alt_label)
        fixed: dict[int, int] = {}
        if pattern.strip() not in ("", "*"):
            for pair in pattern.split(";"):
                name, eq, state = (x.strip() for x in pair.partition("="))
                if not eq or name not in var.parents:
                    raise AnalysisError(f"{pair!r} does not name a parent of {decision!r}")
                states = diagram.var(name).states
                if state not in states:
                    raise AnalysisError(f"{name!r} has no state {state!r}")
                i = var.parents.index(name)
                if i in fixed and fixed[i] != states.index(state):
                    raise AnalysisError(f"conflicting states for {name!r} in {entry!r}")
                fixed[i] = states.index(state)
        for pa in diagram.parent_instantiations(decision):
            if all(pa[i] == s for i, s in fixed.items()):
                if out.get(pa, alt) != alt:
                    raise AnalysisError(f"policy entries disagree on {dict(zip(var.parents, pa))}")
                out[pa] = alt
    if not out:
        raise AnalysisError("empty policy")
    return out


def load_policy_file(diagram: InfluenceDiagram, decision: str, path: str) -> dict[tuple[int, ...], int]:
    """A JSON object ``{pattern: alternative}`` or a list of ``{"parents": {...}, "alternative": ...}``."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        entries = [f"{k}={v}" for k, v in doc.items()]
    elif isinstance(doc, list):
        entries = [";".join(f"{p}={s}" for p, s in e.get("parents", {}).items()) + "=" + e["alternative"]
                   for e in doc]
    else:
        raise AnalysisError("policy file must hold an object or a list")
    return parse_policy(diagram, decision, ",".join(entries))


# --------------------------------------------------------------------------
# output helpers


def _fmt(x: float | None, unit: str = "") -> str:
    if x is None:
        return "undefined"
    s = f"{x + 0.0:.2f}"
    return f"{s} {unit}" if unit else s


def _emit(args, doc: dict, lines: list[str]) -> None:
    if args.format == "json":
        print(json.dumps(doc, indent=2))
    else:
        print("\n".join(lines))


def _diagram(args) -> InfluenceDiagram:
    d = load_diagram(args.file)
    log.info("loaded %s: %d variables", args.file, len(d.variables))
    return d


def _evaluate(args, d: InfluenceDiagram) -> analysis.EvaluationResult:
    return analysis.evaluate(d, prune=not args.no_prune)


def _stats_line(stats: dict) -> str:
    kinds = ", ".join(f"{k} {v}" for k, v in stats["nodes"].items())
    return f"Circuit: {stats['node_count']} nodes ({kinds}), {stats['edges']} edges, depth {stats['depth']}"


# --------------------------------------------------------------------------
# verbs


def cmd_eval(args) -> int:
    d = _diagram(args)
    r = _evaluate(args, d)
    unit = d.value_unit
    doc = r.to_document()
    lines = [f"Diagram: {d.name}", f"CE = {_fmt(r.ce, unit)}", f"P(e) = {r.p_evidence:.6g}"]
    if d.decision_order:
        lines.append("Optimal strategy:")
        lines += [f"  {row}" for row in r.strategy.describe(d)]
    for dec, pa in r.ties:
        lines.append(f"  note: tie at {dec} under {dict(zip(d.var(dec).parents, pa))}; lowest index kept")
    lines.append(_stats_line(doc["circuit"]))
    if args.debug:
        doc["eu"], doc["g_e_prime"], doc["g_e"] = r.eu, r.g_e_prime, r.g_e
        lines += [f"EU = {r.eu:.12g}", f"g(e') = {r.g_e_prime:.12g}", f"g(e) = {r.g_e:.12g}"]
    _emit(args, doc, lines)
    return EXIT_OK


def cmd_compare(args) -> int:
    d = _diagram(args)
    if (args.policy is None) == (args.policy_file is None):
        raise UsageError("compare: give exactly one of --policy or --policy-file")
    policy = (parse_policy(d, args.decision, args.policy) if args.policy is not None
              else load_policy_file(d, args.decision, args.policy_file))
    r = _evaluate(args, d)
    ce = analysis.compare_strategy(r, args.decision, policy)
    unit = d.value_unit
    modified = r.strategy.with_policy(args.decision, policy)
    doc = {"decision": args.decision, "unit": unit, "ce": ce, "ce_optimal": r.ce, "delta": ce - r.ce,
           "policy": modified.to_document(d)[args.decision]}
    lines = [f"CE(s') = {_fmt(ce, unit)}", f"CE(s*) = {_fmt(r.ce, unit)}",
             f"delta = {_fmt(ce - r.ce, unit)}", f"Policy for {args.decision}:"]
    lines += [f"  {row}" for row in modified.describe(d) if row.split(" ")[0].rstrip(":") == args.decision]
    _emit(args, doc, lines)
    return EXIT_OK


def cmd_voa(args) -> int:
    d = _diagram(args)
    if args.decision not in d or d.var(args.decision).kind != DECISION:
        raise AnalysisError(f"{args.decision!r} is not a decision")
    states = d.var(args.decision).states
    if args.alternative not in states:
        raise AnalysisError(f"{args.decision!r} has no alternative {args.alternative!r}")
    r = _evaluate(args, d)
    va = analysis.value_of_alternative(r, args.decision, states.index(args.alternative))
    unit = d.value_unit
    share = va.indicator_derivative / r.g_e_prime
    doc = {"decision": args.decision, "alternative": args.alternative, "unit": unit, "voa": va.voa,
           "ce": va.ce, "ce_without": va.ce_without, "usage": va.usage, "usage_share": share,
           "strategy_without": va.strategy_without.to_document(d)}
    lines = [f"VoA({args.decision}={args.alternative}) = {_fmt(va.voa, unit)}",
             f"CE(s*) = {_fmt(va.ce, unit)}", f"CE without {args.alternative} = {_fmt(va.ce_without, unit)}",
             f"Usage: {va.usage} (share {share:.6g})", "Best strategy without it:"]
    lines += [f"  {row}" for row in va.strategy_without.describe(d)]
    if args.debug:
        doc["indicator_derivative"] = va.indicator_derivative
        lines.append(f"dg(e')/dlambda = {va.indicator_derivative:.12g}")
    _emit(args, doc, lines)
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def cmd_risk_curve(args) -> int:
    d = _diagram(args)
    if args.points < 1:
        raise AnalysisError("empty gamma grid")
    if args.points == 1:
        grid = [args.gamma_min]
    else:
        step = (args.gamma_max - args.gamma_min) / (args.points - 1)
        grid = [args.gamma_min + i * step for i in range(args.points)]
    resolve = _float_list(args.resolve_at) if args.resolve_at else []
    curve = analysis.risk_curve(d, grid, resolve_at=resolve, prune=not args.no_prune)
    csv_text = curve.to_csv()
    doc = {"unit": curve.unit, "gammas": curve.gammas, "curves": curve.curves,
           "strategies": {k: s.to_document(d) for k, s in curve.strategies.items()},
           "closed_loop": [{"gamma": g, "ce": c} for g, c in curve.closed_loop.items()],
           "crossovers": _crossovers(curve)}
    if args.out:
        Path(args.out).write_text(csv_text)
        lines = [f"wrote {len(grid)} rows x {len(curve.curves)} curves to {args.out}"]
        for label, s in curve.strategies.items():
            lines.append(f"{label}: " + "; ".join(s.describe(d)))
        for g, c in curve.closed_loop.items():
            lines.append(f"CE at gamma={g:g} (re-solved) = {_fmt(c, curve.unit)}")
        for item in doc["crossovers"]:
            lines.append(f"crossover {item['a']} / {item['b']} near gamma={item['gamma']:.6g}")
        _emit(args, doc, lines)
    elif args.format == "json":
        _emit(args, doc, [])
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _crossovers(curve: analysis.RiskCurve) -> list[dict]:
    labels = list(curve.curves)
    out = []
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            out += [{"a": a, "b": b, "gamma": g} for g in curve.crossovers(a, b)]
    return out


def cmd_voph(args) -> int:
    d = _diagram(args)
    r = _evaluate(args, d)
    targets = [args.node] if args.node else [v for v in d.chance_ids if v not in d.evidence]
    unit = d.value_unit
    reports = [analysis.voph(r, v) for v in targets]
    doc = {"unit": unit, "ce": r.ce, "reports": [rep.to_document() for rep in reports]}
    width = max([len("Variable")] + [len(v) for v in targets])
    lines = [f"CE(s*) = {_fmt(r.ce, unit)}", f"{'Variable':<{width}}  VoPH ({unit})"]
    lines += [f"{rep.variable:<{width}}  {_fmt(rep.voph)}" for rep in reports]
    for rep in reports:
        lines.append(f"Hedge on {rep.variable} (E[CE|X] = {_fmt(rep.ce_ph, unit)}):")
        for s, p, c, y in zip(rep.states, rep.probabilities, rep.conditional_ce, rep.payoffs):
            lines.append(f"  {s}: P = {p:.4f}, CE|x = {_fmt(c, unit)}, payoff = {_fmt(y, unit)}")
        lines += [f"  note: {n}" for n in rep.notes]
    _emit(args, doc, lines)
    return EXIT_OK


def cmd_compile(args) -> int:
    d = _diagram(args)
    circuit = analysis.compile_cached(d, prune=not args.no_prune)
    stats = circuit_stats(circuit)
    doc = {"pruned": not args.no_prune, "stats": stats}
    lines = [_stats_line(stats)]
    if args.dump:
        Path(args.dump).write_text(dump_circuit(circuit, d) + "\n")
        doc["dump"] = args.dump
        lines.append(f"wrote {args.dump}")
    _emit(args, doc, lines)
    return EXIT_OK


_CAP_FIELDS = {"fixed_strategies": int, "gammas": int, "finite_differences": "bool",
               "closed_loop": "bool"}
_LIMIT_FIELDS = {"max_chance": int, "max_states": int, "max_decisions": int, "max_alternatives": int,
                 "max_parents": int, "max_value_parents": int, "max_strategies": int, "max_joint": int,
                 "zero_probability": float, "unavailable": float, "evidence_probability": float,
                 "linear_probability": float}


def parse_caps(text: str | None, seeds: int) -> Caps:
    """``key=value`` pairs separated by commas; keys are Caps or RandomLimits fields."""
    caps, limits = {"seeds": seeds}, {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        key, eq, value = (x.strip() for x in item.partition("="))
        if not eq:
            raise UsageError(f"--caps entry {item!r} is not key=value")
        if key in _CAP_FIELDS:
            conv = _CAP_FIELDS[key]
            caps[key] = value.lower() in ("1", "true", "on", "yes") if conv == "bool" else conv(value)
        elif key in _LIMIT_FIELDS:
            limits[key] = _LIMIT_FIELDS[key](value)
        else:
            raise UsageError(f"unknown cap {key!r}")
    return Caps(limits=RandomLimits(**limits), **caps)


def cmd_verify(args) -> int:
    if (args.file is None) == (args.random is None):
        raise UsageError("verify: give a diagram file or --random seeds=K")
    if args.random is not None:
        text = args.random.split("=", 1)[-1]
        try:
            seeds = int(text)
        except ValueError as exc:
            raise UsageError(f"bad seed count {args.random!r}") from exc
        caps = parse_caps(args.caps, seeds)
        report = verify_random(caps, progress=lambda s: log.info("seed %d done", s))
    else:
        report = verify_diagram(_diagram(args), parse_caps(args.caps, 1))
    doc = report.to_document()
    if args.format == "text":
        lines = [f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: max error {c['max_abs_error']:.3g}"
                 f" (tol {c['tolerance']:g}, {c['count']} checks)" for c in doc["checks"]]
        _emit(args, doc, lines)
    else:
        _emit(args, doc, [])
    return EXIT_OK if report.passed else EXIT_INTERNAL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--no-prune", action="store_true", help="skip the structural-zero pass")
    common.add_argument("--debug", action="store_true", help="show raw utilities and tracebacks")

    parser = _Parser(prog="dcirc", description="Decision-circuit evaluation and sensitivity analysis.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", parents=[common], help="CE, optimal strategy and circuit size")
    p.add_argument("file")
    p.set_defaults(run=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="CE after changing one decision's policy")
    p.add_argument("file")
    p.add_argument("--decision", required=True)
    p.add_argument("--policy")
    p.add_argument("--policy-file")
    p.set_defaults(run=cmd_compare)

    p = sub.add_parser("voa", parents=[common], help="value of one alternative")
    p.add_argument("file")
    p.add_argument("--decision", required=True)
    p.add_argument("--alternative", required=True)
    p.set_defaults(run=cmd_voa)

    p = sub.add_parser("risk-curve", parents=[common], help="CE versus risk aversion")
    p.add_argument("file")
    p.add_argument("--gamma-min", type=float, required=True)
    p.add_argument("--gamma-max", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--resolve-at")
    p.add_argument("--out")
    p.set_defaults(run=cmd_risk_curve)

    p = sub.add_parser("voph", parents=[common], help="value of perfect hedging")
    p.add_argument("file")
    p.add_argument("--node")
    p.set_defaults(run=cmd_voph)

    p = sub.add_parser("compile", parents=[common], help="compile and optionally dump the circuit")
    p.add_argument("file")
    p.add_argument("--dump")
    p.set_defaults(run=cmd_compile)

    p = sub.add_parser("verify", parents=[common], help="cross-check against the brute-force oracle")
    p.add_argument("file", nargs="?")
    p.add_argument("--random", metavar="seeds=K")
    p.add_argument("--caps", metavar="KEY=VALUE,...")
    p.set_defaults(run=cmd_verify)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("DCIRC_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = None
    try:
        args = build_parser().parse_args(argv)
        return args.run(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except (DiagramError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except Exception as exc:  # noqa: BLE001
        if args is not None and getattr(args, "debug", False):
            traceback.print_exc()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
