"""
verification.py — Cross-checks between the rewrite engine and the oracle
Rule soundness on random firing sites, oracle replay of the scripted
derivations, probability-fragment bounds and the full check suite report.
"""

import json
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

from expressions import Atom, Context, Estim, Expr, PropEnc, canonicalize, positions, replace_at, subterm
from expr_parser import print_expr
from generators import all_props, random_prop, rule_sites
from oracle import (
    GRID_TOLERANCE, GridModel, Model, PropertyResult, ZeroWeightConditioning, _expect_equal, check_grid,
    check_requirements, expectation_decomposition, expectation_fixtures, oracle_eval,
    random_model, two_bit_quarter_models, verify_rules_numerically, OracleInvariantError,
)
from rewrite_engine import (
    RULES, DerivationTrace, DomainError, EngineError, RuleStrategy, derive_expectation_theorem,
    derive_product_rule, normalize,
)

logger = logging.getLogger(__name__)

NEEDS_VARIABLES = {"delta_as_prop", "prop_as_delta", "delta_completeness", "expand_complete_set"}
NEEDS_ATOMS = {"prop_encode", "two_valued", "tower", "tower_expand"}


# ─────────────────────────────────────────────────────────
# Rule soundness
# ─────────────────────────────────────────────────────────

def soundness_models(seed: int = 0, count: int = 4) -> List[Model]:
    rng = random.Random(f"soundness:{seed}")
    domains = {"x": (0, 1, 2), "y": (Fraction(-1), Fraction(1, 2))}
    return [random_model(rng, domains, ("A", "B")) for _ in range(count)]


def _firing(e: Expr, rule_name: str, strategy: RuleStrategy, kwargs: dict) -> Optional[Tuple[tuple, Expr]]:
    rule = strategy.rule(rule_name)
    for path in positions(e):
        node = subterm(e, path)
        out = rule.apply(node, strategy, **kwargs)
        if out is not None and canonicalize(out) != node:
            return path, canonicalize(out)
    return None


def check_rule_soundness(
    rule_name: str,
    models: Sequence[Model],
    strategy: Optional[RuleStrategy] = None,
    seed: int = 0,
    sites: int = 25,
) -> PropertyResult:
    """oracle(before) == oracle(after) for every firing of `rule_name` on random sites."""
    base = strategy or RuleStrategy()
    result = PropertyResult(f"soundness:{rule_name}")
    for m_index, model in enumerate(models):
        if rule_name in NEEDS_VARIABLES and not model.variables:
            continue
        if rule_name in NEEDS_ATOMS and not model.atoms:
            continue
        strategy = RuleStrategy(base.fuel, base.rules, base.bits, model.domains,
                                base.delta_as_prop, base.prop_as_delta)
        rng = random.Random(f"{rule_name}:{seed}:{m_index}")
        for site, kwargs in rule_sites(rng, rule_name, model.domains, model.atoms, sites):
            before = canonicalize(site)
            try:
                fired = _firing(before, rule_name, strategy, kwargs)
            except DomainError:
                fired = None
            if fired is None:
                result.skipped += 1
                continue
            path, replacement = fired
            after = canonicalize(replace_at(before, path, replacement))
            _expect_equal(result, before, after, model, rule=rule_name, path=list(path))
    if result.passed == 0 and result.failed == 0:
        result.notes.append("no firing site was generated")
    return result


def soundness_rules(strategy: RuleStrategy) -> List[str]:
    names = [r.name for r in strategy.active_rules()]
    for name, rule in RULES.items():
        if name not in names:
            names.append(name)
    return names


# ─────────────────────────────────────────────────────────
# Derivations under the oracle
# ─────────────────────────────────────────────────────────

def trace_values(trace: DerivationTrace, model: Model) -> List[Optional[Fraction]]:
    """Oracle value of every state of a trace; None where the conditioning has zero weight."""
    out = []
    for state in trace.states():
        try:
            out.append(oracle_eval(state, model))
        except ZeroWeightConditioning:
            out.append(None)
    return out


def check_trace(trace: DerivationTrace, model: Model) -> PropertyResult:
    result = PropertyResult(f"derivation:{trace.title}")
    if trace.replay() != trace.final or not trace.is_consistent():
        result.fail(reason="trace replay does not reproduce the final expression", trace=trace.to_dict())
        return result
    values = trace_values(trace, model)
    if any(v is None for v in values):
        result.skipped += 1
        return result
    if len(set(values)) == 1:
        result.passed += 1
    else:
        result.fail(states=[print_expr(s) for s in trace.states()], values=[str(v) for v in values],
                    model=model.to_dict())
    return result


def check_product_replay(models: Sequence[Model], strategy: Optional[RuleStrategy] = None) -> PropertyResult:
    """Every state of the product derivation is oracle-equal; models with P(A) = 0 are skipped."""
    result = PropertyResult("product_derivation")
    try:
        trace = derive_product_rule(strategy=strategy)
    except EngineError as e:
        result.fail(reason=str(e))
        return result
    for model in models:
        if oracle_eval(Estim(PropEnc(Atom("A")), Context()), model) == 0:
            result.skipped += 1
            continue
        result.merge(check_trace(trace, model))
    if result.skipped:
        result.notes.append(f"{result.skipped} models with P(A|I) = 0 skipped")
    return result


def check_expectation(models: Sequence[Model], strategy: Optional[RuleStrategy] = None) -> PropertyResult:
    """p_i ≥ 0, Σ p_i = 1, Σ x_i p_i = est(x | I), and the symbolic expectation derivation agrees."""
    result = PropertyResult("expectation_theorem")
    for model in models:
        for name, domain in model.variables:
            try:
                p, estimate = expectation_decomposition(model, name)
            except OracleInvariantError as e:
                result.fail(variable=name, reason=str(e), model=model.to_dict())
                continue
            derivation = derive_expectation_theorem(name, domain, strategy=strategy)
            for trace in (derivation.expansion, derivation.normalization):
                result.merge(check_trace(trace, model))
            if oracle_eval(derivation.expansion.final, model) != estimate:
                result.fail(variable=name, reason="expansion endpoint differs from est(x | I)")
    return result


def probability_fragment_props(seed: int = 0, sample: int = 200) -> List:
    """Every proposition of depth ≤ 2 over A, B and a seeded sample of depth-3 ones."""
    props = all_props(("A", "B"), 2)
    rng = random.Random(f"fragment:{seed}")
    props += [random_prop(rng, ("A", "B"), 3) for _ in range(sample)]
    return props


def check_probability_fragment(
    models: Sequence[Model],
    strategy: Optional[RuleStrategy] = None,
    props: Optional[Sequence] = None,
) -> PropertyResult:
    """normalize(est(n(P) | I)) keeps the oracle value of est(n(P) | I), which lies in [0, 1]."""
    result = PropertyResult("probability_bounds")
    for p in props if props is not None else probability_fragment_props():
        original = Estim(PropEnc(p), Context())
        normal, _ = normalize(original, strategy)
        for model in models:
            before = oracle_eval(original, model)
            after = oracle_eval(normal, model)
            if before == after and 0 <= after <= 1:
                result.passed += 1
            else:
                result.fail(expr=print_expr(original), normal_form=print_expr(normal), before=str(before),
                            after=str(after), model=model.to_dict())
    return result


# ─────────────────────────────────────────────────────────
# The check suite
# ─────────────────────────────────────────────────────────

@dataclass
class CheckReport:
    results: List[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def add(self, result: PropertyResult):
        logger.info(f"{result.name}: {result.passed} passed, {result.failed} failed, {result.skipped} skipped")
        self.results.append(result)

    def minimal_counterexample(self) -> Optional[Dict[str, Any]]:
        """The failing case with the shortest serialized form."""
        found = [dict(c, property=r.name) for r in self.results for c in r.counterexamples]
        if not found:
            return None
        return min(found, key=lambda c: (len(json.dumps(c, sort_keys=True, default=str)), c["property"]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": "pass" if self.ok else "fail",
            "properties": [r.to_dict() for r in self.results],
            "minimal_counterexample": self.minimal_counterexample(),
        }

    def render(self) -> str:
        lines = []
        for r in self.results:
            mark = "✅" if r.ok else "❌"
            lines.append(f"{mark} {r.name}: {r.passed} passed, {r.failed} failed, {r.skipped} skipped")
            for note in r.notes:
                lines.append(f"   {note}")
        example = self.minimal_counterexample()
        if example:
            lines.append("")
            lines.append("minimal counterexample:")
            lines.append(json.dumps(example, indent=2, sort_keys=True, default=str))
        lines.append("")
        lines.append("all properties hold" if self.ok else "property failures found")
        return "\n".join(lines)


def default_grids() -> List[GridModel]:
    return [
        GridModel.from_density(lambda x: 1.0 + 0 * x),
        GridModel.from_density(lambda x: 2 * x),
    ]


def run_check(
    model: Optional[Model] = None,
    trials: int = 1000,
    seed: int = 0,
    workers: int = 1,
    strategy: Optional[RuleStrategy] = None,
    tolerance: float = GRID_TOLERANCE,
) -> CheckReport:
    """
    Requirements 0–3, the probability rules, rule soundness, derivation replays,
    the expectation theorem, probability bounds and (when present) grid checks.
    Without a model file, seeded random models are used.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    strategy = strategy or RuleStrategy()
    rng = random.Random(f"check:{seed}")
    report = CheckReport()

    models = [model] if model is not None else [
        random_model(rng, {"x": (0, 1, 2), "y": (Fraction(-1), Fraction(1, 2))}, ("A", "B")),
        random_model(rng, {"x": (-1, 4)}, ("A",)),
    ]
    for m in models:
        for result in check_requirements(m, trials, seed, workers).values():
            report.add(result)

    two_atom = [m for m in models if {"A", "B"} <= set(m.atoms)]
    if model is None:
        two_atom = [random_model(rng, {}, ("A", "B")) for _ in range(trials)]
    rules = {name: PropertyResult(f"{name}_rule") for name in ("negation", "sum", "product")}
    for m in two_atom:
        for name, result in verify_rules_numerically(m).items():
            rules[name].merge(result)
    for result in rules.values():
        if not two_atom:
            result.notes.append("model has no atoms A and B")
        skipped_notes = [n for n in result.notes if n.startswith("skipped")]
        result.notes = [n for n in result.notes if not n.startswith("skipped")]
        if skipped_notes:
            result.notes.append(f"skipped on {len(skipped_notes)} models with P(A|I) = 0")
        report.add(result)

    sound = soundness_models(seed) + ([model] if model is not None else []) + two_bit_quarter_models()
    for name in soundness_rules(strategy):
        report.add(check_rule_soundness(name, sound, strategy, seed))

    two_bit = [random_model(rng, {}, ("A", "B")) for _ in range(100)]
    report.add(check_product_replay(two_bit, strategy))

    expectation_models = expectation_fixtures() + [m for m in models if m.variables]
    report.add(check_expectation(expectation_models, strategy))

    report.add(check_probability_fragment(two_bit_quarter_models(), strategy))

    grids = [model.grid] if model is not None and model.grid is not None else default_grids()
    merged: Dict[str, PropertyResult] = {}
    for g in grids:
        for name, result in check_grid(g, seed, tolerance=tolerance).items():
            merged.setdefault(name, PropertyResult(name)).merge(result)
    for result in merged.values():
        report.add(result)
    return report
