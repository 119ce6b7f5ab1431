import random
from fractions import Fraction

import pytest

from expressions import Atom, Const, Context, Equals, Estim, Or, PropEnc, Unknown
from expr_parser import parse_expr, print_expr
from generators import random_expr
from rewrite_engine import (
    DEFAULT_FUEL, DomainError, EngineError, FuelExhausted, RULES, RewriteRule, RuleStrategy,
    apply_rule, derive_expectation_theorem, derive_negation_rule, derive_product_rule, derive_sum_rule,
    normalize, rule_delta_as_prop, rule_linear_sum, rule_prop_as_delta, rule_prop_encode, rule_scalar_out,
    rule_tower, rule_tower_expand, rule_two_valued, to_probability_form,
)
from rewrite_engine import DerivationTrace

A, B = Atom("A"), Atom("B")
P = parse_expr


def normal(text, strategy=None):
    return normalize(P(text), strategy)[0]


class TestKnownEval:
    def test_square_of_assigned_value(self):
        assert normal("est(x*x | x=3, I)") == Const(9)

    def test_assigned_parameter(self):
        assert normal("est(alpha | alpha=5, I)") == Const(5)

    def test_delta_at_assigned_value(self):
        assert normal("est(delta(x, 2) | x=2, I)") == Const(1)
        assert normal("est(delta(x, 2) | x=3, I)") == Const(0)

    def test_asserted_proposition(self):
        assert normal("est(n(A) | A, I)") == Const(1)
        assert normal("est(n(A or B) | not A, not B, I)") == Const(0)


class TestLinearity:
    def test_sum_splits(self):
        assert rule_linear_sum(P("est(x + y | I)"), RuleStrategy()) == P("est(x | I) + est(y | I)")

    def test_known_summand_evaluated(self):
        assert normal("est(x + 2 | I)") == P("est(x | I) + 2")

    def test_n_ary_sum(self):
        assert normal("est(x + y + z | I)") == P("est(x | I) + est(y | I) + est(z | I)")

    def test_constant_coefficients_pulled(self):
        assert rule_linear_sum(P("est(x - 2*y | I)"), RuleStrategy()) == P("est(x | I) - 2*est(y | I)")

    def test_coefficients_kept_inside_on_request(self):
        out = rule_linear_sum(P("est(x + 2*y | I)"), RuleStrategy(), pull_coefficients=False)
        assert out == P("est(x | I) + est(2*y | I)")

    def test_scalar_out_constant(self):
        assert normal("est(2*x | I)") == P("2*est(x | I)")

    def test_scalar_out_assigned_unknown(self):
        assert normal("est(alpha*x | alpha=5, I)") == P("5*est(x | alpha=5, I)")

    def test_scalar_out_closed_estimation(self):
        assert normal("est(est(b | a=1, I) * a | I)") == P("est(b | a=1, I) * est(a | I)")

    def test_scalar_out_needs_unknown_rest(self):
        assert rule_scalar_out(P("est(x | I)"), RuleStrategy()) is None
        assert rule_scalar_out(P("est(x*y | I)"), RuleStrategy()) is None


class TestTower:
    def test_partial_estimation_collapses(self):
        assert rule_tower(P("est(est(a*b | a, I) | I)"), RuleStrategy()) == P("est(a*b | I)")

    def test_normalize_uses_tower(self):
        out, trace = normalize(P("est(est(y | x, I) | I)"))
        assert out == P("est(y | I)")
        assert [s.rule for s in trace.steps] == ["tower"]

    def test_degenerate_nesting(self):
        assert normal("est(est(y | I) | I)") == P("est(y | I)")

    def test_different_background_does_not_collapse(self):
        assert rule_tower(P("est(est(y | x, J) | I)"), RuleStrategy()) is None

    def test_expand_introduces_parameter(self):
        out = rule_tower_expand(P("est(y | I)"), RuleStrategy(), parameter=Unknown("x"))
        assert out == P("est(est(y | x, I) | I)")
        assert rule_tower(out, RuleStrategy()) == P("est(y | I)")


class TestTwoValued:
    def test_substitutes_one_into_parameters(self):
        out = rule_two_valued(P("a*est(b | a, I)"), RuleStrategy(bits={"a"}))
        assert out == P("a*est(b | a=1, I)")

    def test_idempotent_bit(self):
        assert rule_two_valued(P("a*a"), RuleStrategy(bits={"a"})) == Unknown("a")

    def test_declared_binary_domain_certifies(self):
        out = rule_two_valued(P("a*est(b | a, I)"), RuleStrategy(domains={"a": (0, 1)}))
        assert out == P("a*est(b | a=1, I)")

    def test_uncertified_bit_raises(self):
        with pytest.raises(DomainError):
            rule_two_valued(P("a*est(b | a, I)"), RuleStrategy(), bit=Unknown("a"))

    def test_uncertified_bit_is_left_alone(self):
        assert normal("a*est(b | a, I)") == P("a*est(b | a, I)")

    def test_encodings_are_two_valued(self):
        out = rule_two_valued(P("n(A)*est(n(B) | n(A), I)"), RuleStrategy())
        assert out == P("n(A)*est(n(B) | A, I)")


class TestEncodingRules:
    def test_disjunction(self):
        assert rule_prop_encode(PropEnc(Or(A, B)), RuleStrategy()) == P("n(A) + n(B) - n(A)*n(B)")

    def test_atoms_do_not_encode(self):
        assert rule_prop_encode(PropEnc(A), RuleStrategy()) is None

    def test_double_negation(self):
        out, trace = normalize(P("n(not not A)"))
        assert out == P("n(A)")
        assert len(trace.steps) == 2

    def test_delta_as_proposition(self):
        assert rule_delta_as_prop(P("delta(x, 2)"), RuleStrategy()) == PropEnc(Equals("x", 2))
        assert rule_prop_as_delta(P("n(x=2)"), RuleStrategy()) == P("delta(2, x)")

    def test_delta_rules_are_optional(self):
        assert normal("est(delta(x, 2) | I)") == P("est(delta(x, 2) | I)")
        assert normal("est(delta(x, 2) | I)", RuleStrategy(delta_as_prop=True)) == P("est(n(x=2) | I)")

    def test_delta_completeness(self):
        strategy = RuleStrategy(domains={"x": (1, 2, 3)})
        assert normal("delta(1, x) + delta(2, x) + delta(3, x)", strategy) == Const(1)
        assert normal("delta(1, x) + delta(2, x) + delta(3, x) + y", strategy) == P("1 + y")
        assert normal("delta(1, x) + delta(2, x)", strategy) == P("delta(1, x) + delta(2, x)")


class TestNormalize:
    def test_negation(self):
        out, trace = normalize(P("est(n(not A) | I)"))
        assert print_expr(out) == "1 - est(n(A) | I)"
        assert [s.rule for s in trace.steps] == ["prop_encode", "linear_sum"]

    def test_disjunction(self):
        out = normal("est(n(A or B) | I)")
        assert out == P("est(n(A) | I) + est(n(B) | I) - est(n(A)*n(B) | I)")

    def test_constant_has_empty_trace(self):
        out, trace = normalize(Const(5))
        assert out == Const(5)
        assert trace.steps == []

    def test_already_normal(self):
        out, trace = normalize(P("est(x | I)"))
        assert out == P("est(x | I)")
        assert not trace.steps

    def test_default_fuel(self):
        assert RuleStrategy().fuel == DEFAULT_FUEL == 10_000

    def test_fuel_exhausted_carries_partial_trace(self):
        with pytest.raises(FuelExhausted) as info:
            normalize(P("est(n(not A) | I)"), RuleStrategy(fuel=1))
        assert len(info.value.trace.steps) == 1

    def test_delta_loop_runs_out_of_fuel(self):
        strategy = RuleStrategy(fuel=50, delta_as_prop=True, prop_as_delta=True)
        with pytest.raises(FuelExhausted) as info:
            normalize(P("est(delta(x, 2) | I)"), strategy)
        assert len(info.value.trace.steps) == 50

    def test_nonpositive_fuel(self):
        with pytest.raises(ValueError):
            RuleStrategy(fuel=0)

    def test_traces_replay(self):
        rng = random.Random(17)
        domains = {"x": (Fraction(0), Fraction(1), Fraction(2))}
        for _ in range(200):
            e = random_expr(rng, domains, ("A", "B"), 3)
            out, trace = normalize(e)
            assert trace.replay() == out
            assert trace.is_consistent()
            assert normalize(out)[1].steps == []

    def test_trace_render(self):
        _, trace = normalize(P("est(n(not A) | I)"))
        lines = trace.render().splitlines()
        assert lines[0] == "step 1: [prop_encode @ 0] est(n(not A) | I) ⇒ est(1 - n(A) | I)"
        assert lines[1].startswith("step 2: [linear_sum @ root]")
        assert "(" + RULES["prop_encode"].anchor + ")" in trace.render(anchors=True)

    def test_trace_dict(self):
        _, trace = normalize(P("est(n(not A) | I)"))
        data = trace.to_dict()
        assert data["final"] == "1 - est(n(A) | I)"
        assert [s["rule"] for s in data["steps"]] == ["prop_encode", "linear_sum"]

    def test_injected_rule_replaces_default(self):
        calls = []

        def spy(e, strategy, **kwargs):
            calls.append(e)
            return RULES["linear_sum"].apply(e, strategy, **kwargs)

        strategy = RuleStrategy().with_rules(RewriteRule("linear_sum", "spy", spy))
        assert normal("est(x + y | I)", strategy) == P("est(x | I) + est(y | I)")
        assert calls


class TestApplyRule:
    def test_rule_must_match(self):
        trace = DerivationTrace(P("est(x | I)"), P("est(x | I)"))
        with pytest.raises(EngineError):
            apply_rule(trace, "linear_sum")


class TestDerivations:
    def test_negation_rule(self):
        trace = derive_negation_rule()
        assert trace.final == P("1 - est(n(A) | I)")
        assert len(trace.steps) == 2

    def test_sum_rule(self):
        trace = derive_sum_rule()
        assert trace.final == P("est(n(A) | I) + est(n(B) | I) - est(n(A)*n(B) | I)")

    def test_product_rule(self):
        trace = derive_product_rule()
        assert trace.initial == P("est(n(A)*n(B) | I)")
        assert [s.rule for s in trace.steps] == ["tower_expand", "scalar_out", "two_valued", "scalar_out"]
        assert trace.states()[1:4] == [
            P("est(est(n(A)*n(B) | n(A), I) | I)"),
            P("est(n(A)*est(n(B) | n(A), I) | I)"),
            P("est(n(A)*est(n(B) | A, I) | I)"),
        ]
        assert print_expr(trace.final) == "est(n(A) | I) * est(n(B) | A, I)"
        assert trace.replay() == trace.final
        assert trace.is_consistent()

    def test_product_rule_needs_distinct_propositions(self):
        with pytest.raises(EngineError):
            derive_product_rule(A, A)

    def test_expectation_over_binary_domain(self):
        d = derive_expectation_theorem("x", (0, 1))
        assert d.expansion.final == P("est(delta(1, x) | I)")
        assert d.normalization.final == Const(1)

    def test_expectation_over_three_values(self):
        d = derive_expectation_theorem("x", (1, 2, 3))
        assert d.expansion.final == P("est(delta(1, x) | I) + 2*est(delta(2, x) | I) + 3*est(delta(3, x) | I)")
        assert [s.rule for s in d.expansion.steps] == [
            "expand_complete_set", "linear_sum", "scalar_out", "scalar_out",
        ]
        assert [s.rule for s in d.normalization.steps] == ["linear_merge", "delta_completeness", "known_eval"]
        assert d.normalization.final == Const(1)
        assert d.to_dict()["domain"] == ["1", "2", "3"]

    def test_expectation_of_a_point_at_zero(self):
        d = derive_expectation_theorem("x", (0,))
        assert d.expansion.final == Const(0)
        assert [s.rule for s in d.expansion.steps] == ["expand_complete_set", "known_eval"]
        assert d.normalization.final == Const(1)

    def test_expectation_needs_domain(self):
        with pytest.raises(DomainError):
            derive_expectation_theorem("x")

    def test_expectation_domain_from_strategy(self):
        d = derive_expectation_theorem(Unknown("x"), strategy=RuleStrategy(domains={"x": (0, 1)}))
        assert d.domain == (0, 1)


class TestProbabilityForm:
    def test_single_event(self):
        assert to_probability_form(P("est(n(A) | I)")) == "P(A|I)"

    def test_product_rule(self):
        assert to_probability_form(derive_product_rule().final) == "P(A|I)P(B|A,I)"

    def test_negation_rule(self):
        assert to_probability_form(derive_negation_rule().final) == "1 − P(A|I)"

    def test_sum_rule(self):
        assert to_probability_form(derive_sum_rule().final) == "P(A|I) + P(B|I) − P(A ∧ B|I)"

    def test_delta_event(self):
        assert to_probability_form(P("est(delta(2, x) | I)")) == "P(x=2|I)"

    def test_expectation(self):
        assert to_probability_form(P("est(x | I)")) == "E(x|I)"
        d = derive_expectation_theorem("x", (1, 2, 3))
        assert to_probability_form(d.expansion.final) == "P(x=1|I) + 2P(x=2|I) + 3P(x=3|I)"

    def test_context_with_negation(self):
        assert to_probability_form(Estim(PropEnc(B), Context("I", (), (A,)))) == "P(B|A,I)"
        assert to_probability_form(P("est(n(B) | not A, I)")) == "P(B|¬A,I)"
