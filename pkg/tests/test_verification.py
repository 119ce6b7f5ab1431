import json
import random
from fractions import Fraction

import pytest

from expressions import Add, Const, Estim, Mul, canonicalize
from oracle import PropertyResult, expectation_fixtures, random_model, two_bit_model, two_bit_quarter_models
from rewrite_engine import RULES, RewriteRule, RuleStrategy, derive_product_rule
from verification import (
    CheckReport, check_expectation, check_probability_fragment, check_product_replay, check_rule_soundness,
    check_trace, probability_fragment_props, run_check, soundness_models, soundness_rules,
)


def broken_linear_sum(e, strategy, **_):
    """Splits a sum but forgets its last summand."""
    if not isinstance(e, Estim) or not isinstance(e.body, Add):
        return None
    return canonicalize(Add(tuple(Estim(t, e.ctx) for t in e.body.terms[:-1])))


def broken_scalar_out(e, strategy, **kwargs):
    """Pulls known factors out twice."""
    out = RULES["scalar_out"].apply(e, strategy, **kwargs)
    return None if out is None else canonicalize(Mul((Const(2), out)))


BROKEN_SUM = RewriteRule("linear_sum", "broken", broken_linear_sum)
BROKEN_SCALAR = RewriteRule("scalar_out", "broken", broken_scalar_out)


def off_by_one(name):
    """The named rule, with one added to whatever it produces."""
    rule = RULES[name]

    def apply(e, strategy, **kwargs):
        out = rule.apply(e, strategy, **kwargs)
        return None if out is None else canonicalize(Add((out, Const(1))))

    return RewriteRule(name, "off by one", apply, scripted=rule.scripted)


@pytest.fixture(scope="module")
def models():
    return soundness_models(seed=0) + two_bit_quarter_models()


class TestRuleSoundness:
    @pytest.mark.parametrize("rule", sorted(RULES))
    def test_rule_is_sound(self, rule, models):
        result = check_rule_soundness(rule, models)
        assert result.ok, result.counterexamples[:1]
        assert result.passed > 0

    def test_every_rule_is_checked(self):
        assert set(soundness_rules(RuleStrategy())) == set(RULES)

    def test_broken_sum_rule_is_caught(self, models):
        strategy = RuleStrategy(rules=(BROKEN_SUM,))
        result = check_rule_soundness("linear_sum", models, strategy)
        assert not result.ok
        assert result.counterexamples[0]["rule"] == "linear_sum"

    def test_broken_scalar_rule_is_caught(self, models):
        strategy = RuleStrategy(rules=(BROKEN_SCALAR,))
        assert not check_rule_soundness("scalar_out", models, strategy).ok

    @pytest.mark.parametrize("rule", sorted(RULES))
    def test_any_corrupted_rule_is_caught(self, rule, models):
        strategy = RuleStrategy(rules=(off_by_one(rule),))
        result = check_rule_soundness(rule, models, strategy)
        assert not result.ok
        assert result.counterexamples[0]["rule"] == rule


class TestDerivationReplays:
    def test_product_derivation_on_random_models(self):
        rng = random.Random(12)
        two_bit = [random_model(rng, {}, ("A", "B")) for _ in range(100)]
        result = check_product_replay(two_bit)
        assert result.ok
        assert result.passed + result.skipped == 100

    def test_product_derivation_skips_impossible_a(self):
        never_a = two_bit_model(0, 0, "1/2", "1/2")
        result = check_product_replay([never_a, two_bit_model("1/4", "1/4", "1/4", "1/4")])
        assert result.ok
        assert result.skipped == 1
        assert result.passed == 1
        assert result.notes

    def test_trace_states_agree(self):
        model = two_bit_model("1/8", "3/8", "1/4", "1/4")
        assert check_trace(derive_product_rule(), model).passed == 1

    def test_broken_rule_breaks_product_derivation(self):
        strategy = RuleStrategy(rules=(BROKEN_SCALAR,))
        result = check_product_replay([two_bit_model("1/8", "3/8", "1/4", "1/4")], strategy)
        assert not result.ok

    def test_expectation_theorem(self):
        result = check_expectation(expectation_fixtures())
        assert result.ok
        assert result.passed > 0


class TestProbabilityFragment:
    def test_fragment_size(self):
        props = probability_fragment_props(sample=10)
        assert len(props) == 312 + 10

    def test_bounds_on_quarter_models(self):
        result = check_probability_fragment(two_bit_quarter_models(), props=probability_fragment_props(sample=50))
        assert result.ok
        assert result.passed == 35 * 362


class TestCheckReport:
    def test_minimal_counterexample_is_shortest(self):
        report = CheckReport()
        bad = PropertyResult("p")
        bad.fail(expr="est(x + y + z | I)", value="1")
        bad.fail(expr="est(x | I)", value="1")
        report.add(bad)
        report.add(PropertyResult("q", passed=3))
        assert not report.ok
        assert report.minimal_counterexample() == {"expr": "est(x | I)", "value": "1", "property": "p"}
        assert "minimal counterexample:" in report.render()
        assert report.to_dict()["status"] == "fail"

    def test_passing_report(self):
        report = CheckReport([PropertyResult("q", passed=1)])
        assert report.ok
        assert report.minimal_counterexample() is None
        assert report.render().endswith("all properties hold")


class TestRunCheck:
    def test_default_run_passes(self):
        report = run_check(trials=30, seed=0)
        failures = [r.name for r in report.results if not r.ok]
        assert report.ok, failures
        names = {r.name for r in report.results}
        assert {"requirement_0", "negation_rule", "product_derivation", "expectation_theorem",
                "probability_bounds", "grid_normalization"} <= names
        bounds = next(r for r in report.results if r.name == "probability_bounds")
        assert bounds.passed == len(two_bit_quarter_models()) * len(probability_fragment_props())

    def test_mutated_engine_fails(self):
        report = run_check(trials=10, seed=0, strategy=RuleStrategy(rules=(BROKEN_SUM,)))
        assert not report.ok
        assert report.minimal_counterexample() is not None

    def test_deterministic(self):
        first = json.dumps(run_check(trials=10, seed=4).to_dict(), sort_keys=True, default=str)
        second = json.dumps(run_check(trials=10, seed=4).to_dict(), sort_keys=True, default=str)
        assert first == second

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            run_check(trials=0)

    def test_fraction_domains_survive(self):
        model = random_model(random.Random(2), {"x": (Fraction(1, 2), 2)}, ("A", "B"))
        report = run_check(model, trials=10)
        assert report.ok, [r.name for r in report.results if not r.ok]
