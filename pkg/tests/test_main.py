import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from expressions import Add, Estim, canonicalize
from main import EXIT_CONDITIONING, EXIT_ENGINE, EXIT_PARSE, EXIT_PROPERTY, EXIT_USAGE, cli, parse_domain
from rewrite_engine import RewriteRule

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def sample(name):
    return str(SAMPLES / name)


def drop_last_summand(e, strategy, **_):
    if not isinstance(e, Estim) or not isinstance(e.body, Add):
        return None
    return canonicalize(Add(tuple(Estim(t, e.ctx) for t in e.body.terms[:-1])))


@pytest.fixture
def run(monkeypatch):
    for name in ("ESTIM_FUEL", "ESTIM_TRIALS", "ESTIM_SEED", "ESTIM_WORKERS", "ESTIM_LOG_LEVEL", "ESTIM_TOLERANCE"):
        monkeypatch.delenv(name, raising=False)
    runner = CliRunner()

    def invoke(*args, obj=None):
        return runner.invoke(cli, list(args), obj=obj if obj is not None else {})

    return invoke


class TestNormalize:
    def test_negation(self, run):
        result = run("normalize", "-e", "est(n(not A) | I)", "--prob")
        assert result.exit_code == 0, result.output
        assert result.output.splitlines() == ["1 - est(n(A) | I)", "1 − P(A|I)"]

    def test_trace(self, run):
        result = run("normalize", "-e", "est(n(not A) | I)", "--trace")
        lines = result.output.splitlines()
        assert lines[0].startswith("step 1: [prop_encode @ 0]")
        assert lines[1].startswith("step 2: [linear_sum @ root]")
        assert lines[-1] == "1 - est(n(A) | I)"

    def test_constant(self, run):
        result = run("normalize", "-e", "5")
        assert result.exit_code == 0
        assert result.output.strip() == "5"

    def test_braces(self, run):
        result = run("normalize", "-e", "est(est(y | x, I) | I)", "--braces")
        assert result.output.strip() == "{y}_{I}"

    def test_file_with_bindings(self, run):
        result = run("normalize", sample("product.est"))
        assert result.exit_code == 0, result.output
        assert result.output.strip() == "est(n(A) * n(B) | I)"

    def test_domain_enables_completeness(self, run):
        result = run("normalize", "-e", "delta(1, x) + delta(2, x) + delta(3, x)", "--domain", "x=1,2,3")
        assert result.output.strip() == "1"

    def test_bits(self, run):
        result = run("normalize", "-e", "a*est(b | a, I)", "--bits", "a")
        assert result.output.strip() == "a * est(b | a=1, I)"

    def test_json(self, run):
        result = run("normalize", "-e", "est(n(A or B) | I)", "--format", "json", "--prob")
        data = json.loads(result.output)
        assert data["final"] == "est(n(A) | I) + est(n(B) | I) - est(n(A) * n(B) | I)"
        assert data["probability"] == "P(A|I) + P(B|I) − P(A ∧ B|I)"
        assert [s["rule"] for s in data["trace"]["steps"]] == ["prop_encode", "linear_sum"]

    def test_syntax_error(self, run):
        result = run("normalize", "-e", "est(x | I")
        assert result.exit_code == EXIT_PARSE
        assert "^" in result.output

    def test_fuel_exhausted(self, run):
        result = run("normalize", "-e", "est(n(not A) | I)", "--fuel", "1")
        assert result.exit_code == EXIT_ENGINE
        assert "1 steps" in result.output

    def test_missing_input(self, run):
        assert run("normalize").exit_code == EXIT_USAGE

    def test_bad_domain(self, run):
        assert run("normalize", "-e", "x", "--domain", "x=a,b").exit_code == EXIT_USAGE


class TestDerive:
    def test_product(self, run):
        result = run("derive", "product", "--prob")
        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert lines[0] == "# product"
        assert len([l for l in lines if l.startswith("step ")]) == 4
        assert "result: est(n(A) | I) * est(n(B) | A, I)" in lines
        assert "probability form: P(A|I)P(B|A,I)" in lines

    def test_negation(self, run):
        result = run("derive", "negation")
        assert len([l for l in result.output.splitlines() if l.startswith("step ")]) == 2
        assert "result: 1 - est(n(A) | I)" in result.output

    def test_sum(self, run):
        result = run("derive", "sum", "--prob")
        assert "probability form: P(A|I) + P(B|I) − P(A ∧ B|I)" in result.output

    def test_expectation(self, run):
        result = run("derive", "expectation", "--domain", "1,2,3")
        assert result.exit_code == 0, result.output
        assert "result: est(delta(1, x) | I) + 2 * est(delta(2, x) | I) + 3 * est(delta(3, x) | I)" in result.output
        assert "result: 1" in result.output.splitlines()

    def test_expectation_needs_domain(self, run):
        assert run("derive", "expectation").exit_code == EXIT_USAGE

    def test_expectation_domain_from_model(self, run):
        result = run("derive", "expectation", "--model", sample("uniform_1_2_3.json"))
        assert result.exit_code == 0, result.output
        assert "oracle check derivation:expectation: ok" in result.output
        assert "oracle check derivation:normalization: ok" in result.output

    def test_oracle_check(self, run):
        result = run("derive", "product", "--model", sample("two_bits.json"))
        assert result.exit_code == 0
        assert "oracle check derivation:product: ok" in result.output

    def test_oracle_check_with_impossible_a(self, run):
        result = run("derive", "product", "--model", sample("never_a.json"))
        assert result.exit_code == 0
        assert "oracle check derivation:product: ok" in result.output

    def test_model_without_the_atoms(self, run):
        result = run("derive", "product", "--model", sample("uniform_1_2_3.json"))
        assert result.exit_code == EXIT_PARSE
        assert "atom 'A'" in result.output
        assert "Traceback" not in result.output

    def test_json(self, run):
        data = json.loads(run("derive", "product", "--format", "json").output)
        assert data["derivation"] == "product"
        assert len(data["traces"][0]["steps"]) == 4

    def test_unknown_derivation(self, run):
        assert run("derive", "chain").exit_code == EXIT_USAGE


class TestEval:
    def test_mean(self, run):
        result = run("eval", "-e", "est(x | I)", "--model", sample("uniform_1_2_3.json"))
        assert result.exit_code == 0, result.output
        assert result.output.splitlines()[0] == "2"

    def test_positional_arguments(self, run):
        result = run("eval", sample("negation.est"), sample("two_bits.json"))
        assert result.output.splitlines() == ["1/2", "≈ 0.5"]

    def test_expr_with_positional_model(self, run):
        result = run("eval", "-e", "est(n(A and B) | I)", sample("two_bits.json"))
        assert result.output.splitlines()[0] == "1/4"

    def test_zero_weight(self, run):
        result = run("eval", sample("conditional.est"), sample("never_a.json"))
        assert result.exit_code == EXIT_CONDITIONING
        assert "zero-weight" in result.output

    def test_undeclared_symbol(self, run):
        assert run("eval", sample("mean.est"), sample("two_bits.json")).exit_code == EXIT_PARSE

    def test_model_required(self, run):
        assert run("eval", "-e", "est(x | I)").exit_code == EXIT_USAGE

    def test_json(self, run):
        data = json.loads(run("eval", "-e", "est(x*x | I)", "--model", sample("uniform_1_2_3.json"),
                              "--format", "json").output)
        assert data["value"] == "14/3"


class TestCheck:
    def test_passes(self, run):
        result = run("check", "--trials", "10")
        assert result.exit_code == 0, result.output
        assert result.output.rstrip().endswith("all properties hold")

    def test_model_file(self, run):
        result = run("check", sample("triangular_grid.json"), "--trials", "10")
        assert result.exit_code == 0, result.output

    def test_tolerance_flag(self, run, tmp_path):
        data = json.loads((SAMPLES / "triangular_grid.json").read_text(encoding="utf-8"))
        data["grid"]["densities"] = [d * 1.001 for d in data["grid"]["densities"]]
        path = tmp_path / "loose_grid.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        assert run("check", str(path), "--trials", "5").exit_code == EXIT_PROPERTY
        result = run("check", str(path), "--trials", "5", "--tolerance", "0.01")
        assert result.exit_code == 0, result.output

    def test_non_positive_tolerance(self, run):
        assert run("check", "--tolerance", "0").exit_code == EXIT_USAGE

    def test_zero_trials_is_usage_error(self, run):
        assert run("check", "--trials", "0").exit_code == EXIT_USAGE

    def test_broken_rule_fails(self, run):
        broken = RewriteRule("linear_sum", "broken", drop_last_summand)
        result = run("check", "--trials", "5", obj={"rules": (broken,)})
        assert result.exit_code == EXIT_PROPERTY
        assert "minimal counterexample:" in result.output

    def test_deterministic(self, run):
        first = run("check", "--trials", "5", "--seed", "3", "--format", "json").output
        second = run("check", "--trials", "5", "--seed", "3", "--format", "json").output
        assert first == second
        assert json.loads(first)["status"] == "pass"


class TestConfig:
    def test_parse_domain(self):
        assert parse_domain("1,2,3") == ("x", (1, 2, 3))
        assert parse_domain("y=1/2, 3") == ("y", (0.5, 3))

    def test_environment_defaults(self, run, monkeypatch):
        monkeypatch.setenv("ESTIM_FUEL", "1")
        assert run("normalize", "-e", "est(n(not A) | I)").exit_code == EXIT_ENGINE

    def test_bad_environment_value(self, run, monkeypatch):
        monkeypatch.setenv("ESTIM_TRIALS", "many")
        assert run("check").exit_code == EXIT_USAGE

    def test_unknown_log_level(self, run):
        assert run("--log-level", "chatty", "normalize", "-e", "1").exit_code == EXIT_USAGE
