"""
main.py — Command-line entry point
normalize / derive / eval / check over expression files and model files.

Exit codes: 0 ok, 1 parse/schema/symbol error, 2 engine error, 3 zero-weight
conditioning, 4 property failure, 64 usage error.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Optional, Tuple

import click
from dotenv import load_dotenv
load_dotenv()

from expressions import ContextError, EstimationError, UnboundSymbol
from expr_parser import ExprSyntaxError, parse_program, print_expr
from oracle import GRID_TOLERANCE, ModelError, ZeroWeightConditioning, load_model, oracle_eval
from rewrite_engine import (
    DEFAULT_FUEL, DERIVATIONS, DomainError, EngineError, FuelExhausted, RuleStrategy,
    derive_expectation_theorem, derive_negation_rule, derive_product_rule, derive_sum_rule,
    normalize, to_probability_form,
)
from verification import check_trace, run_check

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_ENGINE = 2
EXIT_CONDITIONING = 3
EXIT_PROPERTY = 4
EXIT_USAGE = 64


# ─────────────────────────────────────────────────────────
# Configuration
# ─────────────────────────────────────────────────────────

def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise click.UsageError(f"{name} must be an integer, got {raw!r}")


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise click.UsageError(f"{name} must be a number, got {raw!r}")


@dataclass
class RunConfig:
    command: str
    output_format: str = "text"
    fuel: int = DEFAULT_FUEL
    trials: int = 1000
    seed: int = 0
    workers: int = 1
    tolerance: float = GRID_TOLERANCE

    def __post_init__(self):
        if self.fuel <= 0:
            raise click.UsageError("--fuel must be positive")
        if self.trials <= 0:
            raise click.UsageError("--trials must be positive")
        if self.workers <= 0:
            raise click.UsageError("--workers must be positive")
        if not self.tolerance > 0:
            raise click.UsageError("--tolerance must be positive")
        if self.output_format not in ("text", "json"):
            raise click.UsageError("--format must be text or json")

    @classmethod
    def from_env(cls, command: str, **overrides) -> "RunConfig":
        values = {
            "fuel": _env_int("ESTIM_FUEL", DEFAULT_FUEL),
            "trials": _env_int("ESTIM_TRIALS", 1000),
            "seed": _env_int("ESTIM_SEED", 0),
            "workers": _env_int("ESTIM_WORKERS", 1),
            "tolerance": _env_float("ESTIM_TOLERANCE", GRID_TOLERANCE),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(command, **values)


def parse_domain(text: str, default_name: str = "x") -> Tuple[str, Tuple[Fraction, ...]]:
    """'1,2,3' or 'x=1,2,3' → (name, values)."""
    name, _, values = text.rpartition("=")
    name = name.strip() or default_name
    try:
        domain = tuple(Fraction(v.strip()) for v in values.split(",") if v.strip())
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter(f"{text!r} is not a comma-separated list of rationals", param_hint="--domain")
    if not domain:
        raise click.BadParameter("empty domain", param_hint="--domain")
    return name, domain


# ─────────────────────────────────────────────────────────
# Output helpers
# ─────────────────────────────────────────────────────────

def fail(code: int, message: str):
    click.echo(f"❌ {message}", err=True)
    sys.exit(code)


def emit_json(data):
    click.echo(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=str))


def read_source(source, expr: Optional[str]) -> str:
    if expr is not None and source is not None:
        raise click.UsageError("give either a file or --expr, not both")
    if expr is not None:
        return expr
    if source is None:
        raise click.UsageError("missing expression: give a file (or '-') or --expr")
    return source.read()


def parse_or_exit(text: str):
    try:
        return parse_program(text)
    except ExprSyntaxError as e:
        fail(EXIT_PARSE, "syntax error\n" + e.render(text))


class EstimGroup(click.Group):
    """Reports every usage error with exit status 64."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise


# ─────────────────────────────────────────────────────────
# Commands
# ─────────────────────────────────────────────────────────

@click.group(cls=EstimGroup)
@click.option("--log-level", default=None, help="Logging level for stderr (default: ESTIM_LOG_LEVEL or WARNING)")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str]):
    """Estimation calculus: rewrite, derive, evaluate and check."""
    level = (log_level or os.environ.get("ESTIM_LOG_LEVEL") or "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise click.BadParameter(f"unknown level {level!r}", param_hint="--log-level")
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)


def strategy_for(ctx: click.Context, config: RunConfig, domains: Dict = None, bits=()) -> RuleStrategy:
    injected = tuple((ctx.obj or {}).get("rules", ()))
    return RuleStrategy(fuel=config.fuel, rules=injected or None, bits=frozenset(bits), domains=domains or {})


@cli.command("normalize")
@click.argument("source", type=click.File("r", encoding="utf-8"), required=False)
@click.option("--expr", "-e", default=None, help="Expression text instead of a file")
@click.option("--trace", is_flag=True, help="Print every rewrite step")
@click.option("--prob", is_flag=True, help="Also render the result in P(·|·) notation")
@click.option("--braces", is_flag=True, help="Render estimations as {x}_{I}")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@click.option("--fuel", type=int, default=None, help="Maximum number of rewrite steps")
@click.option("--domain", "domains", multiple=True, help="Finite domain, e.g. x=1,2,3 (repeatable)")
@click.option("--bits", default="", help="Comma-separated unknowns declared two-valued")
@click.pass_context
def cmd_normalize(ctx, source, expr, trace, prob, braces, output_format, fuel, domains, bits):
    """Normalize an expression with the rewrite rules."""
    config = RunConfig.from_env("normalize", output_format=output_format, fuel=fuel)
    text = read_source(source, expr)
    program = parse_or_exit(text)
    declared = dict(parse_domain(d) for d in domains)
    bit_names = [b.strip() for b in bits.split(",") if b.strip()]
    try:
        final, derivation = normalize(program.expr, strategy_for(ctx, config, declared, bit_names))
    except FuelExhausted as e:
        fail(EXIT_ENGINE, f"{e}; last form: {print_expr(e.trace.final)}")
    except (DomainError, EngineError) as e:
        fail(EXIT_ENGINE, str(e))

    if config.output_format == "json":
        emit_json({
            "input": print_expr(program.expr),
            "final": print_expr(final),
            "probability": to_probability_form(final) if prob else None,
            "trace": derivation.to_dict(),
        })
        return
    if trace and derivation.steps:
        click.echo(derivation.render(braces=braces, anchors=True))
    click.echo(print_expr(final, braces))
    if prob:
        click.echo(to_probability_form(final))


@cli.command("derive")
@click.argument("name", type=click.Choice(DERIVATIONS))
@click.option("--domain", default=None, help="Domain for the expectation derivation, e.g. 1,2,3 or x=1,2,3")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Oracle-check every intermediate state against this model")
@click.option("--prob", is_flag=True, help="Also render the result in P(·|·) notation")
@click.option("--braces", is_flag=True, help="Render estimations as {x}_{I}")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@click.pass_context
def cmd_derive(ctx, name, domain, model_path, prob, braces, output_format):
    """Replay a scripted derivation: negation, sum, product or expectation."""
    config = RunConfig.from_env("derive", output_format=output_format)
    model = None
    if model_path:
        try:
            model = load_model(model_path)
        except ModelError as e:
            fail(EXIT_PARSE, f"{model_path}: {e}")

    strategy = strategy_for(ctx, config)
    try:
        if name == "expectation":
            if domain is not None:
                variable, values = parse_domain(domain)
            elif model is not None and model.variables:
                variable, values = model.variables[0]
            else:
                raise click.UsageError("derive expectation needs --domain (or a --model with a variable)")
            derivation = derive_expectation_theorem(variable, values, strategy=strategy)
            traces = [derivation.expansion, derivation.normalization]
        else:
            script = {"negation": derive_negation_rule, "sum": derive_sum_rule, "product": derive_product_rule}[name]
            traces = [script(strategy=strategy)]
    except (DomainError, EngineError) as e:
        fail(EXIT_ENGINE, str(e))

    try:
        checks = [check_trace(t, model) for t in traces] if model is not None else []
    except (UnboundSymbol, ContextError) as e:
        fail(EXIT_PARSE, f"{model_path}: {e}")
    if config.output_format == "json":
        emit_json({
            "derivation": name,
            "traces": [
                dict(t.to_dict(), probability=to_probability_form(t.final) if prob else None) for t in traces
            ],
            "oracle": [c.to_dict() for c in checks],
        })
    else:
        for t in traces:
            click.echo(f"# {t.title}")
            click.echo(t.render(braces=braces, anchors=True))
            click.echo(f"result: {print_expr(t.final, braces)}")
            if prob:
                click.echo(f"probability form: {to_probability_form(t.final)}")
        for c in checks:
            status = "skipped (zero-weight conditioning)" if c.skipped and c.ok else ("ok" if c.ok else "FAILED")
            click.echo(f"oracle check {c.name}: {status}")
    if any(not c.ok for c in checks):
        fail(EXIT_ENGINE, "an intermediate state disagrees with the oracle")


@cli.command("eval")
@click.argument("source", type=click.File("r", encoding="utf-8"), required=False)
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--expr", "-e", default=None, help="Expression text instead of a file")
@click.option("--model", "model_option", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
def cmd_eval(source, model_path, expr, model_option, output_format):
    """Evaluate an expression exactly under a model file."""
    config = RunConfig.from_env("eval", output_format=output_format)
    if expr is not None and source is not None and model_path is None and model_option is None:
        model_path, source = source.name, None
    model_path = model_option or model_path
    if model_path is None:
        raise click.UsageError("eval needs a model file")
    text = read_source(source, expr)
    program = parse_or_exit(text)
    try:
        model = load_model(model_path)
        value = oracle_eval(program.expr, model)
    except ZeroWeightConditioning as e:
        fail(EXIT_CONDITIONING, str(e))
    except (ModelError, UnboundSymbol, ContextError) as e:
        fail(EXIT_PARSE, str(e))
    except EstimationError as e:
        fail(EXIT_ENGINE, str(e))

    if config.output_format == "json":
        emit_json({"expr": print_expr(program.expr), "value": str(value), "decimal": float(value)})
        return
    click.echo(str(value))
    click.echo(f"≈ {float(value):.10g}")


@cli.command("check")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--trials", type=int, default=None, help="Random trials per property")
@click.option("--seed", type=int, default=None, help="Seed for every randomized check")
@click.option("--workers", type=int, default=None, help="Worker threads for requirement trials")
@click.option("--tolerance", type=float, default=None, help="Allowed |∫p − 1| for grid densities")
@click.option("--fuel", type=int, default=None, help="Maximum number of rewrite steps")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@click.pass_context
def cmd_check(ctx, model_path, trials, seed, workers, fuel, tolerance, output_format):
    """Run the property suite: requirements, probability rules, rule soundness, derivations."""
    config = RunConfig.from_env("check", output_format=output_format, trials=trials, seed=seed,
                                workers=workers, fuel=fuel, tolerance=tolerance)
    model = None
    if model_path:
        try:
            model = load_model(model_path)
        except ModelError as e:
            fail(EXIT_PARSE, f"{model_path}: {e}")

    report = run_check(model, config.trials, config.seed, config.workers, strategy_for(ctx, config),
                       tolerance=config.tolerance)
    if config.output_format == "json":
        emit_json(report.to_dict())
    else:
        click.echo(report.render())
    if not report.ok:
        sys.exit(EXIT_PROPERTY)


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
