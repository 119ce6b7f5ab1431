"""
oracle.py — Numerical semantics of the estimation calculus
Estimation as conditional expectation over a finite joint weight table (exact
rationals), plus a binned density on a bounded interval for continuous
quantities. Every symbolic rewrite is checked against this evaluator.
"""

import itertools
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from expressions import (
    Add, And, Atom, Const, Context, Estim, EstimationError, Expr, KDelta, Mul, Not, Or,
    PropEnc, UnboundSymbol, Unknown, all_symbols, as_fraction, eval_ground, eval_prop,
)
from expr_parser import print_context, print_expr
import generators

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-6
GRID_LINEARITY_TOLERANCE = 1e-9
DEFAULT_BINS = 1000


# ─────────────────────────────────────────────────────────
# Errors
# ─────────────────────────────────────────────────────────

class ModelError(EstimationError):
    """A model or model file violates the schema or its invariants."""


class ZeroWeightConditioning(EstimationError):
    def __init__(self, ctx: Context):
        super().__init__(f"conditioning on a zero-weight event: {print_context(ctx)}")
        self.ctx = ctx


class NormalizationError(EstimationError):
    """A grid density does not integrate to one."""


class OracleInvariantError(EstimationError):
    """An identity that must hold exactly under the oracle did not."""


# ─────────────────────────────────────────────────────────
# Models
# ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Valuation:
    """One joint outcome: a value for every variable and a truth value for every atom."""
    values: Dict[str, Fraction]
    truths: Dict[str, bool]
    weight: Fraction = Fraction(1)


@dataclass
class GridModel:
    """Density p(x') on [a, b] sampled at N bin midpoints, Δx = (b − a)/N."""
    a: float
    b: float
    densities: np.ndarray
    variable: str = "x"

    def __post_init__(self):
        self.densities = np.asarray(self.densities, dtype=float)
        if not self.a < self.b:
            raise ModelError(f"grid interval [{self.a}, {self.b}] is empty")
        if self.densities.ndim != 1 or self.densities.size == 0:
            raise ModelError("grid needs a non-empty list of densities")
        if not np.all(np.isfinite(self.densities)) or np.any(self.densities < 0):
            raise ModelError("grid densities must be finite and non-negative")

    @property
    def bins(self) -> int:
        return int(self.densities.size)

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.bins

    @property
    def midpoints(self) -> np.ndarray:
        return self.a + (np.arange(self.bins) + 0.5) * self.dx

    @classmethod
    def from_density(cls, f: Callable[[np.ndarray], np.ndarray], a: float = 0.0, b: float = 1.0,
                     bins: int = DEFAULT_BINS, normalize: bool = True) -> "GridModel":
        unit = cls(a, b, np.ones(bins))
        densities = np.asarray(f(unit.midpoints), dtype=float) * np.ones(bins)
        if normalize:
            total = float(np.sum(densities) * unit.dx)
            if total <= 0:
                raise ModelError("density has zero mass on the interval")
            densities = densities / total
        return cls(a, b, densities)

    @classmethod
    def point_mass(cls, a: float, b: float, bins: int, hot: int) -> "GridModel":
        densities = np.zeros(bins)
        densities[hot] = bins / (b - a)
        return cls(a, b, densities)


@dataclass
class Model:
    """
    A finite joint weight table. Outcomes are keyed by a tuple of variable values
    (in declaration order) followed by a tuple of atom truth values.
    """
    variables: Tuple[Tuple[str, Tuple[Fraction, ...]], ...]
    atoms: Tuple[str, ...]
    weights: Dict[Tuple[Tuple[Fraction, ...], Tuple[bool, ...]], Fraction]
    grid: Optional[GridModel] = None
    name: str = ""

    def __post_init__(self):
        self.variables = tuple((n, tuple(as_fraction(v) for v in dom)) for n, dom in self.variables)
        self.atoms = tuple(self.atoms)
        seen = set()
        for name, dom in self.variables:
            if name in seen or name in self.atoms:
                raise ModelError(f"symbol '{name}' declared twice")
            seen.add(name)
            if not dom:
                raise ModelError(f"variable '{name}' has an empty domain")
            if len(set(dom)) != len(dom):
                raise ModelError(f"variable '{name}' has duplicate domain values")
        if len(set(self.atoms)) != len(self.atoms):
            raise ModelError("atoms declared twice")

        total = Fraction(0)
        weights = {}
        for outcome, w in self.weights.items():
            w = as_fraction(w)
            values, truths = outcome
            if len(values) != len(self.variables) or len(truths) != len(self.atoms):
                raise ModelError(f"outcome {outcome} does not cover every declared symbol")
            for (name, dom), v in zip(self.variables, values):
                if v not in dom:
                    raise ModelError(f"value {v} is outside the domain of '{name}'")
            if w < 0:
                raise ModelError(f"negative weight {w}")
            weights[(tuple(as_fraction(v) for v in values), tuple(bool(t) for t in truths))] = w
            total += w
        if total != 1:
            raise ModelError(f"weights sum to {total}, not 1")
        self.weights = weights

    @property
    def domains(self) -> Dict[str, Tuple[Fraction, ...]]:
        return dict(self.variables)

    @property
    def variable_names(self) -> Tuple[str, ...]:
        return tuple(n for n, _ in self.variables)

    @cached_property
    def support(self) -> List[Valuation]:
        """Outcomes with positive weight, in a fixed order."""
        out = []
        for (values, truths), w in sorted(self.weights.items(), key=lambda kv: kv[0]):
            if w > 0:
                out.append(Valuation(dict(zip(self.variable_names, values)), dict(zip(self.atoms, truths)), w))
        return out

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "variables": [{"name": n, "domain": [str(v) for v in dom]} for n, dom in self.variables],
            "atoms": list(self.atoms),
            "weights": [
                {
                    "outcome": {**{n: str(v) for n, v in zip(self.variable_names, values)},
                                **dict(zip(self.atoms, truths))},
                    "w": str(w),
                }
                for (values, truths), w in sorted(self.weights.items(), key=lambda kv: kv[0]) if w > 0
            ],
        }
        if self.grid is not None:
            out["grid"] = {"a": self.grid.a, "b": self.grid.b, "n": self.grid.bins,
                           "densities": self.grid.densities.tolist()}
        return out


def model_from_valuations(
    domains: Mapping[str, Sequence],
    atoms: Sequence[str],
    weighted: Sequence[Tuple[Mapping[str, Any], Any]],
    name: str = "",
) -> Model:
    """Build a model from (outcome mapping, weight) pairs; outcomes must name every symbol."""
    variables = tuple((n, tuple(as_fraction(v) for v in dom)) for n, dom in domains.items())
    weights: Dict = {}
    for outcome, w in weighted:
        missing = [s for s in list(domains) + list(atoms) if s not in outcome]
        extra = [s for s in outcome if s not in domains and s not in atoms]
        if missing or extra:
            raise ModelError(f"outcome {dict(outcome)} must name exactly the declared symbols "
                             f"(missing {missing}, undeclared {extra})")
        key = (tuple(as_fraction(outcome[n]) for n, _ in variables), tuple(bool(outcome[a]) for a in atoms))
        if key in weights:
            raise ModelError(f"outcome {dict(outcome)} listed twice")
        weights[key] = as_fraction(w)
    return Model(variables, tuple(atoms), weights, name=name)


# ─────────────────────────────────────────────────────────
# Model files
# ─────────────────────────────────────────────────────────

def _rational(value: Any, what: str) -> Fraction:
    if isinstance(value, bool):
        raise ModelError(f"{what}: expected a rational, got {value!r}")
    try:
        return as_fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise ModelError(f"{what}: {value!r} is not a rational number")


def model_from_dict(data: Mapping[str, Any], name: str = "") -> Model:
    if not isinstance(data, Mapping):
        raise ModelError("model file must hold a JSON object")
    unknown_keys = set(data) - {"variables", "atoms", "weights", "grid"}
    if unknown_keys:
        raise ModelError(f"unknown model keys: {sorted(unknown_keys)}")

    domains: Dict[str, Tuple[Fraction, ...]] = {}
    for entry in data.get("variables", []):
        try:
            var_name = entry["name"]
            domains[var_name] = tuple(_rational(v, f"domain of '{var_name}'") for v in entry["domain"])
        except (KeyError, TypeError):
            raise ModelError(f"variable entries need 'name' and 'domain': {entry!r}")
    atoms = list(data.get("atoms", []))

    weighted = []
    for entry in data.get("weights", []):
        try:
            outcome, w = dict(entry["outcome"]), entry["w"]
        except (KeyError, TypeError, ValueError):
            raise ModelError(f"weight entries need 'outcome' and 'w': {entry!r}")
        for var_name in domains:
            if var_name in outcome:
                outcome[var_name] = _rational(outcome[var_name], f"outcome value of '{var_name}'")
        for atom in atoms:
            if atom in outcome and not isinstance(outcome[atom], bool):
                raise ModelError(f"atom '{atom}' needs a true/false value")
        weighted.append((outcome, _rational(w, "weight")))

    model = model_from_valuations(domains, atoms, weighted, name=name)
    grid = data.get("grid")
    if grid is not None:
        try:
            densities = grid["densities"]
            if "n" in grid and int(grid["n"]) != len(densities):
                raise ModelError(f"grid declares n={grid['n']} but lists {len(densities)} densities")
            model.grid = GridModel(float(grid["a"]), float(grid["b"]), densities)
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"malformed grid section: {e}")
    return model


def load_model(path: str) -> Model:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: invalid JSON ({e})")
    logger.info(f"Loaded model from {path}")
    return model_from_dict(data, name=path)


# ─────────────────────────────────────────────────────────
# Fixture and random models
# ─────────────────────────────────────────────────────────

def uniform_model(domains: Mapping[str, Sequence] = None, atoms: Sequence[str] = (), name: str = "uniform") -> Model:
    domains = dict(domains or {})
    keys = list(itertools.product(*[tuple(as_fraction(v) for v in dom) for dom in domains.values()]))
    truths = list(itertools.product((True, False), repeat=len(atoms)))
    w = Fraction(1, len(keys) * len(truths))
    weights = {(k, t): w for k in keys for t in truths}
    return Model(tuple(domains.items()), tuple(atoms), weights, name=name)


def two_bit_model(tt, tf, ft, ff, atoms: Tuple[str, str] = ("A", "B"), name: str = "") -> Model:
    """Weights of (A,B) = (T,T), (T,F), (F,T), (F,F)."""
    weights = {
        ((), (True, True)): as_fraction(tt),
        ((), (True, False)): as_fraction(tf),
        ((), (False, True)): as_fraction(ft),
        ((), (False, False)): as_fraction(ff),
    }
    return Model((), atoms, weights, name=name or f"two-bit {tt},{tf},{ft},{ff}")


def two_bit_quarter_models() -> List[Model]:
    """Every two-bit model with weights in {0, 1/4, 1/2, 3/4, 1}."""
    out = []
    for parts in itertools.product(range(5), repeat=4):
        if sum(parts) == 4:
            out.append(two_bit_model(*(Fraction(p, 4) for p in parts)))
    return out


def point_mass_model(name: str, domain: Sequence, at) -> Model:
    domain = tuple(as_fraction(v) for v in domain)
    weights = {((v,), ()): Fraction(int(v == as_fraction(at))) for v in domain}
    return Model(((name, domain),), (), weights, name=f"point mass {name}={at}")


def random_model(
    rng: random.Random,
    domains: Mapping[str, Sequence] = None,
    atoms: Sequence[str] = ("A", "B"),
    max_denominator: int = 64,
    zero_rate: float = 0.2,
) -> Model:
    """Weights drawn as k/max_denominator (some forced to zero), then renormalized."""
    domains = dict(domains or {})
    keys = list(itertools.product(*[tuple(as_fraction(v) for v in dom) for dom in domains.values()]))
    truths = list(itertools.product((True, False), repeat=len(atoms)))
    outcomes = [(k, t) for k in keys for t in truths]
    raw = [0 if rng.random() < zero_rate else rng.randint(0, max_denominator) for _ in outcomes]
    if sum(raw) == 0:
        raw[rng.randrange(len(raw))] = 1
    total = sum(raw)
    weights = {o: Fraction(r, total) for o, r in zip(outcomes, raw)}
    return Model(tuple(domains.items()), tuple(atoms), weights, name="random")


def expectation_fixtures() -> List[Model]:
    """Single-variable models with domains of size 2 to 8, point masses and zero-weight points."""
    out = [
        uniform_model({"x": (1, 2, 3)}, name="uniform 1..3"),
        uniform_model({"x": (0, 1)}, name="uniform bit"),
        point_mass_model("x", (1, 2, 3), 2),
        point_mass_model("x", range(8), 7),
        model_from_valuations({"x": (0, 1, 2)}, (), [({"x": 0}, "1/2"), ({"x": 1}, "1/4"), ({"x": 2}, "1/4")],
                              name="halves and quarters"),
        model_from_valuations({"x": (-1, 4)}, (), [({"x": -1}, "2/3"), ({"x": 4}, "1/3")], name="signed"),
        model_from_valuations({"x": ("1/2", "3/2", 5, 7)}, (), [({"x": "1/2"}, "3/5"), ({"x": 7}, "2/5")],
                              name="zero-weight points"),
    ]
    rng = random.Random(2024)
    for size in range(2, 9):
        out.append(random_model(rng, {"x": tuple(v - size // 2 for v in range(size))}, atoms=()))
    return out


# ─────────────────────────────────────────────────────────
# Evaluation
# ─────────────────────────────────────────────────────────

class _Evaluator:
    def __init__(self, model: Model):
        self.model = model
        self.cache: Dict[Tuple[Estim, tuple], Fraction] = {}

    def value(self, e: Expr, values: Mapping[str, Fraction], truths: Mapping[str, bool]) -> Fraction:
        if isinstance(e, Estim):
            return self.estimate(e, values, truths)
        if isinstance(e, Add):
            return sum((self.value(t, values, truths) for t in e.terms), Fraction(0))
        if isinstance(e, Mul):
            # a zero factor decides the product even when a later estimation is undefined
            ordered = sorted(e.factors, key=lambda f: isinstance(f, Estim))
            out = Fraction(1)
            for f in ordered:
                v = self.value(f, values, truths)
                if v == 0:
                    return Fraction(0)
                out *= v
            return out
        if isinstance(e, KDelta):
            return Fraction(int(self.value(e.a, values, truths) == self.value(e.b, values, truths)))
        return eval_ground(e, values, truths)

    def _consistent(self, outcome: Valuation, ctx: Context, env_values, env_truths) -> bool:
        for name, v in ctx.assignments:
            if outcome.values[name] != v:
                return False
        for p in ctx.asserted:
            if not eval_prop(p, outcome.values, outcome.truths):
                return False
        for item in ctx.parameters:
            if isinstance(item, str):
                if outcome.values[item] != env_values[item]:
                    return False
            elif eval_prop(item, outcome.values, outcome.truths) != eval_prop(item, env_values, env_truths):
                return False
        return True

    def estimate(self, e: Estim, env_values, env_truths) -> Fraction:
        ctx = e.ctx
        key = []
        for item in ctx.parameters:
            if isinstance(item, str):
                if item not in env_values:
                    raise UnboundSymbol(item)
                key.append(env_values[item])
            else:
                key.append(eval_prop(item, env_values, env_truths))
        cache_key = (e, tuple(key))
        if cache_key in self.cache:
            return self.cache[cache_key]

        total = Fraction(0)
        mass = Fraction(0)
        for outcome in self.model.support:
            if not self._consistent(outcome, ctx, env_values, env_truths):
                continue
            total += outcome.weight * self.value(e.body, outcome.values, outcome.truths)
            mass += outcome.weight
        if mass == 0:
            logger.debug(f"zero-weight conditioning on {print_context(ctx)}")
            raise ZeroWeightConditioning(ctx)
        result = total / mass
        self.cache[cache_key] = result
        return result


def check_symbols(e: Expr, model: Model, env: Optional[Valuation] = None):
    unknowns, atoms = all_symbols(e)
    known_unknowns = set(model.variable_names) | set(env.values if env else ())
    known_atoms = set(model.atoms) | set(env.truths if env else ())
    for name in sorted(unknowns - known_unknowns):
        raise UnboundSymbol(name)
    for name in sorted(atoms - known_atoms):
        raise UnboundSymbol(name, "atom")


def oracle_eval(e: Expr, model: Model, env: Optional[Valuation] = None) -> Fraction:
    """
    Exact value of `e` under `model`: est(body | ctx) is the weighted average of
    body over the outcomes consistent with ctx. Free symbols outside estimations
    and estimation parameters take their values from `env`.
    """
    check_symbols(e, model, env)
    values = env.values if env else {}
    truths = env.truths if env else {}
    return _Evaluator(model).value(e, values, truths)


# ─────────────────────────────────────────────────────────
# Property reports
# ─────────────────────────────────────────────────────────

@dataclass
class PropertyResult:
    name: str
    passed: int = 0
    failed: int = 0
    skipped: int = 0
    notes: List[str] = field(default_factory=list)
    counterexamples: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def merge(self, other: "PropertyResult"):
        self.passed += other.passed
        self.failed += other.failed
        self.skipped += other.skipped
        self.notes.extend(other.notes)
        self.counterexamples.extend(other.counterexamples)

    def fail(self, **details):
        self.failed += 1
        self.counterexamples.append(details)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "property": self.name,
            "status": "pass" if self.ok else "fail",
            "passed": self.passed,
            "failed": self.failed,
            "skipped": self.skipped,
            "notes": list(self.notes),
            "counterexamples": list(self.counterexamples),
        }


def _expect_equal(result: PropertyResult, lhs: Expr, rhs: Expr, model: Model, **extra):
    try:
        left = oracle_eval(lhs, model)
        right = oracle_eval(rhs, model)
    except ZeroWeightConditioning:
        result.skipped += 1
        return
    if left == right:
        result.passed += 1
    else:
        result.fail(lhs=print_expr(lhs), rhs=print_expr(rhs), lhs_value=str(left), rhs_value=str(right),
                    model=model.to_dict(), **extra)


# ─────────────────────────────────────────────────────────
# Requirements 0–3
# ─────────────────────────────────────────────────────────

REQUIREMENTS = ("requirement_0", "requirement_1", "requirement_2", "requirement_3")


def _requirement_trial(model: Model, seed: int, index: int, depth: int) -> Dict[str, PropertyResult]:
    rng = random.Random(f"{seed}:{index}")
    domains, atoms = model.domains, model.atoms
    results = {name: PropertyResult(name) for name in REQUIREMENTS}
    f = generators.random_body(rng, domains, atoms, depth)
    g = generators.random_body(rng, domains, atoms, depth)
    ctx = generators.random_context(rng, domains, atoms)

    # known quantity: est(f | everything assigned) equals f evaluated at that outcome
    outcome = rng.choice(model.support)
    full = Context(ctx.background, tuple(outcome.values.items()),
                   tuple(Atom(a) if t else Not(Atom(a)) for a, t in outcome.truths.items()))
    _expect_equal(results["requirement_0"], Estim(f, full),
                  Const(eval_ground(f, outcome.values, outcome.truths)), model, seed=seed, trial=index)

    # admissible range: the estimate lies between the extreme values of f on the conditioning event
    r1 = results["requirement_1"]
    try:
        estimate = oracle_eval(Estim(f, ctx), model)
    except ZeroWeightConditioning:
        r1.skipped += 1
    else:
        ev = _Evaluator(model)
        event_values = [eval_ground(f, o.values, o.truths) for o in model.support
                        if ev._consistent(o, ctx, {}, {})]
        if min(event_values) <= estimate <= max(event_values):
            r1.passed += 1
        else:
            r1.fail(expr=print_expr(Estim(f, ctx)), value=str(estimate), model=model.to_dict(),
                    seed=seed, trial=index)

    # linearity: additivity, constant scaling and scaling by an assigned quantity
    r2 = results["requirement_2"]
    c = rng.choice(generators.SMALL_CONSTANTS)
    _expect_equal(r2, Estim(Add((f, g)), ctx), Add((Estim(f, ctx), Estim(g, ctx))), model, seed=seed, trial=index)
    _expect_equal(r2, Estim(Mul((Const(c), f)), ctx), Mul((Const(c), Estim(f, ctx))), model, seed=seed, trial=index)
    if domains:
        name = rng.choice(sorted(domains))
        if name not in ctx.values:
            fixed = ctx.with_assignment(name, rng.choice(domains[name]))
            _expect_equal(r2, Estim(Mul((Unknown(name), f)), fixed),
                          Mul((Const(fixed.values[name]), Estim(f, fixed))), model, seed=seed, trial=index)

    # tower: partial estimation removes the free parameter
    r3 = results["requirement_3"]
    choices = [n for n in sorted(domains) if n not in ctx.values]
    choices += [Atom(a) for a in atoms if a not in ctx.truths]
    if choices:
        parameter = rng.choice(choices)
        _expect_equal(r3, Estim(Estim(f, ctx.with_parameter(parameter)), ctx), Estim(f, ctx), model,
                      seed=seed, trial=index)
    else:
        r3.skipped += 1
    return results


def check_requirements(
    model: Model,
    trials: int = 1000,
    seed: int = 0,
    workers: int = 1,
    depth: int = 3,
) -> Dict[str, PropertyResult]:
    """
    Requirements 0–3 on `trials` random expressions. Trial i uses its own seeded
    generator, so results do not depend on `workers`; zero-weight conditionals are skipped.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    merged = {name: PropertyResult(name) for name in REQUIREMENTS}

    def run(index: int):
        return _requirement_trial(model, seed, index, depth)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(trials)))
    else:
        outcomes = [run(i) for i in range(trials)]
    for per_trial in outcomes:
        for name, result in per_trial.items():
            merged[name].merge(result)
    for result in merged.values():
        logger.info(f"{result.name}: {result.passed} passed, {result.failed} failed, {result.skipped} skipped")
    return merged


# ─────────────────────────────────────────────────────────
# Probability rules
# ─────────────────────────────────────────────────────────

def probability_identities(a: str = "A", b: str = "B", ctx: Optional[Context] = None) -> Dict[str, Tuple[Expr, Expr]]:
    ctx = ctx or Context()
    A, B = Atom(a), Atom(b)

    def P(p, c=ctx):
        return Estim(PropEnc(p), c)

    return {
        "negation": (P(Not(A)), Add((Const(1), Mul((Const(-1), P(A)))))),
        "sum": (P(Or(A, B)), Add((P(A), P(B), Mul((Const(-1), P(And(A, B))))))),
        "product": (P(And(A, B)), Mul((P(A), P(B, ctx.with_asserted(A))))),
    }


def verify_rules_numerically(model: Model, atoms: Tuple[str, str] = ("A", "B")) -> Dict[str, PropertyResult]:
    """Negation, sum and product rules of probability, exactly; the product rule is skipped when P(A) = 0."""
    a, b = atoms
    out = {}
    for name, (lhs, rhs) in probability_identities(a, b).items():
        result = PropertyResult(f"{name}_rule")
        if name == "product" and oracle_eval(Estim(PropEnc(Atom(a)), Context()), model) == 0:
            result.skipped += 1
            result.notes.append(f"skipped: P({a}|I) = 0 on model {model.name or '(unnamed)'}")
        else:
            _expect_equal(result, lhs, rhs, model)
        out[name] = result
    return out


# ─────────────────────────────────────────────────────────
# Expectation as a weighted sum
# ─────────────────────────────────────────────────────────

def expectation_decomposition(model: Model, x: Union[str, Unknown], ctx: Optional[Context] = None
                              ) -> Tuple[List[Fraction], Fraction]:
    """
    p_i = est(delta(x_i, x) | I) for every x_i in the domain of x, and est(x | I).
    Raises OracleInvariantError unless p_i ≥ 0, Σ p_i = 1 and Σ x_i p_i = est(x | I).
    """
    name = x.name if isinstance(x, Unknown) else x
    ctx = ctx or Context()
    domain = model.domains.get(name)
    if domain is None:
        raise UnboundSymbol(name)
    p = [oracle_eval(Estim(KDelta(Const(v), Unknown(name)), ctx), model) for v in domain]
    estimate = oracle_eval(Estim(Unknown(name), ctx), model)
    if any(pi < 0 for pi in p):
        raise OracleInvariantError(f"negative weight among {p}")
    if sum(p) != 1:
        raise OracleInvariantError(f"weights of '{name}' sum to {sum(p)}")
    if sum(v * pi for v, pi in zip(domain, p)) != estimate:
        raise OracleInvariantError(f"Σ x_i p_i differs from est({name} | I) = {estimate}")
    return p, estimate


# ─────────────────────────────────────────────────────────
# Continuous quantities on a grid
# ─────────────────────────────────────────────────────────

def grid_eval(g: GridModel, tolerance: float = GRID_TOLERANCE) -> Tuple[float, float]:
    """Midpoint rule: (Σ x'_k p_k Δx, Σ p_k Δx); the second must be within `tolerance` of 1."""
    if np.any(g.densities < 0) or not np.all(np.isfinite(g.densities)):
        raise OracleInvariantError("grid density must satisfy 0 ≤ p < ∞")
    normalization = float(np.sum(g.densities) * g.dx)
    if abs(normalization - 1.0) > tolerance:
        raise NormalizationError(f"grid density integrates to {normalization:.9f}, not 1")
    estimate = float(np.sum(g.midpoints * g.densities) * g.dx)
    return estimate, normalization


def grid_expectation(
    g: GridModel, f: Callable[[np.ndarray], np.ndarray], tolerance: float = GRID_TOLERANCE,
) -> float:
    """Estimate of f(x) under the grid density."""
    grid_eval(g, tolerance)
    values = np.asarray(f(g.midpoints), dtype=float) * np.ones(g.bins)
    return float(np.sum(values * g.densities) * g.dx)


def check_grid(
    g: GridModel, seed: int = 0, trials: int = 20, tolerance: float = GRID_TOLERANCE,
) -> Dict[str, PropertyResult]:
    """Normalization, the admissible range [a, b] and linearity of grid estimation."""
    results = {name: PropertyResult(name) for name in ("grid_normalization", "grid_range", "grid_linearity")}
    try:
        estimate, _ = grid_eval(g, tolerance)
    except (NormalizationError, OracleInvariantError) as e:
        results["grid_normalization"].fail(reason=str(e))
        return results
    results["grid_normalization"].passed += 1
    if g.a <= estimate <= g.b:
        results["grid_range"].passed += 1
    else:
        results["grid_range"].fail(estimate=estimate, interval=[g.a, g.b])

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        c1, c2, k = rng.normal(size=3)
        lhs = grid_expectation(g, lambda x: c1 * x + c2 * np.sin(k * x), tolerance)
        rhs = (c1 * grid_expectation(g, lambda x: x, tolerance)
               + c2 * grid_expectation(g, lambda x: np.sin(k * x), tolerance))
        if abs(lhs - rhs) <= GRID_LINEARITY_TOLERANCE:
            results["grid_linearity"].passed += 1
        else:
            results["grid_linearity"].fail(lhs=lhs, rhs=rhs)
    return results
