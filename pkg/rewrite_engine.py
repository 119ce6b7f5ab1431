"""
rewrite_engine.py — Rewrite rules and derivations of the estimation calculus
Named rules for Requirements 0–3 and the Boolean encoding, an innermost-first
normalizer with a fuel budget, auditable derivation traces, the scripted sum /
negation / product / expectation derivations and probability-notation rendering.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from expressions import (
    Add, And, Atom, Const, Context, Equals, Estim, EstimationError, Expr, KDelta, Mul,
    Not, ONE, Or, Path, PropEnc, Proposition, Unknown, as_fraction, canonicalize,
    encode_connective, is_two_valued, positions, prop_symbols, reduce_prop,
    replace_at, specialize, split_coefficient, subterm, _scaled,
)
from expr_parser import print_expr

logger = logging.getLogger(__name__)

DEFAULT_FUEL = 10_000


# ─────────────────────────────────────────────────────────
# Errors
# ─────────────────────────────────────────────────────────

class DomainError(EstimationError):
    """A rule needed a two-valued or finite-domain variable and did not get one."""


class EngineError(EstimationError):
    """A scripted derivation step did not apply where it was expected to."""


class FuelExhausted(EstimationError):
    def __init__(self, trace: "DerivationTrace", fuel: int):
        super().__init__(f"normalization did not terminate within {fuel} steps")
        self.trace = trace
        self.fuel = fuel


# ─────────────────────────────────────────────────────────
# Traces
# ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TraceStep:
    rule: str
    anchor: str
    path: Path
    before: Expr
    after: Expr
    replacement: Expr


def format_path(path: Path) -> str:
    return ".".join(str(i) for i in path) if path else "root"


@dataclass
class DerivationTrace:
    """Ordered rule applications leading from `initial` to `final`."""
    initial: Expr
    final: Expr
    steps: List[TraceStep] = field(default_factory=list)
    title: str = ""

    def record(self, rule: "RewriteRule", path: Path, replacement: Expr) -> Expr:
        before = self.final
        after = canonicalize(replace_at(before, path, replacement))
        self.steps.append(TraceStep(rule.name, rule.anchor, path, before, after, replacement))
        self.final = after
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"step {len(self.steps)}: [{rule.name} @ {format_path(path)}] {before} ⇒ {after}")
        return after

    def states(self) -> List[Expr]:
        return [self.initial] + [s.after for s in self.steps]

    def replay(self) -> Expr:
        """Re-apply every recorded replacement to `initial`; returns the reproduced final form."""
        current = self.initial
        for step in self.steps:
            current = canonicalize(replace_at(current, step.path, step.replacement))
        return current

    def is_consistent(self) -> bool:
        current = self.initial
        for step in self.steps:
            if step.before != current:
                return False
            current = canonicalize(replace_at(current, step.path, step.replacement))
            if current != step.after:
                return False
        return current == self.final

    def render(self, braces: bool = False, anchors: bool = False) -> str:
        lines = []
        for k, step in enumerate(self.steps, 1):
            line = (f"step {k}: [{step.rule} @ {format_path(step.path)}] "
                    f"{print_expr(step.before, braces)} ⇒ {print_expr(step.after, braces)}")
            if anchors:
                line += f"    ({step.anchor})"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "title": self.title,
            "initial": print_expr(self.initial),
            "final": print_expr(self.final),
            "steps": [
                {
                    "step": k,
                    "rule": s.rule,
                    "anchor": s.anchor,
                    "path": list(s.path),
                    "before": print_expr(s.before),
                    "after": print_expr(s.after),
                }
                for k, s in enumerate(self.steps, 1)
            ],
        }


# ─────────────────────────────────────────────────────────
# Rules and strategy
# ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RewriteRule:
    """
    A named, anchored rewrite. `apply(node, strategy, **kwargs)` returns the
    replacement for `node` or None when the rule does not match there.
    Scripted rules only fire inside scripted derivations.
    """
    name: str
    anchor: str
    apply: Callable[..., Optional[Expr]]
    scripted: bool = False


@dataclass(frozen=True)
class RuleStrategy:
    fuel: int = DEFAULT_FUEL
    rules: Optional[Tuple[RewriteRule, ...]] = None
    bits: FrozenSet[str] = frozenset()
    domains: Dict[str, Tuple[Fraction, ...]] = field(default_factory=dict)
    delta_as_prop: bool = False
    prop_as_delta: bool = False

    def __post_init__(self):
        if self.fuel <= 0:
            raise ValueError("fuel must be positive")
        object.__setattr__(self, "bits", frozenset(self.bits))
        object.__setattr__(self, "domains", {
            name: tuple(as_fraction(v) for v in values) for name, values in self.domains.items()
        })

    def two_valued_unknowns(self) -> FrozenSet[str]:
        declared = {name for name, dom in self.domains.items() if dom and set(dom) <= {0, 1}}
        return self.bits | frozenset(declared)

    def rule(self, name: str) -> RewriteRule:
        """Look up a rule by name, preferring an injected replacement."""
        for r in self.rules or ():
            if r.name == name:
                return r
        return RULES[name]

    def active_rules(self) -> Tuple[RewriteRule, ...]:
        base = [self.rule(r.name) for r in DEFAULT_RULES]
        if self.delta_as_prop:
            base.append(self.rule("delta_as_prop"))
        if self.prop_as_delta:
            base.append(self.rule("prop_as_delta"))
        if self.domains:
            base.append(self.rule("delta_completeness"))
        return tuple(base)

    def with_rules(self, *replacements: RewriteRule) -> "RuleStrategy":
        kept = tuple(r for r in self.rules or () if r.name not in {x.name for x in replacements})
        return RuleStrategy(self.fuel, kept + tuple(replacements), self.bits, self.domains,
                            self.delta_as_prop, self.prop_as_delta)


# ─────────────────────────────────────────────────────────
# What a context knows
# ─────────────────────────────────────────────────────────

def _prop_known(p: Proposition, ctx: Context) -> bool:
    r = reduce_prop(p, ctx.values, ctx.truths, ctx.known_props)
    if isinstance(r, bool):
        return True
    params = ctx.proposition_parameters
    if r in params or (isinstance(r, Not) and r.p in params):
        return True
    unknowns, atoms = prop_symbols(r)
    atom_params = {q.name for q in params if isinstance(q, Atom)}
    return unknowns <= ctx.unknown_parameters and atoms <= atom_params


def is_known(e: Expr, ctx: Context) -> bool:
    """True when the value of `e` is fixed by `ctx` (assigned, asserted or a parameter)."""
    if isinstance(e, Const):
        return True
    if isinstance(e, Unknown):
        return e.name in ctx.values or e.name in ctx.unknown_parameters
    if isinstance(e, PropEnc):
        return _prop_known(e.prop, ctx)
    if isinstance(e, Estim):
        return all(
            (item in ctx.values or item in ctx.unknown_parameters) if isinstance(item, str)
            else _prop_known(item, ctx)
            for item in e.ctx.parameters
        )
    if isinstance(e, KDelta):
        return is_known(e.a, ctx) and is_known(e.b, ctx)
    if isinstance(e, Add):
        return all(is_known(t, ctx) for t in e.terms)
    if isinstance(e, Mul):
        return all(is_known(f, ctx) for f in e.factors)
    return False


def _substitute_known(e: Expr, ctx: Context) -> Expr:
    return specialize(e, ctx.values, ctx.truths, ctx.known_props)


# ─────────────────────────────────────────────────────────
# Rule implementations
# ─────────────────────────────────────────────────────────

def rule_known_eval(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """est(f | ctx) → f with the context's knowledge substituted, when f is fully known."""
    if not isinstance(e, Estim) or not is_known(e.body, e.ctx):
        return None
    return _substitute_known(e.body, e.ctx)


def rule_linear_sum(e: Expr, strategy: RuleStrategy, pull_coefficients: bool = True, **_) -> Optional[Expr]:
    """est(a + b | ctx) → est(a | ctx) + est(b | ctx); known summands are evaluated in place."""
    if not isinstance(e, Estim) or not isinstance(e.body, Add):
        return None
    parts = []
    for term in e.body.terms:
        if is_known(term, e.ctx):
            parts.append(_substitute_known(term, e.ctx))
            continue
        coef, monomial = split_coefficient(term)
        if pull_coefficients and coef != 1:
            parts.append(Mul((Const(coef), Estim(_scaled(Fraction(1), monomial), e.ctx))))
        else:
            parts.append(Estim(term, e.ctx))
    return canonicalize(Add(tuple(parts)))


def rule_scalar_out(e: Expr, strategy: RuleStrategy, factor: Optional[Expr] = None, **_) -> Optional[Expr]:
    """est(c·x | ctx) → c·est(x | ctx) for every factor c known under ctx."""
    if not isinstance(e, Estim) or not isinstance(e.body, Mul):
        return None
    known, rest = [], []
    taken = False
    for f in e.body.factors:
        if factor is None:
            pick = is_known(f, e.ctx)
        else:
            pick = isinstance(f, Const) or (f == factor and not taken and is_known(f, e.ctx))
        if pick:
            known.append(f)
            taken = taken or f == factor
        else:
            rest.append(f)
    if not known or not rest:
        return None
    inner = rest[0] if len(rest) == 1 else Mul(tuple(rest))
    pulled = [_substitute_known(f, e.ctx) for f in known]
    return canonicalize(Mul(tuple(pulled) + (Estim(inner, e.ctx),)))


def rule_tower(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """est(est(y | x, ctx) | ctx) → est(y | ctx)."""
    if not isinstance(e, Estim) or not isinstance(e.body, Estim):
        return None
    inner = e.body
    if inner.ctx == e.ctx or not inner.ctx.extends_by_parameters(e.ctx):
        return None
    return Estim(inner.body, e.ctx)


def rule_tower_expand(e: Expr, strategy: RuleStrategy, parameter=None, **_) -> Optional[Expr]:
    """est(y | ctx) → est(est(y | p, ctx) | ctx); introduces the free parameter p."""
    if not isinstance(e, Estim) or parameter is None:
        return None
    if isinstance(parameter, Unknown):
        parameter = parameter.name
    elif isinstance(parameter, PropEnc):
        parameter = parameter.prop
    inner_ctx = e.ctx.with_parameter(parameter)
    if inner_ctx == e.ctx:
        return None
    return Estim(Estim(e.body, inner_ctx), e.ctx)


def _bit_facts(bit: Expr) -> Optional[Tuple[Dict[str, Fraction], Dict[str, bool], Dict[Proposition, bool]]]:
    """What becomes known when the two-valued factor `bit` equals 1."""
    values: Dict[str, Fraction] = {}
    truths: Dict[str, bool] = {}
    known: Dict[Proposition, bool] = {}
    if isinstance(bit, Unknown):
        values[bit.name] = Fraction(1)
    elif isinstance(bit, KDelta):
        a, b = bit.a, bit.b
        if isinstance(a, Unknown) and isinstance(b, Const):
            a, b = b, a
        if not (isinstance(a, Const) and isinstance(b, Unknown)):
            return None
        values[b.name] = a.value
    elif isinstance(bit, PropEnc):
        pending = [bit.prop]
        while pending:
            p = pending.pop()
            known[p] = True
            if isinstance(p, And):
                pending.extend((p.p, p.q))
            elif isinstance(p, Atom):
                truths[p.name] = True
            elif isinstance(p, Not) and isinstance(p.p, Atom):
                truths[p.p.name] = False
            elif isinstance(p, Equals):
                values[p.name] = p.value
    else:
        return None
    return values, truths, known


def rule_two_valued(e: Expr, strategy: RuleStrategy, bit: Optional[Expr] = None, **_) -> Optional[Expr]:
    """
    a·F(a) → a·F(1) for a two-valued factor a. Parameters of nested estimations that
    a fixes become assignments (a=1) or assertions (A).
    """
    bits = strategy.two_valued_unknowns()
    if bit is not None and not is_two_valued(bit, bits):
        raise DomainError(f"{print_expr(bit)} is not certified two-valued; declare its domain as {{0,1}}")
    if not isinstance(e, Mul):
        return None
    factors = e.factors
    for i, f in enumerate(factors):
        if bit is not None and f != bit:
            continue
        if not is_two_valued(f, bits):
            continue
        facts = _bit_facts(f)
        if facts is None:
            continue
        others = [g if j == i else specialize(g, *facts) for j, g in enumerate(factors)]
        if others != list(factors):
            return canonicalize(Mul(tuple(others)))
    return None


def rule_prop_encode(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """n(P) → arithmetic over the encodings of P's operands (one connective per firing)."""
    if not isinstance(e, PropEnc) or not isinstance(e.prop, (Not, And, Or)):
        return None
    return encode_connective(e.prop)


def rule_delta_as_prop(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """delta(c, x) → n(x=c)."""
    if not isinstance(e, KDelta):
        return None
    a, b = e.a, e.b
    if isinstance(a, Unknown) and isinstance(b, Const):
        a, b = b, a
    if isinstance(a, Const) and isinstance(b, Unknown):
        return PropEnc(Equals(b.name, a.value))
    return None


def rule_prop_as_delta(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """n(x=c) → delta(c, x)."""
    if isinstance(e, PropEnc) and isinstance(e.prop, Equals):
        return canonicalize(KDelta(Const(e.prop.value), Unknown(e.prop.name)))
    return None


def _delta_point(term: Expr) -> Optional[Tuple[str, Fraction]]:
    if isinstance(term, KDelta) and isinstance(term.a, Const) and isinstance(term.b, Unknown):
        return term.b.name, term.a.value
    return None


def rule_delta_completeness(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """Σ_i delta(x_i, x) over the whole declared domain of x → 1."""
    if isinstance(e, KDelta):
        point = _delta_point(e)
        if point and strategy.domains.get(point[0]) == (point[1],):
            return ONE
        return None
    if not isinstance(e, Add):
        return None
    points = [_delta_point(t) for t in e.terms]
    for name, domain in sorted(strategy.domains.items()):
        if not domain:
            continue
        present = {p[1] for p in points if p and p[0] == name}
        if present >= set(domain):
            kept = [t for t, p in zip(e.terms, points) if not (p and p[0] == name and p[1] in domain)]
            return canonicalize(Add(tuple(kept) + (ONE,)))
    return None


def expansion_over_domain(name: str, domain: Sequence[Fraction]) -> Expr:
    """x = Σ_i x_i·delta(x_i, x) over the complete set of values of x."""
    return canonicalize(Add(tuple(Mul((Const(v), KDelta(Const(v), Unknown(name)))) for v in domain)))


def rule_expand_complete_set(e: Expr, strategy: RuleStrategy, variable: Optional[str] = None, **_) -> Optional[Expr]:
    """est(f(x) | ctx) → est(f(Σ_i x_i·delta(x_i, x)) | ctx)."""
    if not isinstance(e, Estim) or variable is None:
        return None
    if isinstance(variable, Unknown):
        variable = variable.name
    domain = strategy.domains.get(variable)
    if not domain:
        raise DomainError(f"'{variable}' has no declared finite domain")
    expansion = expansion_over_domain(variable, domain)

    def visit(node: Expr) -> Expr:
        if node == Unknown(variable):
            return expansion
        if isinstance(node, Add):
            return Add(tuple(visit(t) for t in node.terms))
        if isinstance(node, Mul):
            return Mul(tuple(visit(f) for f in node.factors))
        return node

    body = canonicalize(visit(e.body))
    if body == e.body:
        return None
    return Estim(body, e.ctx)


def rule_linear_merge(e: Expr, strategy: RuleStrategy, **_) -> Optional[Expr]:
    """est(a | ctx) + est(b | ctx) → est(a + b | ctx)."""
    if not isinstance(e, Add) or not all(isinstance(t, Estim) for t in e.terms):
        return None
    contexts = {t.ctx for t in e.terms}
    if len(contexts) != 1:
        return None
    return Estim(canonicalize(Add(tuple(t.body for t in e.terms))), e.terms[0].ctx)


RULES: Dict[str, RewriteRule] = {
    r.name: r for r in (
        RewriteRule("known_eval", "Requirement 0: estimation of a fully known quantity", rule_known_eval),
        RewriteRule("prop_encode", "integer encoding of Boolean connectives", rule_prop_encode),
        RewriteRule("linear_sum", "Requirement 2: estimation of a sum is the sum of estimations", rule_linear_sum),
        RewriteRule("scalar_out", "Requirement 2: known factors move outside the estimation", rule_scalar_out),
        RewriteRule("tower", "Requirement 3: partial estimation removes free parameters", rule_tower),
        RewriteRule("two_valued", "two-valued substitution a·F(a) = a·F(1)", rule_two_valued),
        RewriteRule("delta_as_prop", "delta(x_i, x) equals n(x = x_i)", rule_delta_as_prop),
        RewriteRule("prop_as_delta", "n(x = x_i) equals delta(x_i, x)", rule_prop_as_delta),
        RewriteRule("delta_completeness", "deltas over the complete set of values sum to one", rule_delta_completeness),
        RewriteRule("tower_expand", "Requirement 3 read right to left", rule_tower_expand, scripted=True),
        RewriteRule("expand_complete_set", "x = Σ x_i delta(x_i, x) over the complete set of values",
                    rule_expand_complete_set, scripted=True),
        RewriteRule("linear_merge", "Requirement 2 read right to left", rule_linear_merge, scripted=True),
    )
}

DEFAULT_RULES: Tuple[RewriteRule, ...] = tuple(
    RULES[name] for name in ("known_eval", "prop_encode", "linear_sum", "scalar_out", "tower", "two_valued")
)


# ─────────────────────────────────────────────────────────
# Normalization
# ─────────────────────────────────────────────────────────

def _find_redex(current: Expr, rules: Iterable[RewriteRule], strategy: RuleStrategy):
    rules = tuple(rules)
    for path in positions(current):
        node = subterm(current, path)
        for rule in rules:
            out = rule.apply(node, strategy)
            if out is None:
                continue
            out = canonicalize(out)
            if out != node and canonicalize(replace_at(current, path, out)) != current:
                return rule, path, out
    return None


def normalize(e: Expr, strategy: Optional[RuleStrategy] = None) -> Tuple[Expr, DerivationTrace]:
    """
    Rewrite `e` to a fixpoint: innermost position first, and at each position the
    first matching rule in priority order. Raises FuelExhausted (carrying the
    partial trace) after `strategy.fuel` steps.
    """
    strategy = strategy or RuleStrategy()
    current = canonicalize(e)
    trace = DerivationTrace(initial=current, final=current, title="normalize")
    rules = strategy.active_rules()
    while True:
        found = _find_redex(trace.final, rules, strategy)
        if found is None:
            break
        if len(trace.steps) >= strategy.fuel:
            logger.error(f"fuel exhausted after {strategy.fuel} steps at {trace.final}")
            raise FuelExhausted(trace, strategy.fuel)
        rule, path, out = found
        trace.record(rule, path, out)
    return trace.final, trace


def apply_rule(
    trace: DerivationTrace,
    name: str,
    path: Path = (),
    strategy: Optional[RuleStrategy] = None,
    **kwargs,
) -> Expr:
    """Apply one named rule at `path` of the trace's current expression and record the step."""
    strategy = strategy or RuleStrategy()
    rule = strategy.rule(name)
    current = trace.final
    node = subterm(current, path)
    out = rule.apply(node, strategy, **kwargs)
    if out is None:
        raise EngineError(f"{name} does not apply at {format_path(path)} of {print_expr(current)}")
    return trace.record(rule, path, canonicalize(out))


def _start(initial: Expr, title: str) -> DerivationTrace:
    initial = canonicalize(initial)
    return DerivationTrace(initial=initial, final=initial, title=title)


# ─────────────────────────────────────────────────────────
# Scripted derivations
# ─────────────────────────────────────────────────────────

def derive_negation_rule(
    a: Proposition = Atom("A"),
    ctx: Optional[Context] = None,
    strategy: Optional[RuleStrategy] = None,
) -> DerivationTrace:
    """{n(¬A)}_I = 1 − {n(A)}_I."""
    ctx = ctx or Context()
    trace = _start(Estim(PropEnc(Not(a)), ctx), "negation")
    apply_rule(trace, "prop_encode", (0,), strategy)
    apply_rule(trace, "linear_sum", (), strategy)
    return trace


def derive_sum_rule(
    a: Proposition = Atom("A"),
    b: Proposition = Atom("B"),
    ctx: Optional[Context] = None,
    strategy: Optional[RuleStrategy] = None,
) -> DerivationTrace:
    """{n(A ∨ B)}_I = {n(A)}_I + {n(B)}_I − {n(A)n(B)}_I."""
    ctx = ctx or Context()
    trace = _start(Estim(PropEnc(Or(a, b)), ctx), "sum")
    apply_rule(trace, "prop_encode", (0,), strategy)
    apply_rule(trace, "linear_sum", (), strategy)
    return trace


def derive_product_rule(
    a: Proposition = Atom("A"),
    b: Proposition = Atom("B"),
    ctx: Optional[Context] = None,
    strategy: Optional[RuleStrategy] = None,
) -> DerivationTrace:
    """
    {n(A)·n(B)}_I = {n(A)}_I {n(B)}_{A,I}, in four steps:

        est(n(A)*n(B) | I)
        est(est(n(A)*n(B) | n(A), I) | I)        tower_expand
        est(n(A)*est(n(B) | n(A), I) | I)        scalar_out (a known inside)
        est(n(A)*est(n(B) | A, I) | I)           two_valued (G → G*)
        est(n(A) | I) * est(n(B) | A, I)         scalar_out (inner estimation is a constant)
    """
    ctx = ctx or Context()
    if a == b:
        raise EngineError("the product derivation needs two distinct propositions")
    bit = PropEnc(a)
    trace = _start(Estim(Mul((bit, PropEnc(b))), ctx), "product")
    apply_rule(trace, "tower_expand", (), strategy, parameter=bit)
    apply_rule(trace, "scalar_out", (0,), strategy, factor=bit)

    current = trace.final
    inner_path = next(
        (p for p in positions(current)
         if isinstance(subterm(current, p), Mul) and bit in subterm(current, p).factors),
        None,
    )
    if inner_path is None:
        raise EngineError(f"no product with {print_expr(bit)} in {print_expr(current)}")
    apply_rule(trace, "two_valued", inner_path, strategy, bit=bit)
    apply_rule(trace, "scalar_out", (), strategy)
    return trace


@dataclass
class ExpectationDerivation:
    """{x}_I = Σ x_i p_i (expansion) together with Σ_i p_i = 1 (normalization)."""
    variable: str
    domain: Tuple[Fraction, ...]
    expansion: DerivationTrace
    normalization: DerivationTrace

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variable": self.variable,
            "domain": [str(v) for v in self.domain],
            "expansion": self.expansion.to_dict(),
            "normalization": self.normalization.to_dict(),
        }


def derive_expectation_theorem(
    x: Union[str, Unknown],
    domain: Optional[Sequence] = None,
    ctx: Optional[Context] = None,
    strategy: Optional[RuleStrategy] = None,
) -> ExpectationDerivation:
    name = x.name if isinstance(x, Unknown) else x
    strategy = strategy or RuleStrategy()
    if domain is None:
        domain = strategy.domains.get(name)
    if not domain:
        raise DomainError(f"'{name}' needs a declared finite domain for the expectation derivation")
    domain = tuple(sorted(set(as_fraction(v) for v in domain)))
    domains = dict(strategy.domains)
    domains[name] = domain
    strategy = RuleStrategy(strategy.fuel, strategy.rules, strategy.bits, domains,
                            strategy.delta_as_prop, strategy.prop_as_delta)
    ctx = ctx or Context()

    expansion = _start(Estim(Unknown(name), ctx), "expectation")
    apply_rule(expansion, "expand_complete_set", (), strategy, variable=name)
    if isinstance(expansion.final, Estim) and isinstance(expansion.final.body, Add):
        apply_rule(expansion, "linear_sum", (), strategy, pull_coefficients=False)
    while True:
        terms = expansion.final.terms if isinstance(expansion.final, Add) else (expansion.final,)
        pending = [
            i for i, t in enumerate(terms)
            if isinstance(t, Estim) and isinstance(t.body, Mul) and isinstance(t.body.factors[0], Const)
        ]
        if not pending:
            break
        path = (pending[0],) if isinstance(expansion.final, Add) else ()
        apply_rule(expansion, "scalar_out", path, strategy)
    if isinstance(expansion.final, Estim) and isinstance(expansion.final.body, Const):
        apply_rule(expansion, "known_eval", (), strategy)

    weights = Add(tuple(Estim(KDelta(Const(v), Unknown(name)), ctx) for v in domain))
    normalization = _start(weights, "normalization")
    if isinstance(normalization.final, Add):
        apply_rule(normalization, "linear_merge", (), strategy)
    apply_rule(normalization, "delta_completeness", (0,), strategy)
    apply_rule(normalization, "known_eval", (), strategy)
    return ExpectationDerivation(name, domain, expansion, normalization)


DERIVATIONS = ("negation", "sum", "product", "expectation")


# ─────────────────────────────────────────────────────────
# Probability notation
# ─────────────────────────────────────────────────────────

MINUS = "−"


def _number(value: Fraction) -> str:
    return str(value).replace("-", MINUS)


def _prob_prop(p: Proposition, level: int = 0) -> str:
    if isinstance(p, Atom):
        return p.name
    if isinstance(p, Equals):
        return f"{p.name}={_number(p.value)}"
    if isinstance(p, Not):
        return "¬" + _prob_prop(p.p, 2)
    if isinstance(p, And):
        s = f"{_prob_prop(p.p, 1)} ∧ {_prob_prop(p.q, 2)}"
        return f"({s})" if level > 1 else s
    s = f"{_prob_prop(p.p, 0)} ∨ {_prob_prop(p.q, 1)}"
    return f"({s})" if level > 0 else s


def _prob_context(ctx: Context) -> str:
    items = [f"{name}={_number(v)}" for name, v in ctx.assignments]
    items += [p if isinstance(p, str) else f"n({_prob_prop(p)})" for p in ctx.parameters]
    items += [_prob_prop(p) for p in ctx.asserted]
    items.append(ctx.background)
    return ",".join(items)


def _event(body: Expr) -> Optional[List[Proposition]]:
    """The conjuncts of the event whose indicator is `body`, or None."""
    if isinstance(body, PropEnc):
        return [body.prop]
    point = _delta_point(body)
    if point:
        return [Equals(point[0], point[1])]
    if isinstance(body, Mul):
        out = []
        for f in body.factors:
            sub = _event(f)
            if sub is None:
                return None
            out.extend(sub)
        return out
    return None


def _prob(e: Expr, nested: bool) -> str:
    if isinstance(e, Const):
        s = _number(e.value)
        return f"({s})" if nested and e.value < 0 else s
    if isinstance(e, Unknown):
        return e.name
    if isinstance(e, PropEnc):
        return f"n({_prob_prop(e.prop)})"
    if isinstance(e, KDelta):
        return f"δ({_prob(e.a, False)}, {_prob(e.b, False)})"
    if isinstance(e, Estim):
        event = _event(e.body)
        if event is not None:
            level = 0 if len(event) == 1 else 1
            text = " ∧ ".join(_prob_prop(p, level) for p in event)
            return f"P({text}|{_prob_context(e.ctx)})"
        return f"E({_prob(e.body, False)}|{_prob_context(e.ctx)})"
    if isinstance(e, Mul):
        coef, rest = split_coefficient(e)
        parts = [_prob(f, True) for f in rest]
        s = ""
        for i, part in enumerate(parts):
            juxtapose = i > 0 and isinstance(rest[i], Estim) and isinstance(rest[i - 1], Estim)
            s += part if i == 0 or juxtapose else "·" + part
        if coef == -1:
            s = MINUS + s
        elif coef != 1:
            s = _number(coef) + (s if isinstance(rest[0], Estim) else "·" + s)
        return f"({s})" if nested else s
    if isinstance(e, Add):
        s = _prob(e.terms[0], False)
        for term in e.terms[1:]:
            coef, rest = split_coefficient(term)
            if coef < 0:
                s += f" {MINUS} " + _prob(_scaled(-coef, rest), False)
            else:
                s += " + " + _prob(term, False)
        return f"({s})" if nested else s
    raise TypeError(f"not an expression: {e!r}")


def to_probability_form(e: Expr) -> str:
    """
    Render est(n(P) | ctx) as P(P|ctx), products of encodings as conjunctions and
    est(delta(c, x) | ctx) as P(x=c|ctx). Other estimations render as E(·|ctx).
    """
    return _prob(canonicalize(e), False)
