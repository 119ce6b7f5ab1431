"""
expressions.py — Expression language of the estimation calculus
Immutable expression trees, propositions and contexts, the canonical form,
the Boolean-to-integer encoding n(·) and a reference evaluator for ground terms.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import (
    TYPE_CHECKING, Callable, Dict, FrozenSet, Iterator, List, Mapping,
    Optional, Sequence, Tuple, Union,
)

if TYPE_CHECKING:
    from expr_parser import SourceSpan

logger = logging.getLogger(__name__)

RESERVED_WORDS = frozenset({"n", "delta", "est", "not", "and", "or", "let"})


# ─────────────────────────────────────────────────────────
# Errors
# ─────────────────────────────────────────────────────────

class EstimationError(Exception):
    """Base class for every error raised by the estimation calculus."""


class UnboundSymbol(EstimationError):
    def __init__(self, name: str, kind: str = "unknown"):
        super().__init__(f"{kind} '{name}' has no value in the current assignment")
        self.name = name
        self.kind = kind


class NotGround(EstimationError):
    """An estimation node reached the ground evaluator."""


class ContextError(EstimationError):
    """A context was built with contradictory or ill-typed items."""


def as_fraction(value: Union[int, str, Fraction]) -> Fraction:
    if isinstance(value, bool):
        raise TypeError("truth values are not numbers; use n(P)")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def is_atom_name(name: str) -> bool:
    """Uppercase identifiers name propositions, lowercase ones name quantities."""
    return name[:1].isupper()


# ─────────────────────────────────────────────────────────
# Propositions
# ─────────────────────────────────────────────────────────

class Proposition:
    """Boolean formula over atoms and equality atoms."""


@dataclass(frozen=True)
class Atom(Proposition):
    name: str
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Equals(Proposition):
    """The proposition `name = value` about an unknown quantity."""
    name: str
    value: Fraction
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", as_fraction(self.value))


@dataclass(frozen=True)
class Not(Proposition):
    p: Proposition
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class And(Proposition):
    p: Proposition
    q: Proposition
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Or(Proposition):
    p: Proposition
    q: Proposition
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


def prop_key(p: Proposition) -> tuple:
    if isinstance(p, Atom):
        return (0, p.name)
    if isinstance(p, Equals):
        return (1, p.name, p.value)
    if isinstance(p, Not):
        return (2, prop_key(p.p))
    if isinstance(p, And):
        return (3, prop_key(p.p), prop_key(p.q))
    if isinstance(p, Or):
        return (4, prop_key(p.p), prop_key(p.q))
    raise TypeError(f"not a proposition: {p!r}")


def prop_symbols(p: Proposition) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """(unknown names, atom names) mentioned by a proposition."""
    if isinstance(p, Atom):
        return frozenset(), frozenset({p.name})
    if isinstance(p, Equals):
        return frozenset({p.name}), frozenset()
    if isinstance(p, Not):
        return prop_symbols(p.p)
    u1, a1 = prop_symbols(p.p)
    u2, a2 = prop_symbols(p.q)
    return u1 | u2, a1 | a2


def eval_prop(p: Proposition, values: Mapping[str, Fraction], truths: Mapping[str, bool]) -> bool:
    if isinstance(p, Atom):
        if p.name not in truths:
            raise UnboundSymbol(p.name, "atom")
        return bool(truths[p.name])
    if isinstance(p, Equals):
        if p.name not in values:
            raise UnboundSymbol(p.name)
        return values[p.name] == p.value
    if isinstance(p, Not):
        return not eval_prop(p.p, values, truths)
    if isinstance(p, And):
        return eval_prop(p.p, values, truths) and eval_prop(p.q, values, truths)
    if isinstance(p, Or):
        return eval_prop(p.p, values, truths) or eval_prop(p.q, values, truths)
    raise TypeError(f"not a proposition: {p!r}")


def reduce_prop(
    p: Proposition,
    values: Mapping[str, Fraction],
    truths: Mapping[str, bool],
    known: Optional[Mapping[Proposition, bool]] = None,
) -> Union[bool, Proposition]:
    """Partially evaluate `p`; returns a bool when fully determined, else the residual formula."""
    if known and p in known:
        return known[p]
    if isinstance(p, Atom):
        return truths.get(p.name, p)
    if isinstance(p, Equals):
        if p.name in values:
            return values[p.name] == p.value
        return p
    if isinstance(p, Not):
        r = reduce_prop(p.p, values, truths, known)
        if isinstance(r, bool):
            return not r
        return p if r is p.p else Not(r, span=p.span)

    left = reduce_prop(p.p, values, truths, known)
    right = reduce_prop(p.q, values, truths, known)
    absorbing = isinstance(p, Or)
    for side in (left, right):
        if side is absorbing:
            return absorbing
    if isinstance(left, bool) and isinstance(right, bool):
        return left
    if isinstance(left, bool):
        return right
    if isinstance(right, bool):
        return left
    if left is p.p and right is p.q:
        return p
    return type(p)(left, right, span=p.span)


# ─────────────────────────────────────────────────────────
# Contexts (states of knowledge)
# ─────────────────────────────────────────────────────────

Parameter = Union[str, Proposition]


def parameter_key(item: Parameter) -> tuple:
    if isinstance(item, str):
        return (0, item)
    return (1, prop_key(item))


@dataclass(frozen=True)
class Context:
    """
    The conditioning side of an estimation.

    background  opaque token standing for the rest of the state of knowledge
    assignments unknowns with a known numeric value (x=2)
    asserted    propositions known to be true (A)
    parameters  unknowns or propositions whose value is known but unspecified
                (the x in {y}_{x,I}, the n(A) in {b}_{a,I} with a = n(A))
    """
    background: str = "I"
    assignments: Tuple[Tuple[str, Fraction], ...] = ()
    asserted: Tuple[Proposition, ...] = ()
    parameters: Tuple[Parameter, ...] = ()
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        items = self.assignments.items() if isinstance(self.assignments, Mapping) else self.assignments
        values: Dict[str, Fraction] = {}
        for name, value in items:
            if is_atom_name(name):
                raise ContextError(f"'{name}' names a proposition and cannot be assigned; assert it instead")
            if name in values:
                raise ContextError(f"unknown '{name}' is assigned twice")
            values[name] = as_fraction(value)

        asserted: List[Proposition] = []
        for p in self.asserted:
            if isinstance(p, Equals):
                if values.get(p.name, p.value) != p.value:
                    raise ContextError(f"'{p.name}' asserted equal to {p.value} but assigned {values[p.name]}")
                values[p.name] = p.value
            elif p not in asserted:
                asserted.append(p)

        params: List[Parameter] = []
        for item in self.parameters:
            if isinstance(item, Atom):
                item = Atom(item.name)
            if isinstance(item, str) and is_atom_name(item):
                item = Atom(item)
            if item in params or item in values or item in asserted:
                continue
            params.append(item)

        object.__setattr__(self, "assignments", tuple(sorted(values.items())))
        object.__setattr__(self, "asserted", tuple(sorted(asserted, key=prop_key)))
        object.__setattr__(self, "parameters", tuple(sorted(params, key=parameter_key)))

    # ── derived views ──

    @property
    def values(self) -> Dict[str, Fraction]:
        return dict(self.assignments)

    @property
    def truths(self) -> Dict[str, bool]:
        out = {}
        for p in self.asserted:
            if isinstance(p, Atom):
                out[p.name] = True
            elif isinstance(p, Not) and isinstance(p.p, Atom):
                out[p.p.name] = False
        return out

    @property
    def known_props(self) -> Dict[Proposition, bool]:
        return {p: True for p in self.asserted}

    @property
    def unknown_parameters(self) -> FrozenSet[str]:
        return frozenset(p for p in self.parameters if isinstance(p, str))

    @property
    def proposition_parameters(self) -> Tuple[Proposition, ...]:
        return tuple(p for p in self.parameters if not isinstance(p, str))

    def key(self) -> tuple:
        return (
            self.background,
            self.assignments,
            tuple(prop_key(p) for p in self.asserted),
            tuple(parameter_key(p) for p in self.parameters),
        )

    # ── builders ──

    def with_parameter(self, item: Parameter) -> "Context":
        return Context(self.background, self.assignments, self.asserted, self.parameters + (item,))

    def with_assignment(self, name: str, value: Union[int, Fraction]) -> "Context":
        return Context(
            self.background, self.assignments + ((name, as_fraction(value)),), self.asserted,
            tuple(p for p in self.parameters if p != name),
        )

    def with_asserted(self, p: Proposition) -> "Context":
        return Context(
            self.background, self.assignments, self.asserted + (p,),
            tuple(q for q in self.parameters if q != p),
        )

    def without_parameters(self) -> "Context":
        return Context(self.background, self.assignments, self.asserted, ())

    def extends_by_parameters(self, outer: "Context") -> bool:
        """True when this context equals `outer` plus extra free parameters."""
        return (
            self.background == outer.background
            and self.assignments == outer.assignments
            and self.asserted == outer.asserted
            and set(outer.parameters) <= set(self.parameters)
        )

    def specialized(
        self,
        values: Mapping[str, Fraction],
        truths: Mapping[str, bool],
        known: Optional[Mapping[Proposition, bool]] = None,
    ) -> "Context":
        """Turn parameters whose value became known into assignments / assertions."""
        assignments = list(self.assignments)
        asserted = list(self.asserted)
        params: List[Parameter] = []
        for item in self.parameters:
            if isinstance(item, str):
                if item in values:
                    assignments.append((item, values[item]))
                else:
                    params.append(item)
                continue
            r = reduce_prop(item, values, truths, known)
            if r is True:
                asserted.append(item)
            elif r is False:
                asserted.append(item.p if isinstance(item, Not) else Not(item))
            else:
                params.append(item)
        if len(params) == len(self.parameters):
            return self
        return Context(self.background, tuple(assignments), tuple(asserted), tuple(params))


# ─────────────────────────────────────────────────────────
# Expressions
# ─────────────────────────────────────────────────────────

def _lift(value) -> "Expr":
    if isinstance(value, Expr):
        return value
    return Const(as_fraction(value))


class Expr:
    """Base class of expression nodes. Operators build (non-canonical) trees."""

    def __add__(self, other):
        return Add((self, _lift(other)))

    def __radd__(self, other):
        return Add((_lift(other), self))

    def __sub__(self, other):
        return Add((self, Mul((Const(-1), _lift(other)))))

    def __rsub__(self, other):
        return Add((_lift(other), Mul((Const(-1), self))))

    def __mul__(self, other):
        return Mul((self, _lift(other)))

    def __rmul__(self, other):
        return Mul((_lift(other), self))

    def __neg__(self):
        return Mul((Const(-1), self))

    def __str__(self):
        from expr_parser import print_expr
        return print_expr(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: Fraction
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", as_fraction(self.value))


@dataclass(frozen=True, eq=True)
class Unknown(Expr):
    name: str
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Add(Expr):
    terms: Tuple[Expr, ...]
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    factors: Tuple[Expr, ...]
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True, eq=True)
class KDelta(Expr):
    """Kronecker delta δ(a, b): 1 when a equals b, else 0."""
    a: Expr
    b: Expr
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class PropEnc(Expr):
    """The integer encoding n(p) of a proposition."""
    prop: Proposition
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Estim(Expr):
    """The estimation {body} under the state of knowledge ctx."""
    body: Expr
    ctx: Context
    span: Optional["SourceSpan"] = field(default=None, compare=False, repr=False)


ZERO = Const(0)
ONE = Const(1)


def n(p: Proposition) -> PropEnc:
    return PropEnc(p)


def est(body: Expr, ctx: Optional[Context] = None) -> Estim:
    return Estim(_lift(body), ctx if ctx is not None else Context())


def delta(a, b) -> KDelta:
    return KDelta(_lift(a), _lift(b))


# ─────────────────────────────────────────────────────────
# Tree plumbing
# ─────────────────────────────────────────────────────────

Path = Tuple[int, ...]


def children(e: Expr) -> Tuple[Expr, ...]:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, KDelta):
        return (e.a, e.b)
    if isinstance(e, Estim):
        return (e.body,)
    return ()


def with_children(e: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(e, Add):
        return Add(tuple(kids), span=e.span)
    if isinstance(e, Mul):
        return Mul(tuple(kids), span=e.span)
    if isinstance(e, KDelta):
        return KDelta(kids[0], kids[1], span=e.span)
    if isinstance(e, Estim):
        return Estim(kids[0], e.ctx, span=e.span)
    return e


def subterm(e: Expr, path: Path) -> Expr:
    for i in path:
        e = children(e)[i]
    return e


def replace_at(e: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(e))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(e, kids)


def positions(e: Expr, prefix: Path = ()) -> Iterator[Path]:
    """Innermost-first (post-order) enumeration of node positions."""
    for i, kid in enumerate(children(e)):
        yield from positions(kid, prefix + (i,))
    yield prefix


def map_free(e: Expr, fn: Callable[[Expr], Optional[Expr]]) -> Expr:
    """
    Rebuild `e` bottom-up, offering every node outside estimation bodies to `fn`.
    Estim nodes are offered as a whole; their bodies are bound and never visited.
    """
    if isinstance(e, Estim):
        out = fn(e)
        return e if out is None else out
    kids = children(e)
    if kids:
        new_kids = [map_free(k, fn) for k in kids]
        if any(a is not b for a, b in zip(new_kids, kids)):
            e = with_children(e, new_kids)
    out = fn(e)
    return e if out is None else out


# ─────────────────────────────────────────────────────────
# Free symbols
# ─────────────────────────────────────────────────────────

def _free_symbols(e: Expr) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    if isinstance(e, Unknown):
        return frozenset({e.name}), frozenset()
    if isinstance(e, PropEnc):
        return prop_symbols(e.prop)
    if isinstance(e, Estim):
        unknowns = set(e.ctx.unknown_parameters)
        atoms = set()
        for p in e.ctx.proposition_parameters:
            u, a = prop_symbols(p)
            unknowns |= u
            atoms |= a
        return frozenset(unknowns), frozenset(atoms)
    unknowns, atoms = set(), set()
    for kid in children(e):
        u, a = _free_symbols(kid)
        unknowns |= u
        atoms |= a
    return frozenset(unknowns), frozenset(atoms)


def free_unknowns(e: Expr) -> FrozenSet[str]:
    """Unknowns not absorbed by an enclosing estimation (estimations expose only their parameters)."""
    return _free_symbols(e)[0]


def all_symbols(e: Expr) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """Every unknown and atom mentioned anywhere, including estimation bodies and contexts."""
    unknowns, atoms = set(), set()

    def visit(node: Expr):
        if isinstance(node, Unknown):
            unknowns.add(node.name)
        elif isinstance(node, PropEnc):
            u, a = prop_symbols(node.prop)
            unknowns.update(u)
            atoms.update(a)
        elif isinstance(node, Estim):
            ctx = node.ctx
            unknowns.update(name for name, _ in ctx.assignments)
            unknowns.update(ctx.unknown_parameters)
            for p in ctx.asserted + ctx.proposition_parameters:
                u, a = prop_symbols(p)
                unknowns.update(u)
                atoms.update(a)
        for kid in children(node):
            visit(kid)

    visit(e)
    return frozenset(unknowns), frozenset(atoms)


def is_two_valued(e: Expr, bits: FrozenSet[str] = frozenset()) -> bool:
    """Encodings and deltas are bits by construction; unknowns only when declared {0,1}."""
    if isinstance(e, (PropEnc, KDelta)):
        return True
    return isinstance(e, Unknown) and e.name in bits


# ─────────────────────────────────────────────────────────
# Canonical form
# ─────────────────────────────────────────────────────────

def sort_key(e: Expr) -> tuple:
    """Fixed structural ordering; a scaled term sorts next to its unscaled monomial."""
    if isinstance(e, Const):
        return (0, e.value)
    if isinstance(e, Unknown):
        return (1, e.name)
    if isinstance(e, PropEnc):
        return (2, prop_key(e.prop))
    if isinstance(e, KDelta):
        return (3, sort_key(e.a), sort_key(e.b))
    if isinstance(e, Estim):
        return (4, sort_key(e.body), e.ctx.key())
    if isinstance(e, Mul):
        coef, rest = split_coefficient(e)
        if not rest:
            return (0, coef)
        if len(rest) == 1:
            return sort_key(rest[0]) + (("coef", coef),)
        return (5, tuple(sort_key(f) for f in rest), ("coef", coef))
    if isinstance(e, Add):
        return (6, tuple(sort_key(t) for t in e.terms))
    raise TypeError(f"not an expression: {e!r}")


def split_coefficient(e: Expr) -> Tuple[Fraction, Tuple[Expr, ...]]:
    if isinstance(e, Const):
        return e.value, ()
    if isinstance(e, Mul):
        coef = Fraction(1)
        rest = []
        for f in e.factors:
            if isinstance(f, Const):
                coef *= f.value
            else:
                rest.append(f)
        return coef, tuple(rest)
    return Fraction(1), (e,)


def _scaled(coef: Fraction, monomial: Tuple[Expr, ...], span=None) -> Expr:
    if not monomial:
        return Const(coef, span=span)
    if coef == 1 and len(monomial) == 1:
        return monomial[0]
    factors = monomial if coef == 1 else (Const(coef, span=span),) + monomial
    return Mul(factors, span=span)


def _canonical_mul(factors: Sequence[Expr], span) -> Expr:
    coef = Fraction(1)
    rest: List[Expr] = []
    stack = list(factors)
    while stack:
        f = stack.pop(0)
        if isinstance(f, Mul):
            stack[:0] = list(f.factors)
        elif isinstance(f, Const):
            coef *= f.value
        else:
            rest.append(f)
    if coef == 0 or not rest:
        return Const(coef, span=span)
    if len(rest) == 1 and isinstance(rest[0], Add):
        if coef == 1:
            return rest[0]
        return _canonical_add([_canonical_mul([Const(coef), t], span) for t in rest[0].terms], span)
    rest.sort(key=sort_key)
    return _scaled(coef, tuple(rest), span)


def _canonical_add(terms: Sequence[Expr], span) -> Expr:
    constant = Fraction(0)
    groups: Dict[Tuple[Expr, ...], Fraction] = {}
    stack = list(terms)
    while stack:
        t = stack.pop(0)
        if isinstance(t, Add):
            stack[:0] = list(t.terms)
            continue
        coef, monomial = split_coefficient(t)
        if not monomial:
            constant += coef
        else:
            groups[monomial] = groups.get(monomial, Fraction(0)) + coef

    out: List[Expr] = []
    if constant != 0:
        out.append(Const(constant, span=span))
    for monomial, coef in groups.items():
        if coef != 0:
            out.append(_scaled(coef, monomial, span))
    if not out:
        return Const(0, span=span)
    if len(out) == 1:
        return out[0]
    out.sort(key=sort_key)
    return Add(tuple(out), span=span)


def _raw_factors(e: Mul) -> List[Expr]:
    """Factors of nested products, flattened before any child is canonicalized."""
    out: List[Expr] = []
    for f in e.factors:
        out.extend(_raw_factors(f) if isinstance(f, Mul) else (f,))
    return out


def canonicalize(e: Expr) -> Expr:
    """
    Flatten n-ary sums and products, fold constants, collect like terms,
    distribute a lone constant over a sum and sort children by `sort_key`.
    Idempotent: canonicalize(canonicalize(e)) == canonicalize(e).
    """
    if isinstance(e, (Const, Unknown, PropEnc)):
        return e
    if isinstance(e, KDelta):
        a, b = canonicalize(e.a), canonicalize(e.b)
        if a == b:
            return Const(1, span=e.span)
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(0, span=e.span)
        if sort_key(b) < sort_key(a):
            a, b = b, a
        return KDelta(a, b, span=e.span)
    if isinstance(e, Estim):
        return Estim(canonicalize(e.body), e.ctx, span=e.span)
    if isinstance(e, Mul):
        return _canonical_mul([canonicalize(f) for f in _raw_factors(e)], e.span)
    if isinstance(e, Add):
        return _canonical_add([canonicalize(t) for t in e.terms], e.span)
    raise TypeError(f"not an expression: {e!r}")


# ─────────────────────────────────────────────────────────
# Boolean-to-integer encoding
# ─────────────────────────────────────────────────────────

def encode_connective(p: Proposition) -> Expr:
    """Expand the outermost connective of p into arithmetic over n(·) of its operands."""
    if isinstance(p, Not):
        return canonicalize(Add((ONE, Mul((Const(-1), PropEnc(p.p))))))
    if isinstance(p, And):
        return canonicalize(Mul((PropEnc(p.p), PropEnc(p.q))))
    if isinstance(p, Or):
        a, b = PropEnc(p.p), PropEnc(p.q)
        return canonicalize(Add((a, b, Mul((Const(-1), a, b)))))
    return PropEnc(p)


def _encode(p: Proposition) -> Expr:
    if isinstance(p, (Atom, Equals)):
        return PropEnc(p)
    if isinstance(p, Not):
        return Add((ONE, Mul((Const(-1), _encode(p.p)))))
    if isinstance(p, And):
        return Mul((_encode(p.p), _encode(p.q)))
    if isinstance(p, Or):
        a, b = _encode(p.p), _encode(p.q)
        return Add((a, b, Mul((Const(-1), a, b))))
    raise TypeError(f"not a proposition: {p!r}")


def encode_prop(p: Proposition) -> Expr:
    """
    n(p) as arithmetic over atomic encodings:
    n(¬A) = 1 − n(A), n(A ∧ B) = n(A)n(B), n(A ∨ B) = n(A) + n(B) − n(A)n(B).
    """
    return canonicalize(_encode(p))


# ─────────────────────────────────────────────────────────
# Ground evaluation and substitution
# ─────────────────────────────────────────────────────────

def eval_ground(
    e: Expr,
    assignment: Mapping[str, Union[int, Fraction]],
    atoms: Mapping[str, bool],
) -> Fraction:
    """Exact value of an estimation-free expression under a total assignment."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Unknown):
        if e.name not in assignment:
            raise UnboundSymbol(e.name)
        return as_fraction(assignment[e.name])
    if isinstance(e, Add):
        return sum((eval_ground(t, assignment, atoms) for t in e.terms), Fraction(0))
    if isinstance(e, Mul):
        out = Fraction(1)
        for f in e.factors:
            out *= eval_ground(f, assignment, atoms)
        return out
    if isinstance(e, KDelta):
        same = eval_ground(e.a, assignment, atoms) == eval_ground(e.b, assignment, atoms)
        return Fraction(int(same))
    if isinstance(e, PropEnc):
        values = {k: as_fraction(v) for k, v in assignment.items()}
        return Fraction(int(eval_prop(e.prop, values, atoms)))
    if isinstance(e, Estim):
        raise NotGround("estimation nodes have no ground value; use the oracle")
    raise TypeError(f"not an expression: {e!r}")


def specialize(
    e: Expr,
    values: Mapping[str, Fraction],
    truths: Mapping[str, bool],
    known: Optional[Mapping[Proposition, bool]] = None,
) -> Expr:
    """
    Substitute known values into the free occurrences of `e` and canonicalize.
    Nested estimations keep their bodies; parameters that became known move into
    their context as assignments or assertions.
    """
    known = known or {}

    def visit(node: Expr) -> Optional[Expr]:
        if isinstance(node, Unknown) and node.name in values:
            return Const(values[node.name], span=node.span)
        if isinstance(node, PropEnc):
            r = reduce_prop(node.prop, values, truths, known)
            if isinstance(r, bool):
                return Const(int(r), span=node.span)
            return None if r is node.prop else PropEnc(r, span=node.span)
        if isinstance(node, Estim):
            ctx = node.ctx.specialized(values, truths, known)
            return None if ctx is node.ctx else Estim(node.body, ctx, span=node.span)
        return None

    return canonicalize(map_free(e, visit))
