"""
generators.py — Seeded random terms for property checks
Propositions, expressions, contexts and rule firing sites drawn from a
random.Random, so every check run is reproducible from its seed.
"""

import random
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from expressions import (
    Add, And, Atom, Const, Context, Equals, Estim, Expr, KDelta, Mul, Not, Or,
    PropEnc, Proposition, Unknown,
)

Domains = Dict[str, Tuple[Fraction, ...]]

SMALL_CONSTANTS = (Fraction(-2), Fraction(-1), Fraction(0), Fraction(1), Fraction(2),
                   Fraction(1, 2), Fraction(3), Fraction(-3, 4))


# ─────────────────────────────────────────────────────────
# Propositions
# ─────────────────────────────────────────────────────────

def all_props(atoms: Sequence[str], depth: int) -> List[Proposition]:
    """Every proposition tree over `atoms` with connective depth ≤ depth."""
    level = [Atom(a) for a in atoms]
    for _ in range(depth):
        previous = list(level)
        level = list(previous)
        level += [Not(p) for p in previous]
        level += [And(p, q) for p in previous for q in previous]
        level += [Or(p, q) for p in previous for q in previous]
    return level


def random_prop(
    rng: random.Random,
    atoms: Sequence[str],
    depth: int,
    domains: Optional[Domains] = None,
) -> Proposition:
    leaves = [Atom(a) for a in atoms]
    for name, dom in (domains or {}).items():
        leaves.extend(Equals(name, v) for v in dom)
    if depth <= 0 or rng.random() < 0.3:
        return rng.choice(leaves)
    kind = rng.randrange(3)
    if kind == 0:
        return Not(random_prop(rng, atoms, depth - 1, domains))
    left = random_prop(rng, atoms, depth - 1, domains)
    right = random_prop(rng, atoms, depth - 1, domains)
    return And(left, right) if kind == 1 else Or(left, right)


# ─────────────────────────────────────────────────────────
# Contexts
# ─────────────────────────────────────────────────────────

def random_context(
    rng: random.Random,
    domains: Domains,
    atoms: Sequence[str],
    background: str = "I",
    parameters: bool = False,
    max_items: int = 2,
) -> Context:
    assignments, asserted, params = [], [], []
    names = sorted(domains)
    for _ in range(rng.randint(0, max_items)):
        roll = rng.random()
        if names and roll < 0.4:
            name = rng.choice(names)
            if name not in dict(assignments):
                assignments.append((name, rng.choice(domains[name])))
        elif atoms and roll < 0.8:
            a = Atom(rng.choice(list(atoms)))
            asserted.append(a if rng.random() < 0.5 else Not(a))
        elif parameters and names:
            params.append(rng.choice(names))
    assigned = {name for name, _ in assignments}
    atoms_seen = set()
    kept = []
    for p in asserted:
        name = p.name if isinstance(p, Atom) else p.p.name
        if name not in atoms_seen:
            atoms_seen.add(name)
            kept.append(p)
    return Context(background, tuple(assignments), tuple(kept),
                   tuple(p for p in params if p not in assigned))


# ─────────────────────────────────────────────────────────
# Expressions
# ─────────────────────────────────────────────────────────

def random_body(
    rng: random.Random,
    domains: Domains,
    atoms: Sequence[str],
    depth: int,
) -> Expr:
    """An estimation-free expression over the given variables and atoms."""
    names = sorted(domains)
    if depth <= 0 or rng.random() < 0.25:
        roll = rng.random()
        if names and roll < 0.4:
            return Unknown(rng.choice(names))
        if atoms and roll < 0.65:
            return PropEnc(random_prop(rng, atoms, 1, domains))
        if names and roll < 0.8:
            name = rng.choice(names)
            return KDelta(Const(rng.choice(domains[name])), Unknown(name))
        return Const(rng.choice(SMALL_CONSTANTS))
    arity = rng.randint(2, 3)
    kids = tuple(random_body(rng, domains, atoms, depth - 1) for _ in range(arity))
    return Add(kids) if rng.random() < 0.5 else Mul(kids)


def random_expr(
    rng: random.Random,
    domains: Domains,
    atoms: Sequence[str],
    depth: int,
    background: str = "I",
    parameters: bool = True,
) -> Expr:
    """
    An expression that may nest estimations. Free unknowns only appear inside
    estimation bodies, so the result is closed whenever `parameters` is False.
    """
    if depth <= 1 or rng.random() < 0.2:
        body = random_body(rng, domains, atoms, max(0, depth - 1))
        ctx = random_context(rng, domains, atoms, background)
        return Estim(body, ctx) if rng.random() < 0.7 else Const(rng.choice(SMALL_CONSTANTS))
    roll = rng.random()
    if roll < 0.3:
        kids = tuple(random_expr(rng, domains, atoms, depth - 1, background, parameters)
                     for _ in range(rng.randint(2, 3)))
        return Add(kids)
    if roll < 0.5:
        kids = (Const(rng.choice(SMALL_CONSTANTS)),
                random_expr(rng, domains, atoms, depth - 1, background, parameters))
        return Mul(kids)
    ctx = random_context(rng, domains, atoms, background)
    inner = random_body(rng, domains, atoms, max(0, depth - 2))
    if parameters and domains and rng.random() < 0.5:
        name = rng.choice(sorted(domains))
        nested = Estim(inner, ctx.with_parameter(name)) if name not in ctx.values else Estim(inner, ctx)
        return Estim(Add((Unknown(name), nested)) if rng.random() < 0.5 else nested, ctx)
    return Estim(Add((inner, random_body(rng, domains, atoms, 1))), ctx)


def random_syntax_tree(rng: random.Random, depth: int) -> Expr:
    """Arbitrary (possibly non-canonical, possibly open) tree for parser round-trips."""
    domains = {"x": (Fraction(0), Fraction(1), Fraction(-2)), "y": (Fraction(1, 2), Fraction(3))}
    atoms = ("A", "B")
    if depth <= 0 or rng.random() < 0.2:
        roll = rng.random()
        if roll < 0.3:
            return Unknown(rng.choice(("x", "y", "z", "w")))
        if roll < 0.55:
            return PropEnc(random_prop(rng, atoms, 2, domains))
        if roll < 0.7:
            return KDelta(Unknown(rng.choice(("x", "y"))), Const(rng.choice(SMALL_CONSTANTS)))
        return Const(rng.choice(SMALL_CONSTANTS))
    roll = rng.random()
    if roll < 0.3:
        return Add(tuple(random_syntax_tree(rng, depth - 1) for _ in range(rng.randint(2, 3))))
    if roll < 0.6:
        return Mul(tuple(random_syntax_tree(rng, depth - 1) for _ in range(rng.randint(2, 3))))
    if roll < 0.7:
        return KDelta(random_syntax_tree(rng, depth - 1), random_syntax_tree(rng, depth - 1))
    ctx = random_context(rng, domains, atoms, rng.choice(("I", "J")), parameters=True)
    if rng.random() < 0.3:
        ctx = ctx.with_parameter(random_prop(rng, atoms, 1))
    return Estim(random_syntax_tree(rng, depth - 1), ctx)


# ─────────────────────────────────────────────────────────
# Rule firing sites
# ─────────────────────────────────────────────────────────

def rule_sites(
    rng: random.Random,
    rule: str,
    domains: Domains,
    atoms: Sequence[str],
    count: int,
) -> Iterator[Tuple[Expr, dict]]:
    """
    Closed expressions on which `rule` is expected to fire at the root, with the
    keyword arguments a scripted rule needs.
    """
    names = sorted(domains)

    def body(depth: int = 2) -> Expr:
        return random_body(rng, domains, atoms, depth)

    def ctx() -> Context:
        return random_context(rng, domains, atoms)

    for _ in range(count):
        c = ctx()
        if rule == "known_eval":
            full = Context(c.background, tuple((n, rng.choice(domains[n])) for n in names),
                           tuple(Atom(a) if rng.random() < 0.5 else Not(Atom(a)) for a in atoms))
            yield Estim(body(), full), {}
        elif rule == "prop_encode":
            p = random_prop(rng, atoms, 2, domains)
            while not isinstance(p, (Not, And, Or)):
                p = random_prop(rng, atoms, 2, domains)
            yield Estim(Mul((PropEnc(p), body(1))), c), {}
        elif rule == "linear_sum":
            yield Estim(Add((body(), body(), body(1))), c), {}
        elif rule == "scalar_out":
            if names and rng.random() < 0.5:
                name = rng.choice(names)
                c = c.with_assignment(name, rng.choice(domains[name])) if name not in c.values else c
                yield Estim(Mul((Unknown(name), body())), c), {}
            else:
                yield Estim(Mul((Const(rng.choice(SMALL_CONSTANTS[3:])), body())), c), {}
        elif rule in ("tower", "tower_expand"):
            if rng.random() < 0.5 or not names:
                parameter = Atom(rng.choice(list(atoms)))
            else:
                parameter = rng.choice(names)
            if isinstance(parameter, str) and parameter in c.values:
                c = Context(c.background, tuple(kv for kv in c.assignments if kv[0] != parameter), c.asserted)
            if isinstance(parameter, Atom):
                c = Context(c.background, c.assignments,
                            tuple(p for p in c.asserted if parameter not in (p, getattr(p, "p", None))))
            inner = Estim(body(), c.with_parameter(parameter))
            if rule == "tower":
                yield Estim(inner, c), {}
            else:
                yield Estim(body(), c), {"parameter": parameter}
        elif rule == "two_valued":
            a = Atom(rng.choice(list(atoms)))
            if rng.random() < 0.5:
                free = Context(c.background, c.assignments,
                               tuple(p for p in c.asserted if a not in (p, getattr(p, "p", None))))
                yield Estim(Mul((PropEnc(a), Estim(body(), free.with_parameter(a)))), free), {}
            else:
                yield Estim(Mul((PropEnc(a), PropEnc(Or(a, random_prop(rng, atoms, 1))), body(1))), c), {}
        elif rule in ("delta_as_prop", "prop_as_delta"):
            name = rng.choice(names)
            point = rng.choice(domains[name])
            site = KDelta(Const(point), Unknown(name)) if rule == "delta_as_prop" else PropEnc(Equals(name, point))
            yield Estim(Mul((site, body(1))), c), {}
        elif rule == "delta_completeness":
            name = rng.choice(names)
            deltas = tuple(KDelta(Const(v), Unknown(name)) for v in domains[name])
            yield Estim(Add(deltas + (body(1),)), c), {}
        elif rule == "expand_complete_set":
            name = rng.choice(names)
            yield Estim(Add((Unknown(name), Mul((Unknown(name), body(1))))), c), {"variable": name}
        elif rule == "linear_merge":
            yield Add((Estim(body(), c), Estim(body(), c))), {}
        else:
            raise KeyError(f"no site template for rule '{rule}'")
