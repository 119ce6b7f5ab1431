"""
expr_parser.py — Surface syntax for the estimation calculus
Tokenizer, recursive-descent parser with source spans, and the pretty-printer.

    expr    := term (('+'|'-') term)*
    term    := factor ('*' factor)*
    factor  := '-' factor | NUMBER | IDENT | 'n' '(' prop ')' | 'delta' '(' expr ',' expr ')'
             | 'est' '(' expr '|' ctx ')' | '(' expr ')'
    prop    := conj ('or' conj)* ;  conj := neg ('and' neg)*
    neg     := 'not' neg | IDENT | IDENT '=' NUMBER | '(' prop ')'
    ctx     := ctxitem (',' ctxitem)*        (last item: background token)
    ctxitem := 'n' '(' prop ')' | IDENT '=' NUMBER | IDENT | prop
    program := ('let' IDENT '=' expr ';')* expr

Uppercase identifiers are propositions, lowercase identifiers are quantities.
"""

import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from expressions import (
    Add, And, Atom, Const, Context, ContextError, Equals, Estim, EstimationError,
    Expr, KDelta, Mul, Not, Or, PropEnc, Proposition, RESERVED_WORDS, Unknown,
    canonicalize, is_atom_name, split_coefficient, _scaled,
)

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────
# Spans and errors
# ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SourceSpan:
    """Half-open character range [start, end) of the input, with 1-based line/column of start."""
    start: int
    end: int
    line: int
    column: int

    def contains(self, other: "SourceSpan") -> bool:
        return self.start <= other.start and other.end <= self.end


class ExprSyntaxError(EstimationError):
    def __init__(self, message: str, span: SourceSpan, expected: Iterable[str] = ()):
        self.message = message
        self.span = span
        self.expected = frozenset(expected)
        super().__init__(f"line {span.line}, column {span.column}: {message}")

    def render(self, text: str) -> str:
        """Diagnostic with the offending line and a caret under the span."""
        lines = text.split("\n")
        source_line = lines[self.span.line - 1] if self.span.line - 1 < len(lines) else ""
        width = max(1, min(self.span.end, self.span.start + len(source_line)) - self.span.start)
        caret = " " * (self.span.column - 1) + "^" * width
        out = [str(self), f"  {source_line}", f"  {caret}"]
        if self.expected:
            out.append(f"  expected one of: {', '.join(sorted(self.expected))}")
        return "\n".join(out)


# ─────────────────────────────────────────────────────────
# Tokenizer
# ─────────────────────────────────────────────────────────

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<number>\d+(?:/\d+|\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*(),|=;])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int


class _Lines:
    def __init__(self, text: str):
        self.starts = [0] + [i + 1 for i, ch in enumerate(text) if ch == "\n"]

    def span(self, start: int, end: int) -> SourceSpan:
        line = 0
        lo, hi = 0, len(self.starts) - 1
        while lo <= hi:
            mid = (lo + hi) // 2
            if self.starts[mid] <= start:
                line, lo = mid, mid + 1
            else:
                hi = mid - 1
        return SourceSpan(start, end, line + 1, start - self.starts[line] + 1)


def tokenize(text: str) -> List[Token]:
    lines = _Lines(text)
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", lines.span(pos, pos + 1))
        kind = m.lastgroup
        if kind == "ident" and m.group() in RESERVED_WORDS:
            kind = m.group()
        elif kind == "op":
            kind = m.group()
        if kind != "ws":
            tokens.append(Token(kind, m.group(), m.start(), m.end()))
        pos = m.end()
    tokens.append(Token("eof", "", len(text), len(text)))
    return tokens


def _number(tok: Token, span: SourceSpan) -> Fraction:
    try:
        return Fraction(tok.text)
    except ZeroDivisionError:
        raise ExprSyntaxError(f"zero denominator in {tok.text!r}", span)


# ─────────────────────────────────────────────────────────
# Parser
# ─────────────────────────────────────────────────────────

FACTOR_START = frozenset({"number", "ident", "n", "delta", "est", "(", "-"})
PROP_START = frozenset({"ident", "not", "("})


@dataclass(frozen=True)
class Program:
    """A parsed input file: let-bindings followed by one expression (already expanded)."""
    bindings: Dict[str, Expr]
    expr: Expr


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.lines = _Lines(text)
        self.tokens = tokenize(text)
        self.pos = 0

    # ── token helpers ──

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def at(self, *kinds: str) -> bool:
        return self.tok.kind in kinds

    def advance(self) -> Token:
        tok = self.tok
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def span_of(self, tok: Token) -> SourceSpan:
        return self.lines.span(tok.start, tok.end)

    def span_from(self, first: Token) -> SourceSpan:
        last = self.tokens[self.pos - 1] if self.pos > 0 else first
        return self.lines.span(first.start, max(first.end, last.end))

    def fail(self, expected: Iterable[str], message: Optional[str] = None, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        expected = frozenset(expected)
        if message is None:
            message = f"expected {' or '.join(sorted(expected))} but found {found}"
        raise ExprSyntaxError(message, self.span_of(tok), expected)

    def expect(self, kind: str) -> Token:
        if not self.at(kind):
            self.fail({kind})
        return self.advance()

    # ── expressions ──

    def expr(self) -> Expr:
        first = self.tok
        terms = [self.term()]
        while self.at("+", "-"):
            op = self.advance()
            term = self.term()
            if op.kind == "-":
                term = Mul((Const(-1, span=self.span_of(op)), term), span=self.span_from(op))
            terms.append(term)
        if len(terms) == 1:
            return terms[0]
        return Add(tuple(terms), span=self.span_from(first))

    def term(self) -> Expr:
        first = self.tok
        factors = [self.factor()]
        while self.at("*"):
            self.advance()
            factors.append(self.factor())
        if len(factors) == 1:
            return factors[0]
        return Mul(tuple(factors), span=self.span_from(first))

    def factor(self) -> Expr:
        tok = self.tok
        if tok.kind == "-":
            self.advance()
            inner = self.factor()
            return Mul((Const(-1, span=self.span_of(tok)), inner), span=self.span_from(tok))
        if tok.kind == "number":
            self.advance()
            span = self.span_of(tok)
            return Const(_number(tok, span), span=span)
        if tok.kind == "ident":
            if is_atom_name(tok.text):
                self.fail(FACTOR_START, f"proposition '{tok.text}' used as a quantity; write n({tok.text})")
            self.advance()
            return Unknown(tok.text, span=self.span_of(tok))
        if tok.kind == "n":
            self.advance()
            self.expect("(")
            p = self.prop()
            self.expect(")")
            return PropEnc(p, span=self.span_from(tok))
        if tok.kind == "delta":
            self.advance()
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return KDelta(a, b, span=self.span_from(tok))
        if tok.kind == "est":
            self.advance()
            self.expect("(")
            body = self.expr()
            self.expect("|")
            ctx = self.context()
            self.expect(")")
            return Estim(body, ctx, span=self.span_from(tok))
        if tok.kind == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        self.fail(FACTOR_START)

    def signed_number(self) -> Fraction:
        first = self.tok
        sign = 1
        if self.at("-"):
            self.advance()
            sign = -1
        tok = self.expect("number")
        return sign * _number(tok, self.span_from(first))

    # ── propositions ──

    def prop(self) -> Proposition:
        first = self.tok
        p = self.conj()
        while self.at("or"):
            self.advance()
            p = Or(p, self.conj(), span=self.span_from(first))
        return p

    def conj(self) -> Proposition:
        first = self.tok
        p = self.neg()
        while self.at("and"):
            self.advance()
            p = And(p, self.neg(), span=self.span_from(first))
        return p

    def neg(self) -> Proposition:
        tok = self.tok
        if tok.kind == "not":
            self.advance()
            return Not(self.neg(), span=self.span_from(tok))
        if tok.kind == "(":
            self.advance()
            p = self.prop()
            self.expect(")")
            return p
        if tok.kind == "ident":
            self.advance()
            if is_atom_name(tok.text):
                if self.at("="):
                    self.fail((), f"proposition '{tok.text}' cannot be compared to a number")
                return Atom(tok.text, span=self.span_of(tok))
            if not self.at("="):
                self.fail({"="}, f"quantity '{tok.text}' used as a proposition; write {tok.text}=value")
            self.advance()
            value = self.signed_number()
            return Equals(tok.text, value, span=self.span_from(tok))
        self.fail(PROP_START)

    # ── contexts ──

    def context(self) -> Context:
        first = self.tok
        items = [self.context_item()]
        while self.at(","):
            self.advance()
            items.append(self.context_item())

        kind, value, bare, item_tok = items[-1]
        if not bare:
            self.fail({"ident"}, "a context must end with its background token (for example I)", item_tok)
        background = value if isinstance(value, str) else value.name

        assignments: List[Tuple[str, Fraction]] = []
        asserted: List[Proposition] = []
        parameters = []
        for kind, value, bare, item_tok in items[:-1]:
            if kind == "assign":
                assignments.append(value)
            elif kind == "asserted":
                asserted.append(value)
            else:
                parameters.append(value)
        try:
            return Context(background, tuple(assignments), tuple(asserted), tuple(parameters),
                           span=self.span_from(first))
        except ContextError as e:
            raise ExprSyntaxError(str(e), self.span_from(first))

    def context_item(self):
        tok = self.tok
        if tok.kind == "n" and self.peek().kind == "(":
            self.advance()
            self.advance()
            p = self.prop()
            self.expect(")")
            return "parameter", p, False, tok
        if tok.kind == "ident" and not is_atom_name(tok.text) and self.peek().kind in (",", ")"):
            self.advance()
            return "parameter", tok.text, True, tok
        start = self.pos
        p = self.prop()
        if isinstance(p, Equals):
            return "assign", (p.name, p.value), False, tok
        bare = isinstance(p, Atom) and self.pos - start == 1
        return "asserted", p, bare, tok

    # ── programs ──

    def program(self) -> Program:
        bindings: Dict[str, Expr] = {}
        while self.at("let"):
            self.advance()
            name_tok = self.expect("ident")
            if is_atom_name(name_tok.text):
                self.fail({"ident"}, "let-bound names must be lowercase quantities", name_tok)
            self.expect("=")
            value = expand_bindings(self.expr(), bindings)
            self.expect(";")
            bindings[name_tok.text] = value
        body = self.expr()
        if not self.at("eof"):
            self.fail({"eof", "+", "-", "*"})
        return Program(bindings, expand_bindings(body, bindings))

    def whole_expr(self) -> Expr:
        e = self.expr()
        if not self.at("eof"):
            self.fail({"eof", "+", "-", "*"})
        return e


def expand_bindings(e: Expr, bindings: Dict[str, Expr]) -> Expr:
    """Replace let-bound unknowns everywhere, including estimation bodies and contexts."""
    if not bindings:
        return e
    if isinstance(e, Unknown):
        return bindings.get(e.name, e)
    if isinstance(e, Add):
        return Add(tuple(expand_bindings(t, bindings) for t in e.terms), span=e.span)
    if isinstance(e, Mul):
        return Mul(tuple(expand_bindings(f, bindings) for f in e.factors), span=e.span)
    if isinstance(e, KDelta):
        return KDelta(expand_bindings(e.a, bindings), expand_bindings(e.b, bindings), span=e.span)
    if isinstance(e, Estim):
        return Estim(expand_bindings(e.body, bindings), _expand_context(e.ctx, bindings), span=e.span)
    return e


def _expand_context(ctx: Context, bindings: Dict[str, Expr]) -> Context:
    assignments, asserted, parameters = [], list(ctx.asserted), []
    for name, value in ctx.assignments:
        bound = bindings.get(name)
        if bound is None:
            assignments.append((name, value))
        elif isinstance(bound, PropEnc) and value in (0, 1):
            asserted.append(bound.prop if value == 1 else Not(bound.prop))
        else:
            raise ExprSyntaxError(f"cannot assign {value} to let-bound '{name}'", ctx.span or SourceSpan(0, 0, 1, 1))
    for item in ctx.parameters:
        bound = bindings.get(item) if isinstance(item, str) else None
        if bound is None:
            parameters.append(item)
        elif isinstance(bound, PropEnc):
            parameters.append(bound.prop)
        elif isinstance(bound, Unknown):
            parameters.append(bound.name)
        else:
            raise ExprSyntaxError(f"let-bound '{item}' cannot be a context parameter", ctx.span or SourceSpan(0, 0, 1, 1))
    return Context(ctx.background, tuple(assignments), tuple(asserted), tuple(parameters), span=ctx.span)


def parse_expr(text: str, canonical: bool = True) -> Expr:
    """Parse one expression; the result is canonical unless `canonical=False`."""
    e = _Parser(text).whole_expr()
    return canonicalize(e) if canonical else e


def parse_prop(text: str) -> Proposition:
    parser = _Parser(text)
    p = parser.prop()
    if not parser.at("eof"):
        parser.fail({"eof", "and", "or"})
    return p


def parse_program(text: str) -> Program:
    program = _Parser(text).program()
    return Program(program.bindings, canonicalize(program.expr))


# ─────────────────────────────────────────────────────────
# Printer
# ─────────────────────────────────────────────────────────

_SUM, _PRODUCT, _FACTOR = 0, 1, 2


def format_number(value: Fraction) -> str:
    return str(value)


def print_prop(p: Proposition, level: int = 0) -> str:
    if isinstance(p, Atom):
        return p.name
    if isinstance(p, Equals):
        return f"{p.name}={format_number(p.value)}"
    if isinstance(p, Not):
        return f"not {print_prop(p.p, 2)}"
    if isinstance(p, And):
        s = f"{print_prop(p.p, 1)} and {print_prop(p.q, 2)}"
        return f"({s})" if level > 1 else s
    if isinstance(p, Or):
        s = f"{print_prop(p.p, 0)} or {print_prop(p.q, 1)}"
        return f"({s})" if level > 0 else s
    raise TypeError(f"not a proposition: {p!r}")


def context_items(ctx: Context) -> List[str]:
    items = [f"{name}={format_number(value)}" for name, value in ctx.assignments]
    for item in ctx.parameters:
        items.append(item if isinstance(item, str) else f"n({print_prop(item)})")
    for p in ctx.asserted:
        items.append(print_prop(p))
    items.append(ctx.background)
    return items


def print_context(ctx: Context, sep: str = ", ") -> str:
    return sep.join(context_items(ctx))


def _negated(term: Expr) -> Optional[Expr]:
    """The positive form of a negatively scaled term, or None."""
    coef, monomial = split_coefficient(term)
    if coef >= 0 or (isinstance(term, Mul) and not isinstance(term.factors[0], Const)):
        return None
    if isinstance(term, Const):
        return Const(-coef)
    return _scaled(-coef, monomial)


def _print(e: Expr, level: int, braces: bool) -> str:
    if isinstance(e, Const):
        s = format_number(e.value)
        return f"({s})" if level == _FACTOR and e.value < 0 else s
    if isinstance(e, Unknown):
        return e.name
    if isinstance(e, PropEnc):
        return f"n({print_prop(e.prop)})"
    if isinstance(e, KDelta):
        return f"delta({_print(e.a, _SUM, braces)}, {_print(e.b, _SUM, braces)})"
    if isinstance(e, Estim):
        if braces:
            return "{" + _print(e.body, _SUM, braces) + "}_{" + print_context(e.ctx, ",") + "}"
        return f"est({_print(e.body, _SUM, braces)} | {print_context(e.ctx)})"
    if isinstance(e, Mul):
        factors = list(e.factors)
        prefix = ""
        if len(factors) > 1 and isinstance(factors[0], Const):
            coef = factors.pop(0).value
            if coef == -1:
                prefix = "-"
            elif coef != 1:
                prefix = format_number(coef) + " * "
        s = prefix + " * ".join(_print(f, _FACTOR, braces) for f in factors)
        return f"({s})" if level == _FACTOR or (prefix.startswith("-") and level > _SUM) else s
    if isinstance(e, Add):
        parts = [_print(e.terms[0], _SUM, braces)]
        for term in e.terms[1:]:
            positive = _negated(term)
            if positive is None:
                parts.append(" + " + _print(term, _PRODUCT, braces))
            else:
                parts.append(" - " + _print(positive, _PRODUCT, braces))
        s = "".join(parts)
        return f"({s})" if level > _SUM else s
    raise TypeError(f"not an expression: {e!r}")


def print_expr(e: Expr, braces: bool = False) -> str:
    """
    Render an expression in the input syntax, or in brace notation {x}_{I} when
    `braces` is set. parse_expr(print_expr(e)) == canonicalize(e).
    """
    return _print(e, _SUM, braces)
