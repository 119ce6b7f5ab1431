import random
from fractions import Fraction

import pytest

from expressions import (
    Add, And, Atom, Const, Context, Equals, Estim, KDelta, Mul, Not, PropEnc, Unknown, canonicalize, children,
)
from expr_parser import (
    ExprSyntaxError, SourceSpan, parse_expr, parse_program, parse_prop, print_expr, print_prop, tokenize,
)
from generators import random_syntax_tree

x, y = Unknown("x"), Unknown("y")
A, B = Atom("A"), Atom("B")


def walk(e):
    yield e
    for child in children(e):
        yield from walk(child)


class TestParse:
    def test_estimation_with_assignment(self):
        assert parse_expr("est(x*y | x=2, I)") == Estim(Mul((x, y)), Context("I", (("x", 2),)))

    def test_proposition_encoding(self):
        assert parse_expr("est(n(A and B) | I)") == Estim(PropEnc(And(A, B)), Context())

    def test_nested_estimation_with_parameter(self):
        inner = Estim(y, Context("I", (), (), ("x",)))
        assert parse_expr("est(est(y | x, I) | I)") == Estim(inner, Context())

    def test_proposition_parameter(self):
        assert parse_expr("est(n(B) | n(A), I)") == Estim(PropEnc(B), Context("I", (), (), (A,)))

    def test_asserted_propositions(self):
        e = parse_expr("est(x | not A, B, J)")
        assert e.ctx == Context("J", (), (Not(A), B))

    def test_rational_and_decimal_numbers(self):
        assert parse_expr("3/4") == Const(Fraction("3/4"))
        assert parse_expr("0.25") == Const(Fraction("1/4"))
        assert parse_expr("est(x | x=-1/2, I)").ctx.values == {"x": Fraction("-1/2")}

    def test_delta(self):
        assert parse_expr("delta(x, 2)") == canonicalize(KDelta(x, Const(2)))

    def test_precedence(self):
        assert parse_expr("1 + 2*3") == Const(7)
        assert parse_expr("-(x + y)") == parse_expr("-x - y")

    def test_comments_and_newlines(self):
        assert parse_expr("# mean of x\nest(x |\n  I)  # trailing") == Estim(x, Context())

    def test_proposition_precedence(self):
        assert parse_prop("not A and B or A") == parse_prop("((not A) and B) or A")

    def test_equality_atom(self):
        assert parse_prop("x=2") == Equals("x", 2)

    def test_non_canonical_parse_keeps_shape(self):
        e = parse_expr("x + x", canonical=False)
        assert len(e.terms) == 2


class TestPrint:
    def test_product_rule_right_hand_side(self):
        e = canonicalize(Mul((Estim(PropEnc(A), Context()), Estim(PropEnc(B), Context("I", (), (A,))))))
        assert print_expr(e) == "est(n(A) | I) * est(n(B) | A, I)"

    def test_negation_rule_right_hand_side(self):
        assert print_expr(parse_expr("1 - est(n(A) | I)")) == "1 - est(n(A) | I)"

    def test_constants(self):
        assert print_expr(Const(1)) == "1"
        assert print_expr(parse_expr("3/4")) == "3/4"

    def test_brace_notation(self):
        assert print_expr(parse_expr("est(x | y=1, I)"), braces=True) == "{x}_{y=1,I}"
        assert print_expr(parse_expr("est(est(y | x, I) | I)"), braces=True) == "{{y}_{x,I}}_{I}"

    def test_proposition_printing(self):
        assert print_prop(Not(And(A, B))) == "not (A and B)"

    def test_random_round_trips(self):
        rng = random.Random(2024)
        for _ in range(1000):
            e = random_syntax_tree(rng, rng.randint(0, 6))
            text = print_expr(e)
            assert parse_expr(text) == canonicalize(e), text

    def test_negated_product_of_sums_round_trips(self):
        first = Add((PropEnc(Equals("x", 1)), KDelta(y, Const(-1)), Const(Fraction(1, 2))))
        second = Add((Const(Fraction(-3, 4)), x, Const(2)))
        e = Mul((Const(-1), first, second))
        text = print_expr(e)
        assert text == "-(n(x=1) + delta(y, -1) + 1/2) * (-3/4 + x + 2)"
        assert parse_expr(text) == canonicalize(e)
        assert print_expr(canonicalize(e)) == "-(1/2 + n(x=1) + delta(-1, y)) * (5/4 + x)"

    def test_canonical_print_is_stable(self):
        rng = random.Random(5)
        for _ in range(200):
            e = canonicalize(random_syntax_tree(rng, 4))
            assert print_expr(parse_expr(print_expr(e))) == print_expr(e)


class TestSpans:
    def test_every_node_has_a_span(self):
        text = "est(2*x + n(A or B) | y=1, A, I) - delta(x, 3)"
        for node in walk(parse_expr(text)):
            assert node.span is not None
            assert 0 <= node.span.start <= node.span.end <= len(text)

    def test_nested_spans_are_contained(self):
        text = "est(x + y | I)"
        e = parse_expr(text)
        whole = SourceSpan(0, len(text), 1, 1)
        assert whole.contains(e.span)
        assert e.span.contains(e.body.span)

    def test_line_and_column(self):
        tokens = tokenize("est(x |\n  I)")
        assert [t.kind for t in tokens][-1] == "eof"
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr("est(x |\n  I")
        assert info.value.span.line == 2


class TestErrors:
    def test_unbalanced_parenthesis(self):
        text = "est(x | I"
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr(text)
        err = info.value
        assert 0 <= err.span.start <= err.span.end <= len(text)
        assert err.expected == {")"}

    def test_render_points_at_the_error(self):
        text = "est(x + * y | I)"
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr(text)
        rendered = info.value.render(text)
        assert "^" in rendered
        assert text in rendered
        assert info.value.span.start == text.index("*")

    def test_atom_used_as_quantity(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr("est(A | I)")
        assert "n(A)" in str(info.value)

    def test_unknown_used_as_proposition(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("n(x)")

    def test_context_needs_background(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("est(x | x=1)")

    def test_duplicate_assignment_is_a_syntax_error(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("est(x | x=1, x=2, I)")

    def test_unexpected_character(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse_expr("x $ y")
        assert info.value.span.start == 2

    def test_trailing_input(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("x y")

    def test_zero_denominator(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("1/0")


class TestPrograms:
    def test_bindings_expand(self):
        program = parse_program("let a = n(A); let b = n(B); est(a*b | I)")
        assert program.expr == parse_expr("est(n(A)*n(B) | I)")
        assert set(program.bindings) == {"a", "b"}

    def test_binding_as_parameter(self):
        program = parse_program("let a = n(A); est(b | a, I)")
        assert program.expr == parse_expr("est(b | n(A), I)")

    def test_binding_assignment_becomes_assertion(self):
        assert parse_program("let a = n(A); est(b | a=1, I)").expr == parse_expr("est(b | A, I)")
        assert parse_program("let a = n(A); est(b | a=0, I)").expr == parse_expr("est(b | not A, I)")

    def test_bindings_refer_to_earlier_bindings(self):
        program = parse_program("let a = x + 1; let b = 2*a; b")
        assert program.expr == parse_expr("2*x + 2")

    def test_let_needs_lowercase_name(self):
        with pytest.raises(ExprSyntaxError):
            parse_program("let A = 1; A")

    def test_bad_assignment_to_binding(self):
        with pytest.raises(ExprSyntaxError):
            parse_program("let a = x + 1; est(b | a=1, I)")
