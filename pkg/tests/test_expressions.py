import math

import pytest
from hypothesis import given, strategies as st

from pirktune import expressions as ex
from pirktune.errors import BoundsError, DocumentError, DomainError, UnboundIdentifierError


def test_parse_literals_and_arithmetic():
    assert ex.eval_scalar("0.1130 - 0.0403 + 0.0258 - 0.0099") == pytest.approx(0.0886)
    assert ex.eval_scalar("(s+1)*n+s", {"s": 4, "n": 1000}) == 5004
    assert ex.eval_scalar("2e-3 * 4") == pytest.approx(8e-3)


def test_precedence_and_unary_minus():
    assert ex.eval_scalar("2 + 3 * 4") == 14
    assert ex.eval_scalar("-2 * 3") == -6
    assert ex.eval_scalar("2 - 3 - 4") == -5
    assert ex.eval_scalar("12 / 2 / 3") == 2
    assert ex.eval_scalar("-(2 + 3)") == -5


def test_array_access_and_calls():
    env = {"F": [[1.0, 2.0], [3.0, 4.0]], "i": 1, "j": 0}
    assert ex.eval_expr(ex.parse_expr("F[i][j]"), env) == 3.0
    assert ex.eval_expr(ex.parse_expr("sqrt(F[0][1] + 2)"), env) == 2.0
    assert ex.eval_expr(ex.parse_expr("pow(2, 10)"), env) == 1024.0


def test_unknown_function_rejected():
    with pytest.raises(DocumentError):
        ex.parse_expr("foo(1)")


def test_trailing_garbage_rejected():
    with pytest.raises(DocumentError):
        ex.parse_expr("1 + 2 )")
    with pytest.raises(DocumentError):
        ex.parse_expr("a b")


def test_statement_plain_and_augmented():
    plain = ex.parse_statement("dy[j] = dy[j] + b[i] * F[i][j]")
    sugar = ex.parse_statement("dy[j] += b[i] * F[i][j]")
    assert plain == sugar
    assert ex.statement_to_c(plain) == "dy[j] += b[i] * F[i][j];"


def test_statement_requires_assignable_target():
    with pytest.raises(DocumentError):
        ex.parse_statement("1 + 2 = 3")


def test_eval_errors_classified():
    with pytest.raises(UnboundIdentifierError):
        ex.eval_expr(ex.parse_expr("nope"), {})
    with pytest.raises(BoundsError):
        ex.eval_expr(ex.parse_expr("a[3]"), {"a": [1.0, 2.0, 3.0]})
    with pytest.raises(DomainError):
        ex.eval_expr(ex.parse_expr("sqrt(0 - 1)"), {})
    with pytest.raises(DomainError):
        ex.eval_expr(ex.parse_expr("1 / (1 - 1)"), {})
    with pytest.raises(DomainError):
        ex.eval_expr(ex.parse_expr("exp(10000)"), {})


def test_never_silently_nan():
    # 0/0 must raise, not propagate NaN
    with pytest.raises(DomainError):
        ex.eval_expr(ex.parse_expr("(1 - 1) / (2 - 2)"), {})


def test_fold_constants_and_identities():
    assert ex.fold(ex.parse_expr("2 * 3 + 1")) == ex.Num(7.0)
    assert ex.fold(ex.parse_expr("0.0 * x")) == ex.Num(0.0)
    assert ex.fold(ex.parse_expr("x + 0.0")) == ex.Name("x")
    assert ex.fold(ex.parse_expr("1.0 * x")) == ex.Name("x")
    assert ex.fold(ex.parse_expr("x / 1.0")) == ex.Name("x")
    assert ex.fold(ex.parse_expr("0.0 - x")) == ex.Neg(ex.Name("x"))
    # folding is exact-literal only: nothing numeric-fuzzy happens
    kept = ex.fold(ex.parse_expr("1e-300 * x"))
    assert isinstance(kept, ex.Bin)


def test_substitute_names_not_array_bases():
    expr = ex.parse_expr("b[i] * x + i")
    out = ex.substitute(expr, {"i": ex.Num(2.0), "x": ex.Num(0.5)})
    assert ex.to_c(ex.fold(out)) == "b[2] * 0.5 + 2"


# -- printing round trip ----------------------------------------------------

_names = st.sampled_from(["x", "y", "F", "dy", "h"])


def _exprs(depth: int = 3):
    leaf = st.one_of(
        st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(ex.Num),
        _names.map(ex.Name),
    )
    return st.recursive(
        leaf,
        lambda children: st.one_of(
            st.tuples(st.sampled_from("+-*/"), children, children).map(
                lambda t: ex.Bin(t[0], t[1], t[2])
            ),
            children.map(ex.Neg),
            st.tuples(_names, st.lists(children, min_size=1, max_size=2)).map(
                lambda t: ex.Index(t[0], tuple(t[1]))
            ),
        ),
        max_leaves=12,
    )


@given(_exprs())
def test_print_parse_round_trip(expr):
    assert ex.parse_expr(ex.to_c(expr)) == expr


def test_print_parse_round_trip_examples():
    for text in (
        "dy[j] + b[i] * F[i][j]",
        "-(a - b) / (c - -d)",
        "2 / (3 / 4) / 5",
        "x - (y - z)",
        "x * -y",
        "exp(-a * t) + pow(x, 2)",
    ):
        expr = ex.parse_expr(text)
        assert ex.parse_expr(ex.to_c(expr)) == expr


def test_numbers_print_compactly():
    assert ex.to_c(ex.Num(161.0)) == "161"
    assert ex.to_c(ex.Num(0.2205)) == "0.2205"
    assert math.isclose(float(ex.to_c(ex.Num(1 / 3))), 1 / 3)
