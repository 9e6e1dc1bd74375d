import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from degsde import exprlang as ex
from degsde.errors import ArityError, DomainError, ExprSyntaxError, IndexOutOfRange

D = 3


def ev(src, x=(0.0, 0.0, 0.0)):
    return ex.interpret(ex.parse(src, len(x)), np.asarray(x, dtype=float))


@pytest.mark.parametrize(
    "src, want",
    [
        ("1+2*3", 7.0),
        ("(1+2)*3", 9.0),
        ("2^3^2", 64.0),  # left-associative
        ("-2^2", -4.0),  # ^ binds tighter than unary minus
        ("2^-1", 0.5),
        ("10-4-3", 3.0),
        ("12/3/2", 2.0),
        ("1 < 2", 1.0),
        ("1 + 1 == 2", 1.0),
        ("max(1, min(5, 3))", 3.0),
        ("pow(2, 10)", 1024.0),
        ("step(0) + step(-1)", 1.0),
        ("abs(-3) + sqrt(16)", 7.0),
        ("exp(0) + log(1)", 1.0),
        ("1.5e1", 15.0),
    ],
)
def test_golden_values(src, want):
    assert ev(src) == want


def test_norm_and_coordinates():
    assert ev("norm(x)^0.5", (0.0, 4.0)) == 2.0
    assert ev("x[0]*x[1]", (3.0, -2.0)) == -6.0


def test_if_encodes_lifted_origin():
    src = "if(norm(x)==0, 0, norm(x)^0.5)"
    assert ev(src, (0.0, 0.0)) == 0.0
    assert ev(src, (0.0, 9.0)) == 3.0


@pytest.mark.parametrize(
    "src, offset",
    [("1 +", 3), ("(1", 2), ("1 $ 2", 2), ("foo(1)", 0), ("x[", 2), ("", 0), ("1 2", 2)],
)
def test_syntax_errors_carry_byte_offset(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse(src, 2)
    assert info.value.offset == offset
    assert isinstance(info.value, SyntaxError)


def test_offset_counts_bytes_not_characters():
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse("1 + é", 2)
    assert info.value.offset == 4


def test_arity_and_index_errors():
    with pytest.raises(ArityError):
        ex.parse("pow(1)", 2)
    with pytest.raises(ArityError):
        ex.parse("if(1, 2)", 2)
    with pytest.raises(IndexOutOfRange):
        ex.parse("x[2]", 2)


@pytest.mark.parametrize("src", ["log(0)", "log(-1)", "1/0", "0^-1", "sqrt(-1)", "exp(1000)"])
def test_domain_errors(src):
    with pytest.raises(DomainError):
        ev(src)


def test_compiled_batch_raises_domain_error():
    f = ex.field("1/x[0]", 2)
    with pytest.raises(DomainError):
        f(np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_constant_field_detected():
    f = ex.field("2*3", 2)
    assert f.constant == 6.0
    assert ex.field("x[0]", 2).constant is None


# ---------------------------------------------------------------- properties

nums = st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False).map(ex.Num)
leaves = st.one_of(nums, st.integers(0, D - 1).map(ex.Var), st.just(ex.Norm()))


def _extend(children):
    binop = st.builds(ex.BinOp, st.sampled_from("+-*/^"), children, children)
    cmp = st.builds(ex.Compare, st.sampled_from(ex.COMPARISONS), children, children)
    call1 = st.builds(lambda n, a: ex.Call(n, (a,)), st.sampled_from(["abs", "sqrt", "exp", "log", "step"]), children)
    call2 = st.builds(lambda n, a, b: ex.Call(n, (a, b)), st.sampled_from(["pow", "min", "max"]), children, children)
    cond = st.builds(ex.If, cmp, children, children)
    return st.one_of(st.builds(ex.Neg, children), binop, call1, call2, cond)


asts = st.recursive(leaves, _extend, max_leaves=12)


@given(asts)
def test_print_parse_round_trip(node):
    assert ex.parse(ex.to_source(node), D) == node


points = st.lists(st.floats(-3, 3, allow_nan=False), min_size=D, max_size=D)


@given(asts, points)
def test_compiled_point_matches_interpreter(node, x):
    x = np.asarray(x)
    try:
        want = ex.interpret(node, x)
    except DomainError:
        want = None
    f = ex.compile(node, D) if not ex.is_constant(node) or want is not None else None
    if f is None:
        return
    if want is None or not math.isfinite(want):
        with pytest.raises(DomainError):
            f(x)
    else:
        assert f(x) == want


smooth = st.recursive(
    st.one_of(st.floats(0.1, 3).map(ex.Num), st.integers(0, D - 1).map(ex.Var)),
    lambda c: st.one_of(st.builds(ex.BinOp, st.sampled_from("+-*"), c, c), st.builds(ex.Neg, c),
                        st.builds(lambda a: ex.Call("abs", (a,)), c)),
    max_leaves=8,
)


@given(smooth, st.lists(points, min_size=1, max_size=6))
def test_batch_matches_point_evaluation(node, pts):
    f = ex.compile(node, D)
    X = np.asarray(pts)
    batch = f(X)
    single = np.array([ex.interpret(node, x) for x in X])
    np.testing.assert_allclose(batch, single, rtol=1e-12, atol=1e-12)
