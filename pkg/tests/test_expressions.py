import numpy as np
import pytest
from hypothesis import given, strategies as st

from muskat.errors import ScenarioError
from muskat.expressions import compile_expr, constant


def test_caret_is_power_with_python_precedence():
    e = compile_expr("(x-0.3)^2 + (y)^2")
    assert e(0, 0.5, 2.0) == pytest.approx(0.04 + 4.0)
    assert compile_expr("-2^2")(0, 0, 0) == -4
    assert compile_expr("2^3^2")(0, 0, 0) == 2 ** 9


def test_step_is_piecewise_and_vectorised():
    e = compile_expr("1 + step(x - 0.5)")
    np.testing.assert_array_equal(e(0, np.array([0.2, 0.5, 0.9]), 0), [1, 2, 2])


def test_dependencies():
    assert compile_expr("sin(pi*x)*t").depends_on_t
    assert not compile_expr("x + y").depends_on_t
    assert compile_expr("2*pi").is_constant
    assert constant(1.5)(0, 0, 0) == 1.5


@pytest.mark.parametrize("src,frag,col", [
    ("foo(x)", "unknown function", 1),
    ("1 + z", "unknown variable", 5),
    ("x.real", "not allowed", 1),
    ("(x", "syntax error", None),
    ("'a'", "numeric", 1),
    ("0 < x < 1", "chained", 1),
])
def test_errors_carry_position(src, frag, col):
    with pytest.raises(ScenarioError) as exc:
        compile_expr(src, line=3, key="rho0")
    assert frag in str(exc.value)
    assert exc.value.line == 3
    if col is not None:
        assert exc.value.column == col


def test_error_column_accounts_for_caret_rewrite():
    with pytest.raises(ScenarioError) as exc:
        compile_expr("x^2 + foo(y)", line=1, col_offset=10)
    assert exc.value.column == 10 + 7


def test_builtins_not_reachable():
    with pytest.raises(ScenarioError):
        compile_expr("__import__('os')")


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_matches_numpy(x, y):
    e = compile_expr("exp(-x^2) * cos(y) + max(x, y, 0) - abs(x*y)")
    ref = np.exp(-x ** 2) * np.cos(y) + max(x, y, 0) - abs(x * y)
    assert e(0.0, x, y) == pytest.approx(ref, rel=1e-14, abs=1e-14)
