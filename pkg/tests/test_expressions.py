import numpy as np
import pytest

from fbsde_kit.cli import parse_expression
from fbsde_kit.errors import ExpressionError
from fbsde_kit.expressions import compile_expression


def ev(src, **env):
    return compile_expression(src).evaluate(env)


def test_number_and_constants():
    assert ev("2") == 2.0
    assert ev("2.5e-1") == 0.25
    assert ev("pi") == np.pi
    assert ev("e") == np.e


def test_precedence_and_left_associativity():
    assert ev("1 + 2 * 3") == 7.0
    assert ev("2 - 3 - 4") == -5.0
    assert ev("12 / 3 / 2") == 2.0
    assert ev("(1 + 2) * 3") == 9.0


def test_unary_signs():
    assert ev("-3 + 5") == 2.0
    assert ev("--2") == 2.0
    assert ev("+x", x=4.0) == 4.0


def test_unicode_operators():
    assert ev("2 × 3") == 6.0
    assert ev("6 ÷ 4") == 1.5


def test_functions():
    assert ev("exp(0)") == 1.0
    assert ev("tanh(0)") == 0.0
    assert ev("min(3, 1, 2)") == 1.0
    assert ev("max(3, 1, 2)") == 3.0
    np.testing.assert_allclose(ev("exp(x)", x=np.array([0.0, 1.0])), [1.0, np.e])


def test_variables_broadcast():
    out = ev("t + x * y1", t=0.5, x=np.array([1.0, 2.0]), y1=np.array([3.0, 4.0]))
    np.testing.assert_allclose(out, [3.5, 8.5])


@pytest.mark.parametrize(
    "src",
    ["foo", "1 +", "(1", "exp()", "exp(1, 2)", "min(1)", "1 $ 2", "x x"],
)
def test_syntax_errors(src):
    with pytest.raises(ExpressionError):
        compile_expression(src)


def test_error_position():
    with pytest.raises(ExpressionError) as exc:
        compile_expression("1 +\n  qq * 2")
    assert exc.value.line == 2
    assert exc.value.column == 3


def test_allowed_variable_restriction():
    with pytest.raises(ExpressionError) as exc:
        compile_expression("t + y1", allowed=["t"])
    assert "y1" in str(exc.value)
    compile_expression("t + y1", allowed=["t", "y1"])  # no raise


def test_zero_expression_is_zero_function():
    handle = parse_expression("0", n=1, d=1)
    x = np.linspace(-3, 3, 11)
    np.testing.assert_array_equal(handle(0.3, x), np.zeros_like(x))


def test_parsed_driver_bit_identical_to_hand_coded():
    handle = parse_expression("x - y1 - z11", n=1, d=1)
    rng = np.random.default_rng(0)
    t = 0.25
    x = rng.uniform(-5, 5, 10_000)
    y = rng.uniform(-5, 5, (10_000, 1))
    z = rng.uniform(-5, 5, (10_000, 1, 1))
    hand = (x - y[..., 0]) - z[..., 0, 0]
    np.testing.assert_array_equal(handle(t, x, y, z), hand)
