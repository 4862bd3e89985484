import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdisc.potential import (
    BinOp,
    Call,
    Const,
    Neg,
    Num,
    PotentialError,
    PotentialEvaluationError,
    PotentialSpec,
    PotentialSyntaxError,
    Var,
    eval_potential,
    parse_potential,
    to_source,
)


def ev(src, x, dim=1):
    return float(PotentialSpec.from_source(src, dim)(np.atleast_2d(x))[0])


def test_single_power_node():
    assert parse_potential("x1^2", 1) == BinOp("^", Var(1), Num(2.0))


def test_gaussian_expression_at_origin():
    assert ev("-2*exp(-x1^2-x2^2)", [0.0, 0.0], 2) == -2.0


def test_unbalanced_paren_offset():
    with pytest.raises(PotentialSyntaxError) as err:
        parse_potential("sin(", 1)
    assert err.value.offset == 4


@pytest.mark.parametrize(
    "src, value",
    [("2+3*4", 14.0), ("2^3^2", 512.0), ("-2^2", -4.0), ("(-2)^2", 4.0), ("2*-3", -6.0), ("8/4/2", 1.0), ("7-2-1", 4.0)],
)
def test_precedence(src, value):
    assert ev(src, [0.0]) == value


def test_functions_and_constants():
    x = 0.3
    got = ev("sin(x1)+cos(x1)+exp(x1)+sinh(x1)+cosh(x1)+sqrt(x1)+asinh(x1)+abs(-x1)+pi+e", [x])
    want = (math.sin(x) + math.cos(x) + math.exp(x) + math.sinh(x) + math.cosh(x) + math.sqrt(x)
            + math.asinh(x) + x + math.pi + math.e)
    assert got == pytest.approx(want, rel=1e-15)


@pytest.mark.parametrize("src", ["x2", "foo(x1)", "x1 x1", "sin x1", "2**3", "", "x4", "sin(x1,x1)", "1.2.3"])
def test_rejected_sources(src):
    with pytest.raises(PotentialError):
        PotentialSpec.from_source(src, 1)


def test_domain_errors_surface():
    with pytest.raises(PotentialEvaluationError):
        ev("sqrt(x1)", [-1.0])
    with pytest.raises(PotentialEvaluationError):
        ev("1/x1", [0.0])
    with pytest.raises(PotentialEvaluationError):
        ev("x1^0.5", [-1.0])
    with pytest.raises(PotentialEvaluationError):
        ev("exp(x1)", [1000.0])


def test_integer_powers_of_negative_bases():
    assert ev("x1^3", [-2.0]) == -8.0
    assert ev("x1^-2", [-2.0]) == 0.25
    assert ev("x1^2.5", [4.0]) == pytest.approx(32.0, rel=1e-15)


def test_spec_examples_eval():
    assert eval_potential(PotentialSpec.named("harmonic", 1, c=(1.0,)), [1.5]) == 2.25
    assert eval_potential(PotentialSpec.named("gaussian-well", 1, A=2.0, sigma=1.0), [0.0]) == -2.0
    assert eval_potential(PotentialSpec.from_source("x1^2+4*x2^2", 2), [1.0, 1.0]) == 5.0


def test_eval_is_bitwise_deterministic():
    spec = PotentialSpec.from_source("sin(x1)*exp(-x2^2)+x3^3/7", 3)
    x = np.random.default_rng(3).normal(size=(50, 3))
    assert np.array_equal(spec(x), spec(x.copy()))


def test_spec_validation():
    with pytest.raises(PotentialError):
        PotentialSpec.from_source("x1+x2", 1)
    with pytest.raises(PotentialError):
        PotentialSpec(dim=4, expr=Num(1.0))
    with pytest.raises(PotentialError):
        PotentialSpec.named("harmonic", 2, c=(1.0,))
    with pytest.raises(PotentialError):
        PotentialSpec.from_source("x1", 1, decay_exponent_hint=1.5)
    assert PotentialSpec.from_source("x1", 1, decay_exponent_hint=0.5).decay_exponent_hint == 0.5


@pytest.mark.parametrize(
    "family, params, dim",
    [
        ("harmonic", {"c": (1.0, 4.0)}, 2),
        ("gaussian-well", {"A": 3.0, "sigma": 1.3}, 2),
        ("gaussian-well", {"A": 2.0, "sigma": 1.0}, 3),
        ("double-well", {"a": 0.7, "b": 1.2}, 2),
    ],
)
def test_family_matches_expression(family, params, dim):
    spec = PotentialSpec.named(family, dim, **params)
    expr = PotentialSpec.from_source(spec.source(), dim)
    x = np.random.default_rng(1).uniform(-2, 2, size=(100, dim))
    a, b = spec(x), expr(x)
    assert np.all(np.abs(a - b) <= 1e-15 * np.maximum(np.abs(a), 1.0))


def test_delta_family_has_no_expression():
    spec = PotentialSpec.named("delta", 2, amplitude=-3.0, site=[0, 0])
    assert spec.is_delta
    with pytest.raises(PotentialError):
        spec.source()


# ---------------------------------------------------------------- round trip

FUNCS = ["sin", "cos", "exp", "sinh", "cosh", "sqrt", "asinh", "abs"]

leaves = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(Num),
    st.integers(1, 3).map(Var),
    st.sampled_from(["pi", "e"]).map(Const),
)


def extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda t: BinOp(*t)),
        st.tuples(st.sampled_from(FUNCS), children).map(lambda t: Call(*t)),
    )


asts = st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=1000, deadline=None)
@given(asts)
def test_print_parse_round_trip(ast):
    assert parse_potential(to_source(ast), 3) == ast
