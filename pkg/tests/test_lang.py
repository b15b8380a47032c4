import random

import pytest
from hypothesis import given, strategies as st

from genprog import random_expression
from whilerisc.lang import (
    BinOp,
    Const,
    EvalError,
    Var,
    eval_exp,
    exp_depth,
    exp_vars,
    wrap,
)

V = Var("v")


def test_direct_arithmetic():
    mem = {"v": 3}
    assert eval_exp(mem, BinOp("+", V, BinOp("+", V, Const(1)))) == 7


def test_constant_case():
    assert eval_exp({}, Const(42)) == 42


def test_equality_truthiness():
    mem = {"a": 5, "b": 5}
    assert eval_exp(mem, BinOp("==", Var("a"), Var("b"))) == 1
    assert eval_exp({"a": 5, "b": 6}, BinOp("==", Var("a"), Var("b"))) == 0


def test_comparison_and_logic_return_bits():
    mem = {"a": -2, "b": 3}
    assert eval_exp(mem, BinOp("<", Var("a"), Var("b"))) == 1
    assert eval_exp(mem, BinOp("!=", Var("a"), Var("b"))) == 1
    assert eval_exp(mem, BinOp("&&", Var("a"), Var("b"))) == 1
    assert eval_exp(mem, BinOp("&&", Var("a"), Const(0))) == 0
    assert eval_exp(mem, BinOp("||", Const(0), Const(0))) == 0


def test_arithmetic_wraps_at_64_bits():
    big = (1 << 63) - 1
    assert eval_exp({}, BinOp("+", Const(big), Const(1))) == -(1 << 63)
    assert wrap(1 << 64) == 0
    assert eval_exp({}, BinOp("*", Const(1 << 62), Const(4))) == 0


def test_unknown_variable_is_an_error():
    with pytest.raises(EvalError):
        eval_exp({"x": 1}, Var("y"))


def test_exp_vars():
    assert exp_vars(Const(1)) == frozenset()
    assert exp_vars(BinOp("+", V, BinOp("+", V, Const(1)))) == {"v"}
    assert exp_vars(BinOp("+", Var("x"), BinOp("*", Var("y"), Var("x")))) == {"x", "y"}


def test_exp_depth():
    assert exp_depth(Const(3)) == 1
    assert exp_depth(BinOp("+", V, BinOp("+", V, Const(1)))) == 3


@given(st.integers(), st.integers())
def test_wrap_is_a_ring_homomorphism_on_addition(a, b):
    assert wrap(a + b) == wrap(wrap(a) + wrap(b))


@given(st.data())
def test_eval_depends_only_on_mentioned_variables(data):
    rng = random.Random(data.draw(st.integers(0, 10_000)))
    e = random_expression(rng, ["p", "q", "r"], rng.randint(1, 4))
    mem = {x: rng.randint(-8, 8) for x in ("p", "q", "r", "zz")}
    before = eval_exp(mem, e)
    assert eval_exp(mem, e) == before  # purity
    mutated = dict(mem)
    for x in ("p", "q", "r", "zz"):
        if x not in exp_vars(e):
            mutated[x] = data.draw(st.integers(-100, 100))
    assert eval_exp(mutated, e) == before
