import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iss_smallgain.kfun import (
    Add,
    Compose,
    DomainError,
    ExprSyntaxError,
    FnClass,
    GridSpec,
    Identity,
    Inverse,
    KFunError,
    Linear,
    Max,
    PiecewiseLinear,
    Power,
    ValidationError,
    Zero,
    combine,
    compose,
    format_fn,
    id_plus,
    inverse,
    less_than_id,
    parse_fn,
    pl_from_samples,
    validate,
)

GRID = GridSpec().values()


def test_eval_examples():
    assert Linear(0.9)(1.0) == pytest.approx(0.9, abs=1e-15)
    assert Compose(Add((Identity(), Linear(0.1))), Linear(0.9))(1.0) == pytest.approx(0.99, rel=1e-14)
    assert Inverse(Linear(0.9))(0.9) == pytest.approx(1.0, rel=1e-12)


def test_eval_rejects_negative():
    with pytest.raises(DomainError):
        Linear(1.0)(-1.0)


def test_compose_laws():
    f = Linear(0.9)
    assert compose(Identity(), f) == f
    assert compose(Linear(1.1), Linear(0.9))(2.0) == pytest.approx(1.98, rel=1e-14)
    assert isinstance(compose(Zero(), f), Zero)


def test_combine_examples():
    assert combine("sum", [Linear(0.9), Linear(0.9)])(1.0) == pytest.approx(1.8)
    assert combine("max", [Linear(0.9), Zero()])(2.0) == pytest.approx(1.8)
    # 0.5 * 0.5 and 0.5**2 tie
    assert combine("max", [Linear(0.5), Power(1.0, 2.0)])(0.5) == pytest.approx(0.25, rel=1e-15)


def test_less_than_id_examples():
    cycle3 = Linear(1.1)
    for f in [Linear(0.9), Linear(1.1), Linear(0.9), Linear(1.1), Linear(0.9)]:
        cycle3 = compose(cycle3, f)
    assert cycle3(1.0) == pytest.approx(0.970299, abs=1e-12)
    assert less_than_id(cycle3)[0]
    assert less_than_id(compose(compose(Linear(1.1), Linear(0.9)), compose(Linear(1.1), Linear(0.9))))[0]
    holds, witness = less_than_id(Linear(1.0))
    assert not holds and witness == pytest.approx(GRID[0])


def test_validate_tags():
    assert validate(Linear(2.0)) == FnClass.KINF
    sat = PiecewiseLinear(((1.0, 1.0),), 0.0)
    with pytest.raises(ValidationError):
        validate(sat, declared=FnClass.KINF)
    with pytest.raises(ValidationError):
        validate(Linear(1.0), declared=FnClass.ZERO)


def test_constructor_errors():
    with pytest.raises(KFunError):
        Linear(-1.0)
    with pytest.raises(KFunError):
        PiecewiseLinear(((1.0, 2.0), (0.5, 3.0)), 1.0)


def test_closed_inverses():
    assert inverse(Linear(4.0)) == Linear(0.25)
    p = inverse(Power(2.0, 3.0))
    assert isinstance(p, Power)
    assert p(Power(2.0, 3.0)(1.7)) == pytest.approx(1.7, rel=1e-12)
    pl = PiecewiseLinear(((1.0, 2.0), (2.0, 3.0)), 0.5)
    assert inverse(pl)(pl(5.0)) == pytest.approx(5.0, rel=1e-12)


def test_numeric_inverse_round_trip():
    f = Add((Linear(0.5), Power(0.1, 2.0)))
    g = inverse(f)
    y = f._eval(GRID)
    assert np.all(np.abs(g._eval(y) - GRID) <= 1e-9 * np.maximum(1.0, GRID))


# ---------------------------------------------------------------- grammar


@pytest.mark.parametrize(
    "text",
    [
        "0",
        "r",
        "0.9*r",
        "2*r^0.5",
        "pl[1:2, 3:4; 0.5]",
        "r + 0.1*r",
        "max(0.9*r, 0.5*r^2)",
        "(r + 0.1*r) o 0.9*r",
        "inv(0.95*r) o 0.9*r",
    ],
)
def test_parse_format_round_trip(text):
    f = parse_fn(text)
    assert parse_fn(format_fn(f)) == f


def test_parse_error_position():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_fn("0.9*x")
    assert exc.value.pos == 4
    assert "r" in exc.value.expected


# ---------------------------------------------------------------- properties

kinf = st.one_of(
    st.floats(0.05, 5.0).map(Linear),
    st.tuples(st.floats(0.05, 3.0), st.floats(0.3, 3.0)).map(lambda t: Power(*t)),
    st.lists(st.floats(0.1, 3.0), min_size=1, max_size=4).map(
        lambda sl: pl_from_samples(np.cumsum(np.full(len(sl), 1.0)), np.cumsum(sl))
    ),
)


def _tree(depth=2):
    if depth == 0:
        return kinf
    sub = _tree(depth - 1)
    return st.one_of(
        kinf,
        st.tuples(sub, sub).map(lambda t: Add(t)),
        st.tuples(sub, sub).map(lambda t: Max(t)),
        st.tuples(sub, sub).map(lambda t: Compose(*t)),
    )


@settings(max_examples=60, deadline=None)
@given(_tree())
def test_monotone_on_grid(f):
    v = f._eval(GRID)
    assert np.all(np.diff(v) > 0)


@settings(max_examples=60, deadline=None)
@given(_tree())
def test_inverse_round_trip_property(f):
    g = inverse(f)
    r = GRID[(GRID > 1e-2) & (GRID < 1e2)]
    y = f._eval(r)
    back = f._eval(g._eval(r))
    assert np.all(np.abs(back - r) <= 1e-9 * np.maximum(1.0, r))
    assert np.all(np.abs(g._eval(y) - r) <= 1e-8 * np.maximum(1.0, r))


@settings(max_examples=60, deadline=None)
@given(_tree(1), _tree(1), _tree(1))
def test_composition_associative(f, g, h):
    a = compose(f, compose(g, h))._eval(GRID)
    b = compose(compose(f, g), h)._eval(GRID)
    assert np.allclose(a, b, rtol=1e-12, atol=0)


@settings(max_examples=100, deadline=None)
@given(kinf, kinf, kinf)
def test_weak_triangle_inequality(a, b, eta):
    lhs = a._eval(GRID) + b._eval(GRID)
    rhs = np.maximum(compose(id_plus(eta), a)._eval(GRID), compose(id_plus(inverse(eta)), b)._eval(GRID))
    assert np.all(lhs <= rhs * (1 + 1e-12))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=8))
def test_max_sum_sandwich(xs):
    x = np.array(xs)
    assert x.max() <= x.sum() <= len(x) * x.max() * (1 + 1e-15)


def test_power_overflow_is_finite_or_inf():
    with np.errstate(over="ignore"):
        v = Power(1.0, 3.0)._eval(np.array([1e200]))
    assert math.isinf(v[0]) or v[0] > 0
