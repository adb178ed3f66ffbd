import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgk import kfun
from sgk.kfun import Kind, KLFunction, NotInvertible

from conftest import example_gain_closed, pl_functions


def assert_rel(a, b, rtol=1e-12):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    np.testing.assert_allclose(a, b, rtol=rtol, atol=rtol * max(1.0, float(np.max(np.abs(b)))))


# -- construction and evaluation --------------------------------------------

def test_identity_extrapolates_with_tail():
    f = kfun.from_points([0.0, 1.0], [0.0, 1.0], 1.0)
    assert f(2.0) == 2.0
    assert f.kind is Kind.KINF


def test_zero_evaluates_to_zero():
    z = kfun.zero()
    assert z(7.0) == 0.0
    assert z.kind is Kind.ZERO


def test_bounded_function_is_class_k():
    f = kfun.from_points([0.0, 1.0], [0.0, 1.0], 0.0)
    assert f.kind is Kind.K
    assert f(5.0) == 1.0


def test_sampled_example_gain_at_half():
    interp = kfun.from_callable(example_gain_closed, mode="interp")
    assert interp(0.5) == pytest.approx(0.25, abs=1e-15)
    upper = kfun.from_callable(example_gain_closed)
    assert 0.25 <= upper(0.5) <= 0.25 + 1e-4


def test_upper_sampling_dominates_closed_form():
    f = kfun.from_callable(example_gain_closed)
    s = np.concatenate([np.linspace(0, 3, 30001), np.geomspace(2.0 ** -20, 1, 2000)])
    assert np.all(f(s) >= example_gain_closed(s) - 1e-12)


def test_rejects_decreasing_points():
    with pytest.raises(ValueError):
        kfun.from_points([0.0, 1.0, 2.0], [0.0, 1.0, 0.5], 1.0)


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        kfun.identity()(-1.0)


@given(pl_functions())
def test_json_roundtrip(f):
    g = kfun.PLFunction.from_dict(json.loads(json.dumps(f.to_dict())))
    assert g.equals(f)


def test_json_layout():
    d = kfun.linear(2.0).to_dict()
    assert d == {"kind": "Kinf", "breakpoints": [[0.0, 0.0]], "tail_slope": 2.0}


# -- compose -----------------------------------------------------------------

def test_compose_identity_left():
    f = kfun.from_callable(example_gain_closed)
    assert kfun.compose(kfun.identity(), f).equals(f)


def test_compose_halves():
    assert kfun.compose(kfun.linear(0.5), kfun.linear(0.5)).equals(kfun.linear(0.25))


def test_compose_zero_absorbs():
    f = kfun.linear(3.0)
    assert kfun.compose(kfun.zero(), f).is_zero
    assert kfun.compose(f, kfun.zero()).is_zero


@settings(max_examples=200)
@given(pl_functions(), pl_functions(), st.lists(st.floats(0, 50), min_size=20, max_size=20))
def test_compose_matches_pointwise(f, g, xs):
    xs = np.asarray(xs)
    assert_rel(kfun.compose(f, g)(xs), f(g(xs)))


@given(pl_functions(), pl_functions(unbounded=False))
def test_compose_with_bounded_inner(f, g):
    xs = np.linspace(0, 40, 400)
    assert_rel(kfun.compose(f, g)(xs), f(g(xs)))


# -- inverse -----------------------------------------------------------------

def test_inverse_identity():
    assert kfun.inverse(kfun.identity()).equals(kfun.identity())


def test_inverse_double():
    assert kfun.inverse(kfun.linear(2.0)).equals(kfun.linear(0.5))


def test_inverse_bounded_raises():
    with pytest.raises(NotInvertible):
        kfun.inverse(kfun.from_points([0.0, 1.0], [0.0, 1.0], 0.0))


def test_inverse_zero_raises():
    with pytest.raises(NotInvertible):
        kfun.inverse(kfun.zero())


@given(pl_functions())
def test_inverse_undoes_on_breakpoints(f):
    h = kfun.compose(kfun.inverse(f), f)
    assert_rel(h(f.s), f.s)
    ys = np.linspace(0, 30, 300)
    assert_rel(f(kfun.inverse(f)(ys)), ys)


# -- max / min / add / scale -------------------------------------------------

def test_max_with_zero():
    f = kfun.from_callable(example_gain_closed)
    assert kfun.pointwise_max(f, kfun.zero()).equals(f)


def test_max_at_quarter():
    bump = kfun.from_callable(lambda s: s - s * s, grid=np.linspace(0, 0.5, 33), mode="interp")
    m = kfun.pointwise_max(bump, kfun.linear(0.5))
    assert m(0.25) == pytest.approx(0.1875, abs=1e-15)


def test_add_linear():
    assert kfun.pointwise_add(kfun.linear(1.0), kfun.linear(2.0)).equals(kfun.linear(3.0))


@settings(max_examples=200)
@given(pl_functions(), pl_functions())
def test_max_min_add_match_pointwise(f, g):
    xs = np.concatenate([np.linspace(0, 60, 600), f.s, g.s])
    assert_rel(kfun.pointwise_max(f, g)(xs), np.maximum(f(xs), g(xs)))
    assert_rel(kfun.pointwise_min(f, g)(xs), np.minimum(f(xs), g(xs)))
    assert_rel(kfun.pointwise_add(f, g)(xs), f(xs) + g(xs))


@given(pl_functions(), st.floats(0.01, 10))
def test_scale_matches_pointwise(f, c):
    xs = np.linspace(0, 20, 100)
    assert_rel(kfun.scale(f, c)(xs), c * f(xs))


def test_max_far_crossing_tail():
    # crossing beyond every breakpoint must be inserted
    f = kfun.from_points([0.0, 1.0], [0.0, 3.0], 0.5)
    g = kfun.linear(1.0)
    m = kfun.pointwise_max(f, g)
    xs = np.linspace(0, 20, 2001)
    assert_rel(m(xs), np.maximum(f(xs), g(xs)))
    assert m.tail_slope == 1.0


# -- iterate -----------------------------------------------------------------

def test_iterate_identity():
    assert kfun.iterate(kfun.identity(), 5).equals(kfun.identity())


def test_iterate_half():
    assert kfun.iterate(kfun.linear(0.5), 3).equals(kfun.linear(0.125))


def test_iterate_zero():
    assert kfun.iterate(kfun.zero(), 2).is_zero


@given(pl_functions(max_points=4), st.integers(1, 4))
def test_iterate_matches_repeated_evaluation(f, k):
    xs = np.linspace(0, 5, 50)
    y = xs
    for _ in range(k):
        y = f(y)
    assert_rel(kfun.iterate(f, k)(xs), y, rtol=1e-11)


# -- below_identity ----------------------------------------------------------

def test_below_identity_half():
    res = kfun.below_identity(kfun.linear(0.5), s_max=10)
    assert res.verdict
    assert res.worst_margin == pytest.approx(0.5)


def test_identity_not_below_identity():
    assert not kfun.below_identity(kfun.identity(), tol=1e-12).verdict


def test_example_gain_below_identity():
    f = kfun.from_callable(example_gain_closed)
    assert kfun.below_identity(f, s_max=10, tol=1e-9).verdict


def test_zero_below_identity():
    res = kfun.below_identity(kfun.zero())
    assert res.verdict and res.worst_margin == 1.0


def test_below_identity_catches_breakpoint_between_grid_points():
    # narrow excursion above the identity near s = 5, far from grid points
    f = kfun.from_points([0.0, 4.999, 5.0, 5.02], [0.0, 2.4995, 5.01, 5.011], 0.5)
    assert not kfun.below_identity(f, s_max=10, grid=16).verdict


def test_tail_slope_matters_beyond_range():
    f = kfun.from_points([0.0, 10.0], [0.0, 5.0], 2.0)
    assert not kfun.below_identity(f, s_max=10).verdict


@given(pl_functions(), st.floats(0, 0.5), st.floats(0, 1))
def test_below_identity_monotone_in_tol(f, t, frac):
    if kfun.below_identity(f, tol=t).verdict:
        assert kfun.below_identity(f, tol=t * frac).verdict


# -- KL bounds -----------------------------------------------------------------

def test_kl_at_zero():
    klf = KLFunction(kfun.linear(0.5), kfun.identity(), kfun.identity())
    assert kfun.kl_bound(klf, 0.0, 7) == 0.0


def test_kl_halving():
    klf = KLFunction(kfun.linear(0.5), kfun.identity(), kfun.identity())
    assert kfun.kl_bound(klf, 1.0, 3) == pytest.approx(0.125)


def test_kl_k0_is_identity():
    klf = KLFunction(kfun.linear(0.5), kfun.identity(), kfun.identity())
    assert kfun.kl_bound(klf, 2.5, 0) == 2.5


def test_kl_sequence_matches_pointwise():
    klf = KLFunction(kfun.from_callable(example_gain_closed), kfun.linear(0.5), kfun.linear(2.0))
    seq = klf.sequence(np.array([0.3, 1.0]), 5)
    for k in range(6):
        np.testing.assert_allclose(seq[k], [kfun.kl_bound(klf, 0.3, k), kfun.kl_bound(klf, 1.0, k)])


@settings(max_examples=50)
@given(pl_functions(), pl_functions(), st.floats(0.01, 10))
def test_kl_nonincreasing_and_vanishing(lower, upper, s):
    alpha = kfun.from_callable(example_gain_closed)
    assert kfun.below_identity(alpha).verdict
    contraction = kfun.scale(kfun.linear(1.0), 0.9)
    klf = KLFunction(contraction, lower, upper)
    seq = klf.sequence(s, 200)
    assert np.all(np.diff(seq) <= 1e-12 * seq[0])
    assert seq[-1] < 1e-6 * max(1.0, seq[0])


def test_kl_nondecreasing_in_s():
    klf = KLFunction(kfun.from_callable(example_gain_closed), kfun.identity(), kfun.identity())
    s = np.linspace(0, 5, 200)
    for k in (0, 1, 10, 100):
        assert np.all(np.diff(klf(s, k)) >= 0)
