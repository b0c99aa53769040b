import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pathreg.detcalc import (EpsSchedule, IntegralResult, Mode, backward_integral_det, covariation_det,
                             forward_integral_det, forward_integral_measure, gamma_strong_existence_check,
                             quadratic_variation_det, regularized_measure_integral)
from pathreg.pathgrid import GridPath, SignedMeasure1D

N = 4096
SCHED = EpsSchedule.from_multiples(1.0 / N, (8, 4, 2, 1))


def smooth(f, a=0.0, b=1.0, n=N):
    return GridPath.from_function(f, a, b, n)


values = arrays(float, st.integers(20, 80), elements=st.floats(-10, 10, allow_nan=False))


@given(values)
def test_closed_integral_of_one_telescopes_to_terminal_value(vals):
    # every approximant equals f(b): the closed-interval mass at a cancels the left-edge average
    f = GridPath(0.0, 1.0, vals)
    one = f.with_values(np.ones_like(vals))
    res = forward_integral_det(one, f, Mode.CLOSED, EpsSchedule.from_multiples(f.dt, (4, 2, 1)))
    for _, v in res.per_eps:
        assert v == pytest.approx(vals[-1], abs=1e-9 * (1 + np.abs(vals).max()))


@given(values, st.floats(-3, 3), st.floats(-3, 3))
def test_forward_integral_is_linear_in_integrand(vals, a, b):
    f = GridPath(0.0, 1.0, vals)
    g1, g2 = f.with_values(np.sin(vals)), f.with_values(np.cos(vals))
    sched = EpsSchedule.from_multiples(f.dt, (2, 1))
    lhs = forward_integral_det(g1 * a + g2 * b, f, sched=sched).per_eps
    r1 = forward_integral_det(g1, f, sched=sched).per_eps
    r2 = forward_integral_det(g2, f, sched=sched).per_eps
    for (_, v), (_, x), (_, y) in zip(lhs, r1, r2):
        assert v == pytest.approx(a * x + b * y, abs=1e-8 * (1 + abs(a * x) + abs(b * y)))


@pytest.mark.parametrize("mode, expected", [
    (Mode.HALF_OPEN, (math.sin(1.0) ** 2 - 0.0) / 2),
    (Mode.CLOSED, math.sin(1.0) ** 2 / 2),
])
def test_forward_integral_of_smooth_path_is_chain_rule(mode, expected):
    f = smooth(np.sin)
    res = forward_integral_det(f, f, mode, SCHED)
    assert res.converged
    assert res.value == pytest.approx(expected, abs=5e-3)


def test_closed_mode_sees_jump_from_zero():
    f = smooth(lambda t: 2.0 + t)
    one = f.with_values(np.ones(N + 1))
    half = forward_integral_det(one, f, Mode.HALF_OPEN, SCHED).value
    closed = forward_integral_det(one, f, Mode.CLOSED, SCHED).value
    assert half == pytest.approx(1.0, abs=1e-2)
    assert closed == pytest.approx(3.0, abs=1e-12)


def test_backward_agrees_with_forward_for_smooth_paths():
    f = smooth(lambda t: np.exp(t) - 1.0)
    g = smooth(np.cos)
    fw = forward_integral_det(g, f, sched=SCHED).value
    bw = backward_integral_det(g, f, sched=SCHED).value
    exact = 0.5 * (math.e * (math.cos(1) + math.sin(1)) - 1)  # int_0^1 cos(t) e^t dt
    assert fw == pytest.approx(exact, abs=5e-3)
    assert bw == pytest.approx(exact, abs=5e-3)


def test_backward_quotient_sees_jump_from_zero_at_left_end():
    f = smooth(lambda t: np.exp(t))
    g = smooth(np.cos)
    fw = forward_integral_det(g, f, sched=SCHED).value
    bw = backward_integral_det(g, f, sched=SCHED).value
    assert bw - fw == pytest.approx(g.values[0] * f.values[0], abs=5e-3)


def test_quadratic_variation_of_smooth_path_vanishes():
    qv = quadratic_variation_det(smooth(np.sin), SCHED)
    assert abs(qv.values[-1]) < 1e-3


def test_quadratic_variation_of_random_walk_sample_is_time():
    rng = np.random.default_rng(3)
    n = 2 ** 16
    w = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n) / math.sqrt(n))])
    qv, res = quadratic_variation_det(GridPath(0.0, 1.0, w), EpsSchedule.from_multiples(1 / n, (4, 2, 1)),
                                      full=True)
    assert qv.values[-1] == pytest.approx(1.0, abs=0.05)
    assert qv.values[0] == 0.0


def test_covariation_needs_zero_in_domain():
    f = smooth(np.sin, 1.0, 2.0)
    with pytest.raises(ValueError):
        covariation_det(f, f, EpsSchedule.from_multiples(f.dt, (1,)))


def test_covariation_anchored_at_zero():
    rng = np.random.default_rng(5)
    w = np.cumsum(rng.standard_normal(2049)) / math.sqrt(1024)
    f = GridPath(-1.0, 1.0, w)
    c = covariation_det(f, f, EpsSchedule.from_multiples(f.dt, (1,)))
    assert c(0.0) == 0.0
    assert c(-1.0) < 0 < c(1.0)


def test_interior_atom_gives_derivative():
    f = smooth(lambda t: t ** 3)
    mu = SignedMeasure1D(0.0, 1.0, ((0.5, 2.0),))
    res = forward_integral_measure(mu, f, SCHED)
    assert res.value == pytest.approx(2 * 3 * 0.25, rel=5e-3)


def test_atom_at_right_end_contributes_nothing():
    f = smooth(lambda t: t ** 3)
    mu = SignedMeasure1D(0.0, 1.0, ((1.0, 5.0),))
    assert forward_integral_measure(mu, f, SCHED).value == 0.0


def test_atom_at_left_end_is_reported():
    f = smooth(lambda t: 1.0 + t)
    res = forward_integral_measure(SignedMeasure1D(0.0, 1.0, ((0.0, 1.0),)), f, SCHED)
    assert res.notes["atom_at_a"] == pytest.approx(1.0)


def test_density_integral_against_smooth_path():
    f = smooth(lambda t: t ** 2)
    mu = SignedMeasure1D(0.0, 1.0, (), np.ones(N + 1))
    # int_0^1 2t dt, with the eps-tail at b seeing the frozen extension
    assert forward_integral_measure(mu, f, SCHED).value == pytest.approx(1.0, abs=5e-3)
    assert regularized_measure_integral(mu, f, 1) == pytest.approx(1.0, abs=5e-3)


def test_measure_domain_must_match():
    f = smooth(np.sin)
    with pytest.raises(ValueError):
        forward_integral_measure(SignedMeasure1D(0.0, 2.0), f, SCHED)


@pytest.mark.parametrize("eps", [(), (1.0, 2.0), (0.5, 0.5), (-1.0,)])
def test_schedule_validation(eps):
    with pytest.raises(ValueError):
        EpsSchedule(eps)


def test_schedule_must_be_multiple_of_grid_step():
    with pytest.raises(ValueError):
        EpsSchedule((0.15,)).steps(0.1)


def test_default_schedule_is_dyadic():
    s = EpsSchedule.default(smooth(np.sin, n=1024))
    assert s.steps(1 / 1024) == [128, 64, 32, 16, 8, 4, 2, 1]


def test_unconverged_flag_and_text_round_trip():
    rng = np.random.default_rng(0)
    f = GridPath(0.0, 1.0, np.cumsum(rng.standard_normal(1025)))
    res = forward_integral_det(f, f, sched=EpsSchedule.from_multiples(f.dt, (4, 2, 1)))
    assert not res.converged
    back = IntegralResult.from_text(res.to_text())
    assert back.value == res.value and back.per_eps == res.per_eps


def test_strong_existence_for_smooth_family():
    eta = GridPath.from_function(lambda x: np.sin(3 * x), -1.0, 0.0, 4096)
    G = lambda t, g: SignedMeasure1D(-1.0, 0.0, (), np.ones(g.values.size))
    rep = gamma_strong_existence_check(G, eta, n_times=4, m=4)
    assert rep.passed
    assert np.all(np.isfinite(rep.envelope))
    # limit at t: int_{-t}^0 d^- eta = eta(0) - eta(-t)
    np.testing.assert_allclose(rep.limit_values, -np.sin(-3 * rep.times), atol=2e-2)
