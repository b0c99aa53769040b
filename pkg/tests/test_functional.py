import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pathreg import functional as fn
from pathreg.detcalc import EpsSchedule
from pathreg.kolmogorov import cylindrical_registry
from pathreg.pathgrid import CadPath, GridPath

T = 1.0


def path(f, m=512):
    return GridPath.from_function(f, -T, 0.0, m)


ETA = path(lambda x: np.sin(2 * x) + 0.3)


@pytest.mark.parametrize("U, expected", [
    (fn.present_square(T), ETA.values[-1] ** 2),
    (fn.present_value(T), ETA.values[-1]),
    (fn.path_integral(T), (math.cos(-2) - 1) / 2 + 0.3),
    (fn.sup_norm(T), np.max(np.abs(ETA.values))),
    (fn.constant(T, 2.5), 2.5),
])
def test_values(U, expected):
    assert U(0.0, ETA) == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize("name", ["present_square", "present_value", "path_integral"])
def test_vertical_supplier_matches_jump_difference(name):
    U = getattr(fn, name)(T)
    W = ETA.values[None, :]
    assert U.d_vertical(0.0, W)[0] == pytest.approx(fn.fd_vertical(U, 0.0, ETA), rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("U", [fn.path_integral(T), fn.path_integral_solution(T),
                               cylindrical_registry(T)["product"].as_path_functional(),
                               cylindrical_registry(T)["quad4"].as_path_functional()])
@pytest.mark.parametrize("t", [0.0, 0.5])
def test_directional_derivative_matches_finite_difference(U, t):
    zeta = np.cos(3 * ETA.times) * (ETA.times + 0.5)
    zeta[-1] = 0.0  # continuous direction vanishing at 0
    assert fn.analytic_directional(U, t, ETA, zeta) == pytest.approx(
        fn.fd_directional(U, t, ETA, zeta), rel=1e-4, abs=1e-7)


def test_jump_extension():
    U = fn.present_square(T)
    assert U(0.0, CadPath(ETA, 0.5)) == pytest.approx((ETA.values[-1] + 0.5) ** 2)


def test_missing_supplier_is_reported():
    with pytest.raises(fn.MissingSupplier):
        fn.sup_norm(T).perp_measure(0.0, ETA)
    with pytest.raises(fn.MissingSupplier):
        fn.operator_L(fn.abs_integral(T), 0.5, ETA)


def test_combination():
    U = fn.present_square(T) + 2.0 * fn.present_value(T)
    x = ETA.values[-1]
    assert U(0.0, ETA) == pytest.approx(x ** 2 + 2 * x)
    assert U.d_vertical(0.0, ETA.values[None, :])[0] == pytest.approx(2 * x + 2)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_operator_annihilates_present_square_solution(t):
    assert fn.operator_L(fn.present_square_solution(T), t, ETA) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_operator_annihilates_path_integral_solution(t):
    eta = path(lambda x: np.sin(2 * x) + 0.3, 4096)
    terms = fn.operator_L_terms(fn.path_integral_solution(T), t, eta)
    # time term eta(-t) - eta(0) cancels the perpendicular term eta(0) - eta(-t)
    assert terms.time_term == pytest.approx(eta(-t) - eta(0.0), abs=1e-3)
    assert terms.total == pytest.approx(0.0, abs=1e-3)


def test_operator_scales_with_sigma():
    U = fn.present_square_solution(T)
    terms = fn.operator_L_terms(U, 0.5, ETA, sigma=lambda t, W: np.full(W.shape[0], 2.0))
    # -1 + 1/2 * 2 * 4
    assert terms.total == pytest.approx(3.0)


def test_fd_derivatives_match_suppliers():
    U = fn.present_square_solution(T)
    V = fn.with_fd_derivatives(U)
    W = ETA.values[None, :]
    assert V.d_time(0.5, W)[0] == pytest.approx(-1.0, rel=1e-6)
    assert V.d_vertical(0.5, W)[0] == pytest.approx(2 * ETA.values[-1], rel=1e-6)
    assert fn.fd_second_vertical(U, 0.5, W)[0] == pytest.approx(2.0, rel=1e-5)
    assert fn.operator_L(V, 0.5, ETA) == pytest.approx(0.0, abs=1e-5)


def test_cylindrical_coordinates_match_regularized_integrals():
    G = cylindrical_registry(T)["quad4"]
    eta = path(lambda x: np.cos(3 * x) - x, 4096)
    fast = G.as_path_functional()(0.0, eta)
    slow = fn.eval_cylindrical(G, eta, EpsSchedule.from_multiples(eta.dt, (4, 2, 1)))
    assert fast == pytest.approx(slow, rel=1e-3)


def test_operator_flags_non_convergence_on_rough_path():
    rng = np.random.default_rng(1)
    eta = GridPath(-T, 0.0, np.cumsum(rng.standard_normal(1025)))
    with pytest.raises(fn.NonConvergence):
        fn.operator_L(fn.path_integral_solution(T), 0.5, eta, sched=EpsSchedule.from_multiples(eta.dt, (8, 4, 2, 1)))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_square_unit_second_derivative_is_atom(a, b):
    eta = path(lambda x: a + b * x, 32)
    vert, mu_perp, mu2 = fn.derivatives_cylindrical(cylindrical_registry(T)["square_unit"], eta)
    assert vert == pytest.approx(2 * a, abs=1e-9)
    assert mu_perp.is_zero()
    assert mu2.lam == pytest.approx(2.0)


def test_horizontal_identity_reports_first_order_value():
    rep = fn.horizontal_identity_check(fn.path_integral(T), ETA, fd_eps=1e-3)
    assert rep.first_order_rhs == pytest.approx(ETA.values[-1], abs=1e-9)
    assert rep.fd_estimate is not None and np.isfinite(rep.fd_estimate)


def test_growth_check():
    U = fn.present_square(T)
    W = np.array([[0.0, 2.0]])
    assert fn.growth_ok(U, np.array([4.0]), W)[0]
    assert not fn.growth_ok(U, np.array([6.0]), W)[0]
