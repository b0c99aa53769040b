import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pathreg.pathgrid import (CadPath, DiagonalMeasure, GridPath, SignedMeasure1D, apply_diag_measure,
                              concatenate, extend_zero_left, k_eta_lattice, shift_member, window_at,
                              window_matrix)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(float, st.integers(2, 40), elements=finite))
def test_text_round_trip(vals):
    p = GridPath(-1.0, 0.0, vals)
    q = GridPath.from_text(p.to_text())
    np.testing.assert_array_equal(q.values, p.values)
    assert (q.t_start, q.t_end) == (p.t_start, p.t_end)


@pytest.mark.parametrize("vals", [[1.0], [[1.0, 2.0]], [1.0, np.nan]])
def test_rejects_bad_values(vals):
    with pytest.raises(ValueError):
        GridPath(0.0, 1.0, vals)


def test_values_are_read_only():
    p = GridPath(0.0, 1.0, [0.0, 1.0])
    with pytest.raises(ValueError):
        p.values[0] = 3.0


def test_node_index_and_restrict():
    p = GridPath.from_function(lambda t: t ** 2, -1.0, 0.0, 8)
    assert p.node_index(-0.5) == 4
    with pytest.raises(ValueError):
        p.node_index(-0.51)
    sub = p.restrict(-0.5, 0.0)
    np.testing.assert_allclose(sub.values, sub.times ** 2)


def test_extensions():
    p = GridPath(0.0, 1.0, [1.0, 2.0, 3.0])
    assert p(-1.0) == 1.0 and p(2.0) == 3.0 and p(0.25) == 1.5
    np.testing.assert_array_equal(extend_zero_left(p, np.array([-0.1, 0.0, 1.5])), [0.0, 1.0, 3.0])


def test_window_view_matches_base():
    p = GridPath.from_function(np.sin, 0.0, 2.0, 20)
    w = window_at(p, 1.5, 1.0)
    assert w(0.0) == pytest.approx(np.sin(1.5))
    assert w(-1.0) == pytest.approx(np.sin(0.5))
    with pytest.raises(ValueError):
        w(0.1)
    np.testing.assert_allclose(w.to_gridpath().values, np.sin(np.linspace(0.5, 1.5, 11)))


def test_window_matrix_clamps_before_zero():
    V = np.arange(10.0).reshape(2, 5)
    np.testing.assert_array_equal(window_matrix(V, 1, 3), [[0, 0, 0, 1], [5, 5, 5, 6]])
    np.testing.assert_array_equal(window_matrix(V, 4, 2), V[:, 2:])


def test_shift_family():
    eta = GridPath.from_function(lambda x: x, -1.0, 0.0, 10)
    s = shift_member(eta, 0.2)
    np.testing.assert_allclose(s.values, np.maximum(eta.times - 0.2, -1.0))
    lat = k_eta_lattice(eta, 1.0, 4)
    assert [e for e, _ in lat] == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        shift_member(eta, 1.5)


def test_cad_present_and_concatenate():
    p = GridPath(-1.0, 0.0, [0.0, 1.0])
    assert CadPath(p, 0.5).present == 1.5
    q = concatenate(p, np.array([2.0, 3.0]))
    assert q.t_end == pytest.approx(2.0) and q.n_steps == 3


def test_signed_measure_integrate():
    mu = SignedMeasure1D(0.0, 1.0, ((0.5, 2.0),), np.ones(101))
    # 2 h(0.5) + int_0^1 x dx
    assert mu.integrate(lambda x: x) == pytest.approx(1.0 + 0.5)
    assert mu.total_variation() == pytest.approx(3.0)
    assert (mu * 2 + mu).integrate(lambda x: np.ones_like(x)) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        SignedMeasure1D(0.0, 1.0, ((2.0, 1.0),))


def test_diagonal_measure_pairing():
    n = 201
    mu = DiagonalMeasure(1.0, 2.0, g4=np.ones(n), g2=np.ones(n))
    # lam h(0,0) + int h(x, x) dx + int h(x, 0) dx with h = 1 + x + y
    h = lambda x, y: 1.0 + x + y
    assert apply_diag_measure(mu, h) == pytest.approx(2.0 + 0.0 + 0.5)
    assert mu.diagonal(lambda x: np.ones_like(x)) == pytest.approx(3.0)
    back = DiagonalMeasure.from_text(mu.to_text())
    assert apply_diag_measure(back, h) == pytest.approx(apply_diag_measure(mu, h))


def test_diagonal_measure_rejects_mixed_grids():
    with pytest.raises(ValueError):
        DiagonalMeasure(1.0, g2=np.ones(5), g4=np.ones(6))
