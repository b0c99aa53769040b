import math

import numpy as np
import pytest

from pathreg import functional as fn
from pathreg import stochcalc as sc
from pathreg.detcalc import EpsSchedule
from pathreg.pathgrid import DiagonalMeasure


def sched(grid, multiples=(4, 2, 1)):
    return EpsSchedule.from_multiples(grid.dt, multiples)


@pytest.fixture(scope="module")
def bm():
    return sc.simulate(sc.BrownianMotion(), sc.Grid(1.0, 2048), seed=11, n_paths=300)


def test_simulation_is_reproducible_and_worker_independent():
    g = sc.Grid(1.0, 64)
    a = sc.simulate(sc.BrownianMotion(), g, 5, 600, workers=1)
    b = sc.simulate(sc.BrownianMotion(), g, 5, 600, workers=3)
    np.testing.assert_array_equal(a.values, b.values)
    c = sc.simulate(sc.BrownianMotion(), g, 6, 600)
    assert not np.array_equal(a.values, c.values)


def test_blocks_are_prefix_stable():
    g = sc.Grid(1.0, 32)
    small = sc.simulate(sc.HolderMix(0.7), g, 2, 100)
    big = sc.simulate(sc.HolderMix(0.7), g, 2, 300)
    np.testing.assert_array_equal(small.values, big.values[:100])


def test_workers_env(monkeypatch):
    monkeypatch.setenv(sc.WORKERS_ENV, "4")
    assert sc.default_workers() == 4
    monkeypatch.setenv(sc.WORKERS_ENV, "junk")
    assert sc.default_workers() == 1


def test_increments_drive_brownian_paths(bm):
    np.testing.assert_allclose(np.diff(bm.values, axis=1), bm.dW, atol=1e-12)


@pytest.mark.parametrize("hurst", [0.6, 0.8])
def test_fgn_sum_variance_scales_as_power(hurst):
    n = 64
    x = sc.fgn_circulant(n, hurst, np.random.default_rng(0), 8000)
    assert np.var(x.sum(axis=1)) == pytest.approx(n ** (2 * hurst), rel=0.08)
    assert np.var(x[:, 0]) == pytest.approx(1.0, rel=0.08)


def test_holder_mix_rejects_rough_hurst():
    with pytest.raises(ValueError):
        sc.HolderMix(0.4)


@pytest.mark.parametrize("model, rate", [
    (sc.BrownianMotion(), 1.0),
    (sc.BrownianPlusSmoothDrift(), 1.0),
    (sc.HolderMix(0.8), 1.0),
    (sc.PathDependentSDE(lambda t, H: np.full(H.shape[0], 2.0)), 4.0),
])
def test_quadratic_variation_rate(model, rate):
    g = sc.Grid(1.0, 2048)
    X = sc.simulate(model, g, 3, 200)
    qv = sc.quadratic_variation_sp(X, sched(g))
    assert np.median(qv.paths[:, -1]) == pytest.approx(rate, rel=0.05)
    np.testing.assert_allclose(qv.median()[1024], rate / 2, rtol=0.08)


def test_sde_guard():
    g = sc.Grid(1.0, 16)
    with pytest.raises(FloatingPointError):
        sc.simulate(sc.PathDependentSDE(lambda t, H: np.full(H.shape[0], np.inf)), g, 0, 4)


def test_forward_integral_of_brownian_against_itself(bm):
    res = sc.forward_integral_sp(bm.values, bm, sched=sched(bm.grid))
    WT = bm.values[:, -1]
    err = np.abs(res.proper - (WT ** 2 - 1.0) / 2)
    assert np.median(err) < 0.03
    assert res.diagnostics.terminal.shape == (3, 2)


def test_forward_integral_validation(bm):
    with pytest.raises(ValueError):
        sc.forward_integral_sp(bm.values[:, :-1], bm)
    with pytest.raises(ValueError):
        sc.forward_integral_sp(bm.values, bm, mode="closed")


def test_forward_integral_callable_and_improper(bm):
    res = sc.forward_integral_sp(lambda X: np.ones_like(X.values), bm, mode="improper", sched=sched(bm.grid))
    # int 1 d^- X = X_T - X_0 up to the eps-average at the right end
    assert np.median(np.abs(res.proper - bm.values[:, -1])) < 0.05
    assert res.improper is not None and res.improper.shape == (bm.n_paths,)


def test_covariation_of_independent_ensembles_is_small(bm):
    other = sc.simulate(sc.BrownianMotion(), bm.grid, 99, bm.n_paths)
    cov = sc.covariation_sp(bm, other, sched(bm.grid))
    assert abs(np.median(cov.paths[:, -1])) < 0.05
    assert not cov.ucp_note


@pytest.mark.parametrize("F", [sc.SQUARE, sc.TIME_X, sc.CUBE])
def test_ito_residual_is_small(bm, F):
    r = sc.ito_residual(F, bm, sched(bm.grid))
    assert np.median(r.sup) < 0.05
    assert r.quantiles().shape == (3, bm.grid.n_steps + 1)


def test_ito_residual_with_supplied_qv(bm):
    r = sc.ito_residual(sc.SQUARE, bm, sched(bm.grid), qv=bm.grid.times)
    # x^2 - int 2x d^-x - t: residual is [X]_t - t
    assert np.median(r.sup) < 0.1


def test_chi_window_analytic_value():
    mu = DiagonalMeasure(1.0, 2.0, g4=np.ones(257))
    # 2 * 1 + int_{-1}^0 (1 + x) dx
    val = sc.chi_qv_window(lambda s: np.asarray(s, dtype=float), mu, 1.0)[0]
    assert val == pytest.approx(2.5, abs=1e-12)
    assert sc.chi_qv_window_from_rate(lambda s: np.ones_like(np.asarray(s, dtype=float)), mu, 1.0) == \
        pytest.approx(2.5, abs=1e-3)
    with pytest.raises(ValueError):
        sc.chi_qv_window(lambda s: s, mu, 1.5)


def test_chi_window_from_paths(bm):
    mu = DiagonalMeasure(1.0, 2.0, g4=np.ones(257))
    qv = sc.quadratic_variation_sp(bm, sched(bm.grid)).paths
    assert np.median(sc.chi_qv_window(qv, mu, 1.0)) == pytest.approx(2.5, rel=0.05)


@pytest.mark.parametrize("U", [fn.present_square_solution(1.0), fn.path_integral_solution(1.0)])
def test_window_ito_residual(U):
    g = sc.Grid(1.0, 512)
    X = sc.simulate(sc.BrownianMotion(), g, 4, 40)
    r = sc.window_ito_residual(U, X, fn.unit_sigma, sched(g))
    assert np.median(r.sup) < 0.1
    est = sc.window_ito_residual(U, X, None, sched(g))
    assert np.median(est.sup) < 0.15


def test_window_ito_operator_form_agrees():
    g = sc.Grid(1.0, 256)
    X = sc.simulate(sc.BrownianMotion(), g, 4, 20)
    U = fn.present_square_solution(1.0)
    a = sc.window_ito_residual(U, X, sched=sched(g)).paths
    b = sc.window_ito_residual(U, X, sched=sched(g), form="operator").paths
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_ensemble_summary_format():
    text = sc.ensemble_summary(np.array([0.0, 1.0]), np.array([[0.0, 1.0], [0.0, 3.0]]))
    lines = text.splitlines()
    assert lines[0] == "t,quantile05,median,quantile95"
    assert lines[2].split(",")[2] == "2"
