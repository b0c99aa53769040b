import math

import numpy as np
import pytest

from pathreg import bsde
from pathreg import functional as fn
from pathreg import stochcalc as sc
from pathreg.kolmogorov import FlowSpec, flow_ensemble
from pathreg.pathgrid import GridPath

T = 1.0
ETA = GridPath.from_function(lambda x: 0.6 + 0.2 * np.cos(3 * x), -T, 0.0, 64)


def spec(t=0.5, n=4000, seed=2):
    return FlowSpec(t, ETA, seed, n)


def test_zero_driver_gives_heat_solution_and_gradient():
    sol = bsde.solve_bsde(fn.present_square(T), bsde.zero_driver(), spec())
    x0 = ETA.values[-1]
    assert abs(sol.Y_t - (x0 ** 2 + 0.5)) <= 4 * sol.stderr
    # Z_s estimates the vertical derivative 2 X_s; one-step regression is noisy per path,
    # so compare the slope pooled over steps. The same seed rebuilds the same flow.
    X = flow_ensemble(spec()).Z[:, 65:96]
    slope = np.polyfit(X.ravel(), sol.Z[:, 1:].ravel(), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.6)
    s2, h2 = sol.norms
    assert s2 >= sol.Y_t ** 2 * 0.5 and h2 > 0


@pytest.mark.parametrize("alpha", [-0.5, 0.5, 1.0])
def test_linear_driver_matches_closed_form(alpha):
    r = bsde.linear_benchmark(alpha, spec())
    assert abs(r["Y_t"] - r["closed_form"]) <= 4 * r["stderr"] + 0.01
    cv = r["solution"].diagnostics
    assert abs(cv["control_variate_mean"] - r["closed_form"]) <= 4 * cv["control_variate_stderr"] + 0.01


def test_deterministic_driver_adds_its_integral():
    sol = bsde.solve_bsde(fn.present_square(T), bsde.deterministic_driver(lambda t: 2.0 * t), spec())
    # int_{1/2}^1 2s ds = 3/4
    assert abs(sol.Y_t - (ETA.values[-1] ** 2 + 0.5 + 0.75)) <= 4 * sol.stderr + 1e-3


def test_picard_divergence_is_reported():
    wild = bsde.Driver(lambda t, W, y, z: 200.0 * y, 200.0, name="wild")
    with pytest.raises(bsde.PicardDivergence):
        bsde.solve_bsde(fn.present_square(T), wild, spec(n=300))


def test_lipschitz_spot_check():
    assert bsde.linear_driver(-0.7).lipschitz_spot_check(T) <= 0.7 + 1e-12
    liar = bsde.Driver(lambda t, W, y, z: 3 * y, 1.0)
    with pytest.raises(ValueError):
        liar.lipschitz_spot_check(T)


def test_basis_dimension():
    W = np.random.default_rng(0).standard_normal((10, 65))
    assert bsde.FourierBasis(T).features(W).shape == (10, 15)
    assert bsde.FourierBasis(T, 2, 1, False).features(W).shape == (10, 3)


def test_regression_reproduces_linear_targets():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(200), rng.standard_normal((200, 3))])
    y = X @ np.array([1.0, 2.0, -1.0, 0.5])
    fitted, info = bsde.Regression.fit(X, y[:, None])
    np.testing.assert_allclose(fitted[:, 0], y, atol=1e-10)
    assert info.truncated == 0


def test_regression_truncates_collinear_columns_or_refuses():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(100)
    X = np.column_stack([np.ones(100), a, 2 * a, np.full(100, 3.0)])
    fitted, info = bsde.Regression.fit(X, (a + 1)[:, None])
    np.testing.assert_allclose(fitted[:, 0], a + 1, atol=1e-10)
    assert info.truncated == 1
    with pytest.raises(bsde.IllConditioned):
        bsde.Regression.fit(X, a[:, None], strict=True)


def test_robust_representation_across_models():
    g = sc.Grid(T, 512)
    res = bsde.robustness_study(fn.present_square(T), bsde.zero_driver(), fn.present_square_solution(T),
                                g, 5, 60)
    assert set(res) == set(bsde.UNIT_QV_MODELS)
    for r in res.values():
        assert r.median_error < 0.05
        assert r.qv_terminal_median == pytest.approx(1.0, abs=0.05)
    assert 1.0 <= bsde.cross_model_ratio(res) < 3.0


def test_robust_representation_needs_unit_qv():
    g = sc.Grid(T, 256)
    X = sc.simulate(sc.PathDependentSDE(lambda t, H: np.full(H.shape[0], 2.0)), g, 0, 20)
    with pytest.raises(bsde.QVPrecondition):
        bsde.robust_representation(fn.present_square(T), bsde.zero_driver(), fn.present_square_solution(T), X)


def test_benchmark_table():
    text = bsde.benchmark_table([{"model": "m", "n_paths": 2, "n_steps": 3, "Y_t": 1.5, "stderr": 0.1,
                                  "closed_form": 1.25}])
    assert text.splitlines()[1] == "m,2,3,1.5,0.1,1.25,0.25"
