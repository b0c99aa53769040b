"""Acceptance criteria as runnable checks.

Each criterion returns a :class:`CriterionResult`; ``tier="full"`` doubles the
path counts of the Monte-Carlo criteria and leaves thresholds unchanged.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bsde, functional as fn, kolmogorov as ko, stochcalc as sc
from .detcalc import EpsSchedule
from .pathgrid import DiagonalMeasure, GridPath

TIERS = ("quick", "full")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _scale(tier: str) -> int:
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}; expected one of {TIERS}")
    return 2 if tier == "full" else 1


def _probes(T: float, m: int) -> list[tuple[float, GridPath]]:
    x = np.linspace(-T, 0.0, m + 1)
    return [(0.0, GridPath(-T, 0.0, np.zeros_like(x))),
            (0.25, GridPath(-T, 0.0, np.sin(3 * x))),
            (0.5, GridPath(-T, 0.0, 1 + x)),
            (0.75, GridPath(-T, 0.0, np.cos(5 * x))),
            (0.5, GridPath(-T, 0.0, x ** 2 - 0.5))]


def c1_quadratic_variation(tier: str = "quick", seed: int = 101):
    P = 2000 * _scale(tier)
    grid = sc.Grid(1.0, 4096)
    ens = sc.simulate(sc.BrownianMotion(), grid, seed, P)
    sched = EpsSchedule.from_multiples(grid.dt, (16, 8, 4, 2, 1))
    qv = sc.quadratic_variation_sp(ens, sched)
    med = float(np.median(qv.paths[:, -1]))
    coarse = sc.covariation_paths(ens.values, ens.values, 2)
    frac_succ = float(np.mean(np.max(np.abs(qv.paths - coarse), axis=1) < 0.05))
    frac_t = float(np.mean(np.max(np.abs(qv.paths - grid.times), axis=1) < 0.05))
    ok = 0.98 <= med <= 1.02 and frac_succ >= 0.95
    return ok, (f"median [W]_1={med:.4f}; ucp fraction (successive eps)={frac_succ:.3f}, "
                f"(against t)={frac_t:.3f}"), {"median": med, "ucp_successive": frac_succ, "ucp_t": frac_t}


def c2_forward_vs_ito(tier: str = "quick", seed: int = 102):
    P = 2000 * _scale(tier)
    grid = sc.Grid(1.0, 4096)
    ens = sc.simulate(sc.BrownianMotion(), grid, seed, P)
    fi = sc.forward_integral_sp(ens.values, ens, sched=EpsSchedule.from_multiples(grid.dt))
    W = ens.values
    med = float(np.median(np.abs(fi.proper - (W[:, -1] ** 2 - 1.0) / 2)))
    left = np.sum(W[:, :-1] * np.diff(W, axis=1), axis=1)
    at_dt = sc.forward_paths(W, W, 1)[:, -1]
    exact = float(np.max(np.abs(at_dt - left)))
    ok = med < 0.02 and exact <= 1e-12 * max(1.0, float(np.max(np.abs(left))))
    return ok, f"median |fwd - ito|={med:.4g}; max |eps=dt - left-point|={exact:.2e}", {"median": med, "exact": exact}


def c3_ito_residual(tier: str = "quick", seed: int = 103):
    P = 500 * _scale(tier)
    grid = sc.Grid(1.0, 4096)
    meds = {}
    for model in (sc.BrownianMotion(), sc.HolderMix()):
        ens = sc.simulate(model, grid, seed, P)
        for F in (sc.SQUARE, sc.TIME_X):
            meds[f"{F.name}/{model.key}"] = float(np.median(sc.ito_residual(F, ens).sup))
    ok = all(v < 0.02 for v in meds.values())
    return ok, "median sup-residual " + ", ".join(f"{k}={v:.3g}" for k, v in meds.items()), meds


def c4_chi_window(tier: str = "quick", seed: int = 104):
    T, m = 1.0, 1024
    mu = DiagonalMeasure(T, 2.0, g4=np.ones(m + 1))
    exact = sc.chi_qv_window(lambda s: np.asarray(s, dtype=float), mu, 1.0)[0]
    ens = sc.simulate(sc.BrownianMotion(), sc.Grid(T, 4096), seed, 500 * _scale(tier))
    qv = sc.quadratic_variation_sp(ens).paths
    mc = float(np.median(sc.chi_qv_window(qv, mu, 1.0)))
    ok = abs(exact - 2.5) <= 1e-6 and abs(mc - 2.5) <= 0.03 * 2.5
    return ok, f"analytic={exact:.9f}; Monte-Carlo median={mc:.4f}", {"analytic": float(exact), "mc": mc}


def c5_window_ito(tier: str = "quick", seed: int = 105):
    T = 1.0
    ens = sc.simulate(sc.BrownianMotion(), sc.Grid(T, 4096), seed, 100 * _scale(tier))
    meds = {}
    for U in (fn.present_square_solution(T), fn.path_integral_solution(T)):
        meds[U.name] = float(np.median(sc.window_ito_residual(U, ens).sup))
    ok = all(v < 0.03 for v in meds.values())
    return ok, "median sup-residual " + ", ".join(f"{k}={v:.3g}" for k, v in meds.items()), meds


def _closed_form_pairs(T: float):
    return ((fn.present_square(T), fn.present_square_solution(T)),
            (fn.path_integral(T), fn.path_integral_solution(T)))


def c6_closed_forms(tier: str = "quick", seed: int = 106):
    T, m = 1.0, 128
    P = 100_000 * _scale(tier)
    zs = {}
    for k, (t, eta) in enumerate(_probes(T, m)):
        spec = ko.FlowSpec(t, eta, seed + k, P)
        for G, S in _closed_form_pairs(T):
            est = ko.solve_linear_mc(G, None, spec)
            zs[f"{G.name}@{k}"] = (est.value - S(t, eta)) / est.std_error
    worst = max(abs(z) for z in zs.values())
    return worst <= 3.0, f"worst |z|={worst:.2f} over {len(zs)} probe/functional pairs", zs


def c7_strict_residual(tier: str = "quick", seed: int = 107):
    T = 1.0
    out = {}
    for G, S in _closed_form_pairs(T):
        r = ko.strict_residual(S, None, G=G)
        out[S.name] = r.worst
    ok = all(v <= 1e-3 for v in out.values())
    return ok, "worst residual " + ", ".join(f"{k}={v:.2e}" for k, v in out.items()), out


def c8_cylindrical_oracle(tier: str = "quick", seed: int = 108):
    T, m = 1.0, 128
    x = np.linspace(-T, 0.0, m + 1)
    eta = GridPath(-T, 0.0, 0.3 * np.sin(2 * x))
    P = 50_000 * _scale(tier)
    zs = {}
    for k, (name, C) in enumerate(ko.cylindrical_registry(T).items()):
        t = 0.5
        oracle = ko.cylindrical_gaussian_solution(C, t, eta)
        est = ko.solve_linear_mc(C.as_path_functional(), None, ko.FlowSpec(t, eta, seed + k, P), guard=False)
        zs[name] = (est.value - oracle.value) / math.hypot(est.std_error, oracle.std_error)
    one = (lambda r: np.ones_like(np.asarray(r, dtype=float)))
    zero = (lambda r: np.zeros_like(np.asarray(r, dtype=float)))
    twin = fn.CylindricalFunctional(T, lambda y: y.sum(axis=1), None, None, [one, one], [zero, zero])
    try:
        ko.cylindrical_gaussian_solution(twin, 0.5, eta)
        rejected = False
    except ko.SingularCovariance:
        rejected = True
    worst = max(abs(z) for z in zs.values())
    ok = worst <= 3.0 and rejected
    return ok, f"worst |z|={worst:.2f} over {len(zs)} functionals; singular covariance rejected={rejected}", zs


def c9_bsde_linear(tier: str = "quick", seed: int = 109):
    T, m = 1.0, 64
    x = np.linspace(-T, 0.0, m + 1)
    eta = GridPath(-T, 0.0, 0.5 + 0.3 * np.sin(2 * x))
    r = bsde.linear_benchmark(0.5, ko.FlowSpec(0.0, eta, seed, 50_000 * _scale(tier)), n_picard=3)
    err = abs(r["Y_t"] - r["closed_form"])
    tol = max(3 * r["stderr"], 0.01 * abs(r["closed_form"]))
    return err <= tol, (f"Y_t={r['Y_t']:.5f} closed form={r['closed_form']:.5f} "
                        f"err={err:.2e} tol={tol:.2e}"), {"Y_t": r["Y_t"], "stderr": r["stderr"]}


def c10_robust_clark_ocone(tier: str = "quick", seed: int = 110):
    T = 1.0
    res = bsde.robustness_study(fn.present_square(T), bsde.zero_driver(), fn.present_square_solution(T),
                                sc.Grid(T, 4096), seed, 100 * _scale(tier))
    meds = {k: r.median_error for k, r in res.items()}
    ratio = bsde.cross_model_ratio(res)
    ok = all(v < 0.01 for v in meds.values()) and ratio <= 3.0
    return ok, ("median error " + ", ".join(f"{k}={v:.4f}" for k, v in meds.items())
                + f"; cross-model ratio={ratio:.2f}"), {**meds, "ratio": ratio}


def three_mode_functional(T: float) -> tuple[fn.PathFunctional, fn.CylindricalFunctional]:
    """A cylindrical functional of the first three cosine coefficients."""
    phis, dphis = ko.fourier_basis(T, 3)

    def g(y):
        return y[:, 0] ** 2 + y[:, 1] * y[:, 2] + np.cos(y[:, 1])
    C = fn.CylindricalFunctional(T, g, None, None, phis, dphis, "three_mode")
    U = fn.PathFunctional(T, lambda t, W: g(C.coordinates(W)), growth=(3.0, 2.0),
                          name="three_mode", time_dependent=False)
    return U, C


def c11_strong_viscosity(tier: str = "quick", seed: int = 111):
    T, m, t = 1.0, 128, 0.5
    x = np.linspace(-T, 0.0, m + 1)
    eta = GridPath(-T, 0.0, 0.5 + 0.3 * np.sin(2 * x))
    U3, C3 = three_mode_functional(T)
    seq3 = ko.strong_viscosity_sequence(U3, t, eta)
    exact = ko.cylindrical_gaussian_solution(C3, t, eta).value
    stable = True
    for e in seq3.entries:
        if e.n >= 3:
            w2 = ko.default_width(e.n) ** 2
            moll = abs(ko.cylindrical_gaussian_solution(C3, t, eta, extra_var=w2).value - exact)
            stable &= abs(e.value - exact) <= 2 * moll + 1e-3 * max(1.0, abs(exact))
    G = fn.abs_integral(T)
    seq = ko.strong_viscosity_sequence(G, t, eta)
    direct = ko.solve_linear_mc(G, None, ko.FlowSpec(t, eta, seed, 100_000 * _scale(tier)))
    gaps = np.abs(seq.values - direct.value) / abs(direct.value)
    decreasing = bool(np.all(np.diff(gaps) < 0))
    final = float(gaps[-1])
    growth = seq.growth_non_increasing()
    rise = float(np.max(np.diff(seq.growth_C)) / seq.growth_C[0])
    ok = stable and decreasing and final < 0.02 and growth
    return ok, (f"cylindrical stabilizes={stable}; gaps decreasing={decreasing}; final gap={final:.4f}; "
                f"growth constants non-increasing={growth} (largest relative rise {rise:.1e}); "
                f"within declared growth bound={seq.within_declared_bound()}"), \
        {"final_gap": final, "gaps": gaps.tolist(), "C": seq.growth_C.tolist(), "largest_rise": rise}


def c12_martingale(tier: str = "quick", seed: int = 112):
    T, m = 1.0, 128
    P = 100_000 * _scale(tier)
    worst = 0.0
    ok = True
    for k, (t, eta) in enumerate(_probes(T, m)[:3]):
        spec = ko.FlowSpec(t, eta, seed + k, P)
        ens = ko.flow_ensemble(spec)
        for _, S in _closed_form_pairs(T):
            chk = ko.martingale_check(S, spec, 5, ens)
            ok &= chk.passed
            worst = max(worst, float(np.max(np.abs(chk.means - chk.reference) / chk.stderrs)))
    return ok, f"worst |mean - U(t, eta)| / stderr={worst:.2f} at 5 checkpoints", {"worst_z": worst}


CRITERIA: dict[int, tuple[str, Callable]] = {
    1: ("quadratic variation", c1_quadratic_variation),
    2: ("forward integral vs Ito", c2_forward_vs_ito),
    3: ("Ito formula residual", c3_ito_residual),
    4: ("window quadratic variation", c4_chi_window),
    5: ("window Ito residual", c5_window_ito),
    6: ("Kolmogorov closed forms", c6_closed_forms),
    7: ("PDE residual", c7_strict_residual),
    8: ("cylindrical oracle agreement", c8_cylindrical_oracle),
    9: ("BSDE linear driver", c9_bsde_linear),
    10: ("robust Clark-Ocone", c10_robust_clark_ocone),
    11: ("strong-viscosity pipeline", c11_strong_viscosity),
    12: ("martingale property of solutions", c12_martingale),
}


def run_criterion(number: int, tier: str = "quick") -> CriterionResult:
    _scale(tier)
    name, func = CRITERIA[number]
    t0 = time.perf_counter()
    ok, detail, metrics = func(tier)
    return CriterionResult(number, name, bool(ok), detail, time.perf_counter() - t0, metrics)


def run_acceptance_suite(tier: str = "quick", numbers=None, echo: Callable | None = print) -> list[CriterionResult]:
    """Run the criteria, echoing one pass/fail line each."""
    _scale(tier)
    out = []
    for k in numbers or sorted(CRITERIA):
        r = run_criterion(k, tier)
        if echo:
            echo(r.line())
        out.append(r)
    return out
