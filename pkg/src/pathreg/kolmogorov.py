"""Flow sampling, Monte-Carlo solutions of the path-dependent heat equation and its oracles.

The stochastic flow started at ``(t, eta)`` is the window process of the
concatenated path ``Z(u) = eta(u)`` for ``u <= 0`` and ``eta(0) + B_u`` for
``0 < u <= T - t``; its window at time ``s`` is the slice of ``Z`` of width
``T`` ending at ``u = s - t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc

from . import functional as fn
from .detcalc import EpsSchedule
from .functional import CylindricalFunctional, PathFunctional, unit_sigma
from .pathgrid import GridPath, WindowView
from .stochcalc import BLOCK, BrownianMotion, Grid, _simulate_block

QMC_SEED = 20240607
GH_ORDER = 24


class GrowthViolation(RuntimeError):
    pass


class SingularCovariance(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowSpec:
    """Initial time ``t``, initial window ``eta`` on ``[-T, 0]``, seed and path count."""

    t: float
    eta: GridPath
    seed: int = 0
    n_paths: int = 10_000

    def __post_init__(self):
        if abs(self.eta.t_end) > 1e-12:
            raise ValueError("eta must live on [-T, 0]")
        if not -1e-12 <= self.t <= self.T + 1e-12:
            raise ValueError(f"t={self.t} outside [0, T]")
        if abs(self.n_future * self.dt - (self.T - self.t)) > 1e-9 * max(1.0, self.T):
            raise ValueError("T - t must be a multiple of the window grid step")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")

    @property
    def T(self) -> float:
        return -self.eta.t_start

    @property
    def dt(self) -> float:
        return self.eta.dt

    @property
    def m(self) -> int:
        return self.eta.n_steps

    @property
    def n_future(self) -> int:
        return int(round((self.T - self.t) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t + self.dt * np.arange(self.n_future + 1)

    def node(self, s: float) -> int:
        if not self.t - 1e-12 <= s <= self.T + 1e-12:
            raise ValueError(f"s={s} outside [t, T] = [{self.t}, {self.T}]")
        q = (s - self.t) / self.dt
        if abs(q - round(q)) > 1e-7:
            raise ValueError(f"s={s} is not on the flow grid")
        return int(round(q))

    def blocks(self) -> list[tuple[int, int]]:
        return [(b, min(BLOCK, self.n_paths - b * BLOCK))
                for b in range(math.ceil(self.n_paths / BLOCK))]


def _block_paths(spec: FlowSpec, block: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated paths ``Z`` (past then future) and the Brownian increments of one block."""
    n = spec.n_future
    past = np.broadcast_to(spec.eta.values, (size, spec.m + 1))
    if n == 0:
        return np.array(past), np.zeros((size, 0))
    B, dW = _simulate_block(BrownianMotion(), Grid(spec.T - spec.t, n), spec.seed, block, size)
    return np.concatenate([past, spec.eta.values[-1] + B[:, 1:]], axis=1), dW


@dataclass(frozen=True, eq=False)
class FlowEnsemble:
    """Materialized flow: ``Z[:, q : q + m + 1]`` is the window at ``s = t + q dt``."""

    spec: FlowSpec
    Z: np.ndarray
    dW: np.ndarray

    def windows(self, s: float) -> np.ndarray:
        q = self.spec.node(s)
        return self.Z[:, q:q + self.spec.m + 1]

    def windows_at_node(self, q: int) -> np.ndarray:
        return self.Z[:, q:q + self.spec.m + 1]

    def path(self, i: int) -> GridPath:
        """The concatenated path of flow member ``i`` on ``[-T, T - t]``."""
        return GridPath(-self.spec.T, self.spec.T - self.spec.t, self.Z[i])


def flow_ensemble(spec: FlowSpec) -> FlowEnsemble:
    parts = [_block_paths(spec, b, size) for b, size in spec.blocks()]
    return FlowEnsemble(spec, np.concatenate([p[0] for p in parts]),
                        np.concatenate([p[1] for p in parts]))


def flow_sample(spec: FlowSpec, s: float, ensemble: FlowEnsemble | None = None) -> list[WindowView]:
    """Windows ``W_s^{t, eta}`` of every flow member as views of their concatenated paths."""
    ens = ensemble or flow_ensemble(spec)
    spec.node(s)
    anchor = s - spec.t
    return [WindowView(ens.path(i), anchor, spec.T) for i in range(spec.n_paths)]


@dataclass
class SolutionEstimate:
    value: float
    std_error: float
    n_paths: int
    diagnostics: dict = field(default_factory=dict)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.std_error + 1e-12


def _check_growth(U: PathFunctional, vals: np.ndarray, W: np.ndarray, what: str):
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError(f"non-finite {what} sample")
    if not np.all(fn.growth_ok(U, vals, W)):
        raise GrowthViolation(f"{what} exceeds its declared growth bound {U.growth}")


def solve_linear_mc(G: PathFunctional, F: PathFunctional | None, spec: FlowSpec,
                    guard: bool = True) -> SolutionEstimate:
    """``E[G(W_T) + int_t^T F(s, W_s) ds]`` over the flow, by streaming blocks of paths.

    The time integral of ``F`` is trapezoidal along each path.
    """
    total, total2, n = 0.0, 0.0, 0
    T = spec.T
    for b, size in spec.blocks():
        Z, _ = _block_paths(spec, b, size)
        WT = Z[:, spec.n_future:]
        sample = G.batch(T, WT)
        if guard:
            _check_growth(G, sample, WT, "terminal")
        if F is not None and spec.n_future > 0:
            Fs = np.empty((size, spec.n_future + 1))
            for q, s in enumerate(spec.times):
                W = Z[:, q:q + spec.m + 1]
                Fs[:, q] = F.batch(s, W)
                if guard:
                    _check_growth(F, Fs[:, q], W, "running")
            sample = sample + np.trapezoid(Fs, dx=spec.dt, axis=1)
        # pairwise-stable accumulation in block order
        total += float(np.sum(sample))
        total2 += float(np.sum(sample ** 2))
        n += size
    mean = total / n
    var = max(total2 / n - mean ** 2, 0.0) * n / max(n - 1, 1)
    return SolutionEstimate(mean, math.sqrt(var / n), n,
                            {"t": spec.t, "T": T, "seed": spec.seed, "n_future": spec.n_future})


# -- Gaussian cylindrical oracle -------------------------------------------------

def _gram(fs: Sequence[Callable], a: float, b: float, n: int = 4096) -> np.ndarray:
    """``(int_a^b f_i f_j)`` by composite Gauss-Legendre on ``n / 16`` panels."""
    x, w = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(a, b, max(1, n // 16) + 1)
    mid, half = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    V = np.array([np.broadcast_to(f(pts), pts.shape) for f in fs])
    return (V * wts) @ V.T


def frozen_window(spec_eta: GridPath, t: float, T: float) -> np.ndarray:
    """Terminal window of the flow with all Brownian increments set to zero."""
    m = spec_eta.n_steps
    q = int(round((T - t) / spec_eta.dt))
    Z = np.concatenate([spec_eta.values, np.full(q, spec_eta.values[-1])])
    return Z[q:q + m + 1][None, :]


def _chunked(g: Callable, Y: np.ndarray, size: int = 4096) -> np.ndarray:
    return np.concatenate([np.asarray(g(Y[i:i + size]), dtype=float) for i in range(0, len(Y), size)])


def _hermite(g: Callable, mean: np.ndarray, L: np.ndarray, order: int) -> float:
    N = mean.size
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    pts = np.stack([gr.ravel() for gr in np.meshgrid(*([x] * N), indexing="ij")], axis=1)
    wts = np.prod(np.meshgrid(*([w] * N), indexing="ij"), axis=0).ravel()
    return float(np.dot(wts, _chunked(g, mean[None, :] + pts @ L.T)))


def gaussian_expectation(g: Callable, mean: np.ndarray, cov: np.ndarray,
                         n_qmc: int = 2 ** 14, n_rand: int = 8) -> tuple[float, float]:
    """``E[g(mean + xi)]``, ``xi ~ N(0, cov)``, with an error estimate.

    Tensor Gauss-Hermite for dimension at most 3, where the error estimate is
    the change between two quadrature orders; randomized scrambled Sobol
    otherwise, where it is the standard error over the randomizations.
    """
    N = mean.size
    L = np.linalg.cholesky(cov)
    if N <= 3:
        lo, hi = (_hermite(g, mean, L, order) for order in (GH_ORDER, GH_ORDER + 12))
        return hi, abs(hi - lo)
    ests = []
    for r in range(n_rand):
        u = qmc.Sobol(N, scramble=True, seed=QMC_SEED + r).random(n_qmc)
        z = norm.ppf(np.clip(u, 1e-15, 1 - 1e-15))
        ests.append(float(np.mean(_chunked(g, mean[None, :] + z @ L.T))))
    ests = np.array(ests)
    return float(ests.mean()), float(ests.std(ddof=1) / math.sqrt(n_rand))


def cylindrical_moments(G: CylindricalFunctional, t: float, eta: GridPath):
    """Mean vector of the frozen past and covariance ``int_t^T phi_i phi_j``."""
    T = G.T
    mean = G.coordinates(frozen_window(eta, t, T))[0]
    cov = _gram(G.phis, t, T) if t < T else np.zeros((G.N, G.N))
    return mean, cov


def cylindrical_gaussian_solution(G: CylindricalFunctional, t: float, eta: GridPath,
                                  rel_tol: float = 1e-10, extra_var: float = 0.0) -> SolutionEstimate:
    """Exact (quadrature or quasi-random) value of the heat solution for cylindrical ``G``.

    ``extra_var`` adds an isotropic variance to the Gaussian vector, which is
    how a Gaussian mollification of ``g`` enters. Raises
    :class:`SingularCovariance` when the covariance is not positive definite,
    except at ``t = T`` where the solution is ``G(eta)``.
    """
    mean, cov = cylindrical_moments(G, t, eta)
    cov = cov + extra_var * np.eye(G.N)
    if t >= G.T - 1e-12 and extra_var == 0.0:
        return SolutionEstimate(float(np.asarray(G.g(mean[None, :]))[0]), 0.0, 0, {"method": "terminal"})
    ev = np.linalg.eigvalsh(cov)
    if ev[0] <= rel_tol * max(ev[-1], 1e-300):
        raise SingularCovariance(f"covariance is singular (eigenvalues {ev})")
    val, se = gaussian_expectation(G.g, mean, cov)
    return SolutionEstimate(val, se, 0, {"method": "gauss-hermite" if G.N <= 3 else "sobol",
                                         "mean": mean.tolist(), "cov": cov.tolist()})


# -- PDE residual -------------------------------------------------------------------

def default_design(T: float = 1.0, m: int = 4096, n: int = 10, seed: int = 7) -> list[tuple[float, GridPath]]:
    """Fixed probe design: grid times in ``(0, T)`` paired with smooth paths.

    Smoothness matters: the regularized integrals inside ``L`` are certified by
    a Cauchy criterion, which rough probes cannot meet at grid resolution.
    """
    rng = np.random.default_rng(seed)
    x = np.linspace(-T, 0.0, m + 1)
    shapes = [np.sin(3 * x) + 0.5, 1 + x, np.cos(2 * np.pi * x / T), np.zeros_like(x),
              x ** 2 - 0.3]
    probes = []
    for k in range(n):
        if k < len(shapes):
            v = shapes[k]
        else:
            c = rng.standard_normal(4) / (1 + np.arange(4)) ** 2
            v = sum(ck * np.cos(i * math.pi * (x + T) / T) for i, ck in enumerate(c))
        j = int(round((k + 1) / (n + 1) * m))
        probes.append((j * T / m, GridPath(-T, 0.0, v)))
    return probes


@dataclass
class StrictResidual:
    residual: float
    terminal_mismatch: float
    per_probe: list

    @property
    def worst(self) -> float:
        return max(self.residual, self.terminal_mismatch)


def strict_residual(U: PathFunctional, F: PathFunctional | None, sigma: Callable = unit_sigma,
                    design: Sequence[tuple[float, GridPath]] | None = None,
                    G: PathFunctional | None = None, derivatives: str = "fd",
                    sched: EpsSchedule | None = None) -> StrictResidual:
    """Worst ``|L U + F|`` over the probe design and worst ``|U(T, .) - G|`` over its paths.

    With ``derivatives="fd"`` the time derivative and both vertical
    derivatives are finite differences at their default steps.
    """
    design = design or default_design(U.T)
    V = fn.with_fd_derivatives(U) if derivatives == "fd" else U
    rows, worst, term = [], 0.0, 0.0
    for t, eta in design:
        val = fn.operator_L(V, t, eta, sigma, sched)
        if F is not None:
            val += F(t, eta)
        mism = abs(U(U.T, eta) - G(U.T, eta)) if G is not None else 0.0
        rows.append((t, val, mism))
        worst, term = max(worst, abs(val)), max(term, mism)
    return StrictResidual(worst, term, rows)


# -- martingale shadow -----------------------------------------------------------------

@dataclass
class MartingaleCheck:
    times: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    reference: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.means - self.reference) <= 3 * self.stderrs + 1e-12))


def martingale_check(U: PathFunctional, spec: FlowSpec, n_checkpoints: int = 5,
                     ensemble: FlowEnsemble | None = None) -> MartingaleCheck:
    """Sample means of ``U(s, W_s)`` at checkpoints in ``(t, T]`` against ``U(t, eta)``."""
    ens = ensemble or flow_ensemble(spec)
    qs = np.unique(np.linspace(0, spec.n_future, n_checkpoints + 1).round().astype(int))[1:]
    means, ses = [], []
    for q in qs:
        v = U.batch(spec.t + q * spec.dt, ens.windows_at_node(q))
        means.append(v.mean())
        ses.append(v.std(ddof=1) / math.sqrt(v.size))
    return MartingaleCheck(spec.t + qs * spec.dt, np.array(means), np.array(ses), U(spec.t, spec.eta))


# -- cylindrical registry ------------------------------------------------------------

def _cyl(T, name, g, grad, hess, phis, dphis, growth=(1.0, 2.0)):
    return CylindricalFunctional(T, g, grad, hess, phis, dphis, name, growth)


def _one(r):
    return np.ones_like(np.asarray(r, dtype=float))


def _zero(r):
    return np.zeros_like(np.asarray(r, dtype=float))


def cylindrical_registry(T: float = 1.0) -> dict[str, CylindricalFunctional]:
    """Five cylindrical functionals covering one to four coordinates."""
    def sq_g(y):
        return y[:, 0] ** 2

    def sq_grad(y):
        return 2 * y

    def sq_hess(y):
        return np.full((y.shape[0], 1, 1), 2.0)

    def ex_g(y):
        return np.exp(0.5 * y[:, 0])

    def ex_grad(y):
        return 0.5 * np.exp(0.5 * y)

    def ex_hess(y):
        return (0.25 * np.exp(0.5 * y[:, 0]))[:, None, None]

    def pr_g(y):
        return y[:, 0] * y[:, 1]

    def pr_grad(y):
        return y[:, ::-1].copy()

    def pr_hess(y):
        return np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), (y.shape[0], 2, 2)).copy()

    def cs_g(y):
        return np.cos(y.sum(axis=1))

    def cs_grad(y):
        return -np.sin(y.sum(axis=1))[:, None] * np.ones_like(y)

    def cs_hess(y):
        return -np.cos(y.sum(axis=1))[:, None, None] * np.ones((y.shape[0], 3, 3))

    A4 = np.eye(4) + 0.5 * (np.eye(4, k=3) + np.eye(4, k=-3))

    def q4_g(y):
        return np.einsum("pi,ij,pj->p", y, A4, y)

    def q4_grad(y):
        return 2 * y @ A4

    def q4_hess(y):
        return np.broadcast_to(2 * A4, (y.shape[0], 4, 4)).copy()

    lin = (lambda r: np.asarray(r, dtype=float) / T, lambda r: _one(r) / T)
    quad = (lambda r: (np.asarray(r, dtype=float) / T) ** 2, lambda r: 2 * np.asarray(r, dtype=float) / T ** 2)
    sin = (lambda r: np.sin(np.pi * np.asarray(r, dtype=float) / (2 * T)),
           lambda r: np.pi / (2 * T) * np.cos(np.pi * np.asarray(r, dtype=float) / (2 * T)))
    return {
        "square_unit": _cyl(T, "square_unit", sq_g, sq_grad, sq_hess, [_one], [_zero]),
        "exp_linear": _cyl(T, "exp_linear", ex_g, ex_grad, ex_hess, [lin[0]], [lin[1]], (math.e, 1.0)),
        "product": _cyl(T, "product", pr_g, pr_grad, pr_hess, [_one, lin[0]], [_zero, lin[1]]),
        "cos_sum": _cyl(T, "cos_sum", cs_g, cs_grad, cs_hess, [_one, lin[0], quad[0]],
                        [_zero, lin[1], quad[1]], (1.0, 0.0)),
        "quad4": _cyl(T, "quad4", q4_g, q4_grad, q4_hess, [_one, lin[0], sin[0], quad[0]],
                      [_zero, lin[1], sin[1], quad[1]], (16.0, 2.0)),
    }


# -- strong-viscosity approximation ----------------------------------------------------

def fourier_basis(T: float, n: int) -> tuple[list, list]:
    """Kernels ``phi_k`` with ``int phi_k(x+T) d^- eta(x) = int eta e_k`` for the cosine basis ``e_k``.

    ``e_0 = 1/sqrt(T)``, ``e_k(x) = sqrt(2/T) cos(k pi (x + T) / T)`` on ``[-T, 0]``;
    ``phi_k(r) = int_r^T e_k(u - T) du`` vanishes at ``r = T``.
    """
    phis, dphis = [], []
    for k in range(n):
        if k == 0:
            phis.append(lambda r: (T - np.asarray(r, dtype=float)) / math.sqrt(T))
            dphis.append(lambda r: -_one(r) / math.sqrt(T))
        else:
            c = math.sqrt(2 / T)
            w = k * math.pi / T
            phis.append(lambda r, c=c, w=w: -c * np.sin(w * np.asarray(r, dtype=float)) / w)
            dphis.append(lambda r, c=c, w=w: -c * np.cos(w * np.asarray(r, dtype=float)))
    return phis, dphis


def basis_values(T: float, n: int, m: int) -> np.ndarray:
    """``e_k`` at the ``m + 1`` window nodes, shape ``(n, m + 1)``."""
    x = np.linspace(-T, 0.0, m + 1)
    E = [np.full_like(x, 1 / math.sqrt(T))]
    E += [math.sqrt(2 / T) * np.cos(k * math.pi * (x + T) / T) for k in range(1, n)]
    return np.array(E)


def projected_functional(G: PathFunctional, n: int, m: int = 256) -> CylindricalFunctional:
    """``G_n(eta) = G(sum_{k<n} <eta, e_k> e_k)`` as a cylindrical functional (no derivatives)."""
    T = G.T
    E = basis_values(T, n, m)
    phis, dphis = fourier_basis(T, n)

    def g(y):
        return G.batch(T, np.asarray(y) @ E)

    def nodiff(y):
        raise fn.MissingSupplier("projected functional has no analytic derivatives")
    return CylindricalFunctional(T, g, nodiff, nodiff, phis, dphis, f"proj{n}({G.name})", G.growth)


def default_width(n: int, c: float = 0.4) -> float:
    """Mollification width ``c / n``.

    The added coefficient variance ``n w_n^2 = c^2 / n`` decays at the same
    rate as the variance lost by truncating the expansion, and for ``c`` of
    this size it dominates, so ``U_n`` approaches its limit from one side.
    """
    return c / n


@dataclass
class ViscosityEntry:
    n: int
    value: float
    stderr: float
    C: float
    m: float
    equicontinuity_max: float
    C_terminal: float = float("nan")
    C_stderr: float = 0.0
    C_terminal_stderr: float = 0.0
    declared_ratio: float = float("nan")
    equicontinuity: dict = field(default_factory=dict)


@dataclass
class ViscositySequence:
    """``U_n(t, eta)`` along ``n`` with growth constants sharing one exponent ``m``."""

    entries: list
    limit: float
    limit_stderr: float
    converged: bool
    growth_bound: tuple

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def growth_C(self) -> np.ndarray:
        return np.array([e.C for e in self.entries])

    def growth_non_increasing(self, k: float = 3.0) -> bool:
        """``C`` for ``U_n`` and for ``G_n`` never rise by more than ``k`` combined standard errors."""
        for c, se in ((self.growth_C, np.array([e.C_stderr for e in self.entries])),
                      (np.array([e.C_terminal for e in self.entries]),
                       np.array([e.C_terminal_stderr for e in self.entries]))):
            if np.any(np.diff(c) > k * np.hypot(se[1:], se[:-1]) + 1e-12 * np.abs(c[1:])):
                return False
        return True

    def within_declared_bound(self) -> bool:
        """Every ``U_n`` and ``G_n`` on the design stays below the growth bound declared for ``G``."""
        return bool(all(e.declared_ratio <= 1.0 for e in self.entries))

    def to_table(self) -> str:
        lines = ["n,value,stderr,C,m,equicontinuity_max"]
        lines += [f"{e.n},{e.value:.10g},{e.stderr:.3g},{e.C:.6g},{e.m:.6g},{e.equicontinuity_max:.6g}"
                  for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> "ViscositySequence":
        rows = [r.split(",") for r in text.strip().splitlines()[1:]]
        ents = [ViscosityEntry(int(r[0]), *map(float, r[1:])) for r in rows]
        last = ents[-1]
        return cls(ents, last.value, last.stderr, True, (last.C, last.m))


def growth_design(T: float, m: int, radii=(0.5, 1.0, 2.0, 4.0, 8.0), seed: int = 11) -> list[GridPath]:
    rng = np.random.default_rng(seed)
    x = np.linspace(-T, 0.0, m + 1)
    out = []
    for R in radii:
        v = np.cos(math.pi * rng.uniform(0.5, 3) * x / T + rng.uniform(0, 2 * math.pi))
        out.append(GridPath(-T, 0.0, R * v / np.max(np.abs(v))))
    return out


def fit_growth(values: np.ndarray, norms: np.ndarray,
               stderrs: np.ndarray | None = None) -> tuple[np.ndarray, float, np.ndarray]:
    """Growth constants for a family of functions sampled on one design.

    ``values[n, j]`` is the ``n``-th member at the ``j``-th design path. The
    exponent ``m`` is the pooled within-member slope of ``log|U|`` against
    ``log(1 + |eta|)``, shared by all members as a uniform bound requires;
    ``C[n]`` is then the smallest constant with ``|U_n| <= C (1 + |eta|)^m``
    on the design. The third output is the standard error of each ``C[n]``
    inherited from the estimate at the maximizing design path.
    """
    V = np.atleast_2d(np.abs(values))
    se = np.zeros_like(V) if stderrs is None else np.atleast_2d(stderrs)
    y = np.log(np.maximum(V, 1e-300))
    x = np.log1p(norms)
    xc = x - x.mean()
    yc = y - y.mean(axis=1, keepdims=True)
    m = max(float(np.sum(yc * xc) / (V.shape[0] * np.sum(xc ** 2))), 0.0)
    ratio = V / (1 + norms) ** m
    arg = np.argmax(ratio, axis=1)
    rows = np.arange(V.shape[0])
    return ratio[rows, arg], m, se[rows, arg] / (1 + norms[arg]) ** m


def strong_viscosity_sequence(G: PathFunctional, t: float, eta: GridPath,
                              n_terms: Sequence[int] = tuple(range(1, 9)),
                              width: Callable[[int], float] = default_width,
                              deltas: Sequence[float] = tuple(2.0 ** -k for k in range(1, 7)),
                              tol: float = 1e-2) -> ViscositySequence:
    """Solutions ``U_n(t, eta)`` for the mollified Fourier projections ``G_n`` of ``G``.

    Each ``G_n`` is cylindrical in the first ``n`` coefficients; its Gaussian
    mollification of width ``w_n`` adds ``w_n^2 I`` to the coefficient
    covariance, so ``U_n`` comes from :func:`cylindrical_gaussian_solution`.
    Growth constants are fitted on :func:`growth_design` for ``U_n`` (column
    ``C``) and for the mollified ``G_n`` (``C_terminal``); the equicontinuity
    probe perturbs ``eta`` by ``delta`` times a fixed unit direction.
    """
    T, m = G.T, eta.n_steps
    design = growth_design(T, m)
    norms = np.array([p.sup_norm() for p in design])
    direction = np.cos(math.pi * np.linspace(-T, 0.0, m + 1) / T)
    rows, U_design, G_design, U_se, G_se = [], [], [], [], []
    for n in n_terms:
        Gn = projected_functional(G, n, m)
        w2 = width(n) ** 2
        est = cylindrical_gaussian_solution(Gn, t, eta, extra_var=w2)
        for tt, vals, ses in ((t, U_design, U_se), (T, G_design, G_se)):
            ests = [cylindrical_gaussian_solution(Gn, tt, p, extra_var=w2) for p in design]
            vals.append([e.value for e in ests])
            ses.append([e.std_error for e in ests])
        base = float(Gn.g(Gn.coordinates(eta.values[None, :]))[0])
        eq = {d: abs(float(Gn.g(Gn.coordinates(eta.values[None, :] + d * direction[None, :]))[0]) - base)
              for d in deltas}
        rows.append((n, est, eq))
    Cd, md = G.growth
    bound = Cd * (1 + norms ** md)
    ratios = np.maximum(np.max(np.abs(U_design) / bound, axis=1), np.max(np.abs(G_design) / bound, axis=1))
    C, mm, Cse = fit_growth(np.array(U_design), norms, np.array(U_se))
    CG, _, CGse = fit_growth(np.array(G_design), norms, np.array(G_se))
    entries = [ViscosityEntry(n, est.value, est.std_error, float(C[i]), mm, max(eq.values()),
                              float(CG[i]), float(Cse[i]), float(CGse[i]), float(ratios[i]), eq)
               for i, (n, est, eq) in enumerate(rows)]
    vals = np.array([e.value for e in entries])
    diffs = np.abs(np.diff(vals))
    scale = tol * max(1.0, abs(vals[-1]))
    converged = bool(diffs.size == 0 or diffs[-1] <= scale)
    if diffs.size >= 3 and diffs[-1] > diffs[-3] + scale:
        converged = False
    last = entries[-1]
    return ViscositySequence(entries, last.value, last.stderr, converged, G.growth)
