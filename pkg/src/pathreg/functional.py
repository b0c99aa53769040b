"""Path functionals, their Frechet derivative suppliers and the operator L.

A functional works on batches of windows: ``W`` has shape ``(n_paths, m + 1)``
and holds node values of paths on the uniform grid of ``[-T, 0]`` (the last
column is the present value ``eta(0)``). Scalar wrappers accept a
:class:`~pathreg.pathgrid.GridPath` and return the measure types of
:mod:`pathreg.pathgrid`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import detcalc
from .detcalc import EpsSchedule, Mode
from .pathgrid import CadPath, DiagonalMeasure, GridPath, SignedMeasure1D


G1_MAX_ENTRIES = 4_000_000


class PerpBatch(NamedTuple):
    """Perpendicular derivative for a batch: density rows plus atoms ``(x, masses)``."""

    density: np.ndarray | None = None
    atoms: tuple = ()


class SecondBatch(NamedTuple):
    """Second derivative components for a batch (rows are paths)."""

    lam: np.ndarray
    g4: np.ndarray | None = None
    g2: np.ndarray | None = None
    g3: np.ndarray | None = None
    g1: np.ndarray | None = None


class MissingSupplier(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


def as_batch(eta) -> tuple[np.ndarray, float]:
    """``(W, jump)`` for a GridPath, CadPath or a raw 1-d/2-d array."""
    if isinstance(eta, CadPath):
        return eta.path.values[None, :], eta.jump
    if isinstance(eta, GridPath):
        return eta.values[None, :], 0.0
    W = np.asarray(eta, dtype=float)
    return (W[None, :] if W.ndim == 1 else W), 0.0


@dataclass(frozen=True)
class PathFunctional:
    """A functional ``U(t, eta)`` on windows over ``[-T, 0]``.

    Only ``value`` is mandatory. The optional suppliers return, for a batch:
    ``time_derivative`` and ``vertical`` arrays of shape ``(n_paths,)``,
    ``perp`` a :class:`PerpBatch`, ``second`` a :class:`SecondBatch`.
    ``extension(t, W, jump)`` evaluates the functional on windows carrying a
    jump of size ``jump`` at 0. ``growth = (C, m)`` declares
    ``|U| <= C (1 + |eta|_inf^m)``.
    """

    T: float
    value: Callable
    time_derivative: Callable | None = None
    vertical: Callable | None = None
    perp: Callable | None = None
    second: Callable | None = None
    extension: Callable | None = None
    growth: tuple = (1.0, 2.0)
    name: str = "functional"
    time_dependent: bool = True

    def __call__(self, t: float, eta) -> float:
        W, jump = as_batch(eta)
        if jump:
            return float(self.extended(t, W, jump)[0])
        return float(np.asarray(self.value(t, W))[0])

    def batch(self, t: float, W: np.ndarray) -> np.ndarray:
        return np.asarray(self.value(t, W), dtype=float) * np.ones(W.shape[0])

    def extended(self, t: float, W: np.ndarray, jump: float) -> np.ndarray:
        if self.extension is None:
            raise MissingSupplier(f"{self.name}: no extension to paths with a jump at 0")
        return np.asarray(self.extension(t, W, jump), dtype=float) * np.ones(W.shape[0])

    def d_time(self, t: float, W: np.ndarray, h: float = 1e-5) -> np.ndarray:
        if self.time_derivative is not None:
            return np.asarray(self.time_derivative(t, W), dtype=float) * np.ones(W.shape[0])
        if not self.time_dependent:
            return np.zeros(W.shape[0])
        lo, hi = max(0.0, t - h), min(self.T, t + h)
        return (self.batch(hi, W) - self.batch(lo, W)) / (hi - lo)

    def d_vertical(self, t: float, W: np.ndarray) -> np.ndarray:
        if self.vertical is not None:
            return np.asarray(self.vertical(t, W), dtype=float) * np.ones(W.shape[0])
        return np.array([fd_vertical(self, t, w) for w in W])

    def perp_batch(self, t: float, W: np.ndarray) -> PerpBatch:
        if self.perp is None:
            raise MissingSupplier(f"{self.name}: no perpendicular derivative supplier")
        return self.perp(t, W)

    def second_batch(self, t: float, W: np.ndarray) -> SecondBatch:
        if self.second is None:
            raise MissingSupplier(f"{self.name}: no second derivative supplier")
        return self.second(t, W)

    def perp_measure(self, t: float, eta: GridPath) -> SignedMeasure1D:
        pb = self.perp_batch(t, eta.values[None, :])
        dens = None if pb.density is None else np.asarray(pb.density)[0]
        atoms = tuple((x, float(np.asarray(w).ravel()[0])) for x, w in pb.atoms)
        return SignedMeasure1D(-self.T, 0.0, atoms, dens)

    def second_measure(self, t: float, eta: GridPath) -> DiagonalMeasure:
        sb = self.second_batch(t, eta.values[None, :])

        def row(a):
            return None if a is None else np.asarray(a)[0]
        return DiagonalMeasure(self.T, float(np.asarray(sb.lam).ravel()[0]), row(sb.g2),
                               row(sb.g3), row(sb.g4), row(sb.g1))

    def __add__(self, other: "PathFunctional") -> "PathFunctional":
        return combine(self, other, 1.0, 1.0)

    def __rmul__(self, c: float) -> "PathFunctional":
        return combine(self, self, c, 0.0)


def _lin(a, b, x, y):
    if x is None and y is None:
        return None
    x = 0.0 if x is None else x
    y = 0.0 if y is None else y
    return a * x + b * y


def combine(U: PathFunctional, V: PathFunctional, a: float, b: float) -> PathFunctional:
    """The functional ``a U + b V`` with suppliers combined term by term."""
    def value(t, W):
        return a * U.batch(t, W) + b * V.batch(t, W)

    def dtime(t, W):
        return a * U.d_time(t, W) + b * V.d_time(t, W)

    def vert(t, W):
        return a * U.d_vertical(t, W) + b * V.d_vertical(t, W)

    def perp(t, W):
        p, q = U.perp_batch(t, W), V.perp_batch(t, W)
        atoms = tuple((x, a * np.asarray(w)) for x, w in p.atoms)
        atoms += tuple((x, b * np.asarray(w)) for x, w in q.atoms)
        return PerpBatch(_lin(a, b, p.density, q.density), atoms)

    def second(t, W):
        p, q = U.second_batch(t, W), V.second_batch(t, W)
        return SecondBatch(_lin(a, b, p.lam, q.lam), _lin(a, b, p.g4, q.g4),
                           _lin(a, b, p.g2, q.g2), _lin(a, b, p.g3, q.g3),
                           _lin(a, b, p.g1, q.g1))

    ext = None
    if U.extension is not None and V.extension is not None:
        def ext(t, W, j):
            return a * U.extended(t, W, j) + b * V.extended(t, W, j)
    C = abs(a) * U.growth[0] + abs(b) * V.growth[0]
    return PathFunctional(U.T, value, dtime, vert,
                          perp if U.perp and V.perp else None,
                          second if U.second and V.second else None, ext,
                          (C, max(U.growth[1], V.growth[1])), f"{a}*{U.name}+{b}*{V.name}")


def _dx(T: float, W: np.ndarray) -> float:
    return T / (W.shape[1] - 1)


def _zeros(W):
    return np.zeros(W.shape[0])


def present_square(T: float) -> PathFunctional:
    """``eta -> eta(0)^2``."""
    return PathFunctional(
        T, lambda t, W: W[:, -1] ** 2, lambda t, W: _zeros(W), lambda t, W: 2 * W[:, -1],
        lambda t, W: PerpBatch(), lambda t, W: SecondBatch(np.full(W.shape[0], 2.0)),
        lambda t, W, j: (W[:, -1] + j) ** 2, (1.0, 2.0), "present_square", False)


def present_value(T: float) -> PathFunctional:
    """``eta -> eta(0)``."""
    return PathFunctional(
        T, lambda t, W: W[:, -1], lambda t, W: _zeros(W), lambda t, W: np.ones(W.shape[0]),
        lambda t, W: PerpBatch(), lambda t, W: SecondBatch(_zeros(W)),
        lambda t, W, j: W[:, -1] + j, (1.0, 1.0), "present_value", False)


def path_integral(T: float) -> PathFunctional:
    """``eta -> int_{-T}^0 eta(x) dx`` (trapezoidal on the window nodes)."""
    def value(t, W):
        return np.trapezoid(W, dx=_dx(T, W), axis=1)
    return PathFunctional(
        T, value, lambda t, W: _zeros(W), lambda t, W: _zeros(W),
        lambda t, W: PerpBatch(np.ones_like(W)), lambda t, W: SecondBatch(_zeros(W)),
        lambda t, W, j: value(t, W), (T, 1.0), "path_integral", False)


def sup_norm(T: float) -> PathFunctional:
    """``eta -> max |eta|``; not differentiable, no suppliers."""
    def ext(t, W, j):
        return np.maximum(np.max(np.abs(W[:, :-1]), axis=1), np.abs(W[:, -1] + j))
    return PathFunctional(T, lambda t, W: np.max(np.abs(W), axis=1), extension=ext,
                          growth=(1.0, 1.0), name="sup_norm", time_dependent=False)


def abs_integral(T: float) -> PathFunctional:
    """``eta -> int |eta(x)| dx``, Lipschitz in the sup norm."""
    def value(t, W):
        return np.trapezoid(np.abs(W), dx=_dx(T, W), axis=1)
    return PathFunctional(T, value, extension=lambda t, W, j: value(t, W),
                          growth=(T, 1.0), name="abs_integral", time_dependent=False)


def constant(T: float, c: float) -> PathFunctional:
    return PathFunctional(
        T, lambda t, W: np.full(W.shape[0], float(c)), lambda t, W: _zeros(W),
        lambda t, W: _zeros(W), lambda t, W: PerpBatch(), lambda t, W: SecondBatch(_zeros(W)),
        lambda t, W, j: np.full(W.shape[0], float(c)), (abs(c), 0.0), f"constant({c})", False)


def present_square_solution(T: float) -> PathFunctional:
    """``(t, eta) -> eta(0)^2 + (T - t)``, the heat solution for terminal ``eta(0)^2``."""
    base = present_square(T)
    return PathFunctional(
        T, lambda t, W: W[:, -1] ** 2 + (T - t), lambda t, W: -np.ones(W.shape[0]),
        base.vertical, base.perp, base.second,
        lambda t, W, j: (W[:, -1] + j) ** 2 + (T - t), (1.0 + T, 2.0), "present_square_solution")


def _tail_integral(T: float, W: np.ndarray, t: float) -> np.ndarray:
    """``int_{-t}^0 eta(x) dx`` for each row, exact for the piecewise linear interpolant."""
    if t <= 0:
        return np.zeros(W.shape[0])
    m = W.shape[1] - 1
    dx = T / m
    cum = np.concatenate([np.zeros((W.shape[0], 1)),
                          np.cumsum(0.5 * (W[:, 1:] + W[:, :-1]) * dx, axis=1)], axis=1)
    x = np.linspace(-T, 0.0, m + 1)
    pos = -t
    j = min(int(np.floor((pos + T) / dx + 1e-9)), m - 1)
    frac = (pos - x[j]) / dx
    val_at = W[:, j] + frac * (W[:, j + 1] - W[:, j])
    partial = 0.5 * (W[:, j] + val_at) * frac * dx
    return cum[:, -1] - (cum[:, j] + partial)


def _value_at(T: float, W: np.ndarray, x: float) -> np.ndarray:
    """Linear interpolation of every row at ``x``, clamped to ``[-T, 0]``."""
    m = W.shape[1] - 1
    pos = min(max((x + T) / (T / m), 0.0), float(m))
    j = min(int(np.floor(pos)), m - 1)
    frac = pos - j
    return W[:, j] + frac * (W[:, j + 1] - W[:, j])


def path_integral_solution(T: float) -> PathFunctional:
    """``(t, eta) -> int_{-t}^0 eta + (T - t) eta(0)``, heat solution for ``int eta``."""
    def perp(t, W):
        m = W.shape[1] - 1
        x = np.linspace(-T, 0.0, m + 1)
        ind = (x >= -t - 1e-12).astype(float)
        return PerpBatch(np.broadcast_to(ind, W.shape).copy())
    return PathFunctional(
        T, lambda t, W: _tail_integral(T, W, t) + (T - t) * W[:, -1],
        lambda t, W: _value_at(T, W, -t) - W[:, -1],
        lambda t, W: np.full(W.shape[0], T - t), perp,
        lambda t, W: SecondBatch(_zeros(W)),
        lambda t, W, j: _tail_integral(T, W, t) + (T - t) * (W[:, -1] + j),
        (2 * T, 1.0), "path_integral_solution")


@dataclass(frozen=True)
class CylindricalFunctional:
    """``eta -> g(int phi_1(x+T) d^-eta(x), ..., int phi_N(x+T) d^-eta(x))``.

    The integrals are closed-interval deterministic forward integrals. For
    ``phi`` in C^2 their limit is ``phi(T) eta(0) - int eta(x) phi'(x+T) dx``,
    which is what the batch evaluator computes (trapezoidal in ``x``).
    ``g``, ``grad`` and ``hess`` act on arrays of shape ``(n, N)`` and return
    ``(n,)``, ``(n, N)`` and ``(n, N, N)``; ``phis``/``dphis`` act on arrays of
    times in ``[0, T]``.
    """

    T: float
    g: Callable
    grad: Callable
    hess: Callable
    phis: Sequence[Callable]
    dphis: Sequence[Callable]
    name: str = "cylindrical"
    growth: tuple = (1.0, 2.0)

    def __post_init__(self):
        if len(self.phis) < 1 or len(self.phis) != len(self.dphis):
            raise ValueError("need N >= 1 kernels with matching derivatives")

    @property
    def N(self) -> int:
        return len(self.phis)

    def _phi_matrices(self, m: int):
        x = np.linspace(-self.T, 0.0, m + 1)
        P = np.array([np.broadcast_to(p(x + self.T), x.shape) for p in self.phis])
        dP = np.array([np.broadcast_to(d(x + self.T), x.shape) for d in self.dphis])
        return x, P, dP

    def coordinates(self, W: np.ndarray, jump: float = 0.0) -> np.ndarray:
        m = W.shape[1] - 1
        x, P, dP = self._phi_matrices(m)
        dx = self.T / m
        w = np.full(m + 1, dx)
        w[0] = w[-1] = dx / 2
        return np.outer(W[:, -1] + jump, P[:, -1]) - (W * w) @ dP.T

    def terminal_weights(self) -> np.ndarray:
        return np.array([float(p(np.asarray(self.T))) for p in self.phis])

    def as_path_functional(self) -> PathFunctional:
        T = self.T

        def value(t, W):
            return self.g(self.coordinates(W))

        def vertical(t, W):
            return self.grad(self.coordinates(W)) @ self.terminal_weights()

        def perp(t, W):
            _, _, dP = self._phi_matrices(W.shape[1] - 1)
            return PerpBatch(-self.grad(self.coordinates(W)) @ dP)

        def second(t, W):
            _, P, dP = self._phi_matrices(W.shape[1] - 1)
            H = self.hess(self.coordinates(W))
            a = P[:, -1]
            lam = np.einsum("pij,i,j->p", H, a, a)
            g2 = -np.einsum("pij,ix,j->px", H, dP, a)
            g3 = -np.einsum("pij,i,jy->py", H, a, dP)
            g1 = None
            if H.shape[0] * dP.shape[1] ** 2 <= G1_MAX_ENTRIES:
                g1 = np.einsum("pij,ix,jy->pxy", H, dP, dP)
            return SecondBatch(lam, None, g2, g3, g1)

        return PathFunctional(T, value, lambda t, W: np.zeros(W.shape[0]), vertical, perp,
                              second, lambda t, W, j: self.g(self.coordinates(W, j)),
                              self.growth, self.name, False)


def eval_cylindrical(G: CylindricalFunctional, eta: GridPath,
                     sched: EpsSchedule | None = None) -> float:
    """Evaluate ``G`` through the regularized closed forward integrals."""
    ys = []
    for phi in G.phis:
        gpath = GridPath(eta.t_start, eta.t_end,
                         np.broadcast_to(phi(eta.times + G.T), eta.times.shape))
        res = detcalc.forward_integral_det(gpath, eta, Mode.CLOSED, sched)
        if not res.converged:
            raise NonConvergence(f"forward integral not converged (gap {res.cauchy_gap:.3g})")
        ys.append(res.value)
    return float(np.asarray(G.g(np.array([ys])))[0])


def derivatives_cylindrical(G: CylindricalFunctional, eta: GridPath):
    """``(vertical, perpendicular measure, second derivative measure)`` of ``G`` at ``eta``."""
    U = G.as_path_functional()
    return U.d_vertical(0.0, eta.values[None, :])[0], U.perp_measure(0.0, eta), U.second_measure(0.0, eta)


def default_bump(eta) -> float:
    W, jump = as_batch(eta)
    return 1e-4 * (1.0 + abs(W[0, -1] + jump))


def fd_vertical(U: PathFunctional, t: float, eta, h: float | None = None) -> float:
    """Central difference of ``U`` along a jump of size ``h`` at 0."""
    W, jump = as_batch(eta)
    h = default_bump(eta) if h is None else h
    up = U.extended(t, W[:1], jump + h)[0]
    dn = U.extended(t, W[:1], jump - h)[0]
    return float((up - dn) / (2 * h))


def fd_directional(U: PathFunctional, t: float, eta: GridPath, zeta: np.ndarray,
                   h: float = 1e-5) -> float:
    """Central difference of ``U`` along a continuous direction ``zeta``."""
    W = eta.values[None, :]
    z = np.asarray(zeta, dtype=float)[None, :]
    return float((U.batch(t, W + h * z)[0] - U.batch(t, W - h * z)[0]) / (2 * h))


def analytic_directional(U: PathFunctional, t: float, eta: GridPath, zeta: np.ndarray) -> float:
    """``D^{delta_0} U zeta(0) + int zeta dD^perp U`` from the suppliers."""
    zeta = np.asarray(zeta, dtype=float)
    mu = U.perp_measure(t, eta)
    zpath = eta.with_values(zeta)
    return float(U.d_vertical(t, eta.values[None, :])[0] * zeta[-1]
                 + mu.integrate(lambda x: zpath(x)))


def _shifted_window(W: np.ndarray, j: int) -> np.ndarray:
    """Rows ``y -> eta(x_j + y)`` on the window grid, clamped at ``-T``."""
    m = W.shape[1] - 1
    lag = m - j
    if lag == 0:
        return W
    pad = np.repeat(W[:, :1], lag, axis=1)
    return np.concatenate([pad, W[:, :m + 1 - lag]], axis=1)


@dataclass
class OperatorTerms:
    time_term: float
    perp_term: float
    second_term: float
    perp_result: detcalc.IntegralResult | None = None
    frozen_time: bool = False
    strong_existence: detcalc.StrongExistenceReport | None = None

    @property
    def total(self) -> float:
        return self.time_term + self.perp_term + self.second_term


def unit_sigma(t, W):
    return np.ones(W.shape[0])


def operator_L_terms(U: PathFunctional, t: float, eta: GridPath, sigma: Callable = unit_sigma,
                     sched: EpsSchedule | None = None, frozen_time: bool = False,
                     check_strong: bool = False) -> OperatorTerms:
    """The three terms of ``L U(t, eta)``.

    The perpendicular term is the forward integral of ``D^perp U(t, eta)``
    restricted to ``[-t, 0]``; the second-order term is
    ``1/2 [lam(t) sigma^2(t, eta) + int_{-t}^0 g4(t+x; x) sigma^2(t+x, eta(x+.)) dx]``
    with the second derivative taken at the shifted time ``t + x`` unless
    ``frozen_time`` is set (in which case ``D^2 U(t, eta)`` is used and the
    result is flagged).
    """
    W = eta.values[None, :]
    m = eta.n_steps
    dx = eta.dt
    time_term = float(U.d_time(t, W)[0])
    perp_term, perp_res, strong = 0.0, None, None
    i = eta.node_index(-t) if t > 0 else m
    if t > 0:
        mu = detcalc.restrict_measure(U.perp_measure(t, eta), -t)
        if not mu.is_zero():
            sub = eta.restrict(-t, 0.0)
            perp_res = detcalc.forward_integral_measure(mu, sub, sched or EpsSchedule.default(sub))
            if not perp_res.converged:
                raise NonConvergence(
                    f"perpendicular integral not converged (gap {perp_res.cauchy_gap:.3g})")
            perp_term = perp_res.value
            if check_strong:
                strong = detcalc.gamma_strong_existence_check(
                    lambda s, g: U.perp_measure(s, g), eta, sched)
                if not strong.passed:
                    raise NonConvergence("strong existence diagnostic failed")
    sb = U.second_batch(t, W)
    sig2_now = float(sigma(t, W)[0]) ** 2
    second = float(np.asarray(sb.lam)[0]) * sig2_now
    if sb.g4 is not None and t > 0:
        vals = []
        for j in range(i, m + 1):
            xj = -T_of(eta) + j * dx
            if frozen_time:
                g4 = np.asarray(sb.g4)[0, j]
            else:
                later = U.second_batch(t + xj, W)
                g4 = 0.0 if later.g4 is None else np.asarray(later.g4)[0, j]
            s2 = float(sigma(t + xj, _shifted_window(W, j))[0]) ** 2
            vals.append(g4 * s2)
        second += float(np.trapezoid(vals, dx=dx))
    return OperatorTerms(time_term, perp_term, 0.5 * second, perp_res, frozen_time, strong)


def T_of(eta: GridPath) -> float:
    return eta.t_end - eta.t_start


def operator_L(U: PathFunctional, t: float, eta: GridPath, sigma: Callable = unit_sigma,
               sched: EpsSchedule | None = None, **kw) -> float:
    return operator_L_terms(U, t, eta, sigma, sched, **kw).total


@dataclass
class HorizontalReport:
    first_order_rhs: float | None
    second_order_rhs: float | None
    diagonal_correction: float | None
    fd_estimate: float | None = None
    results: dict = field(default_factory=dict)


def horizontal_identity_check(U: PathFunctional, eta: GridPath,
                              sched: EpsSchedule | None = None, t: float = 0.0,
                              fd_eps: float | None = None) -> HorizontalReport:
    """Right-hand sides of the two horizontal-derivative identities at ``eta``.

    First order: closed backward integral of the density of ``D^perp U``.
    Second order: backward measure integral of ``D^perp U`` minus half the
    Stieltjes integral of the diagonal density against ``[eta]``. When
    ``fd_eps`` is given, the shift quotient ``(U(eta) - U(eta(. - eps))) / eps``
    is reported alongside; nothing asserts agreement.
    """
    sched = sched or EpsSchedule.default(eta)
    results = {}
    mu = U.perp_measure(t, eta)
    first = None
    if not mu.atoms:
        dens = mu.density if mu.density is not None else np.zeros(eta.values.size)
        res = detcalc.backward_integral_det(eta.with_values(dens), eta, Mode.CLOSED, sched)
        results["first_order"] = res
        if not res.converged:
            raise NonConvergence("backward integral not converged")
        first = res.value
    back = detcalc.backward_integral_measure(mu, eta, sched)
    results["backward_measure"] = back
    qv, qv_res = detcalc.quadratic_variation_det(eta, sched, full=True)
    results["quadratic_variation"] = qv_res
    sb = U.second_batch(t, eta.values[None, :]) if U.second is not None else None
    corr = 0.0
    if sb is not None and sb.g4 is not None:
        g4 = np.asarray(sb.g4)[0]
        corr = float(np.dot(g4[:-1], np.diff(qv.values)))
    second = back.value - 0.5 * corr
    fd = None
    if fd_eps is not None:
        from .pathgrid import shift_member
        fd = (U(t, eta) - U(t, shift_member(eta, fd_eps))) / fd_eps
    return HorizontalReport(first, second, corr, fd, results)


def growth_ok(U: PathFunctional, values: np.ndarray, W: np.ndarray) -> np.ndarray:
    C, m = U.growth
    return np.abs(values) <= C * (1.0 + np.max(np.abs(W), axis=1) ** m) * (1 + 1e-12)


def fd_second_vertical(U: PathFunctional, t: float, W: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central second difference of ``U`` along a jump at 0, one value per row."""
    h = 1e-4 * (1.0 + np.abs(W[:, -1])) if h is None else np.full(W.shape[0], h)
    out = np.empty(W.shape[0])
    for r in range(W.shape[0]):
        w = W[r:r + 1]
        up, mid, dn = (U.extended(t, w, s * h[r])[0] for s in (1.0, 0.0, -1.0))
        out[r] = (up - 2 * mid + dn) / h[r] ** 2
    return out


def with_fd_derivatives(U: PathFunctional, time_step: float = 1e-5) -> PathFunctional:
    """``U`` with time and vertical derivatives (first and second) replaced by finite differences.

    Perpendicular and diagonal parts still come from the suppliers, since no
    finite-difference estimator of those measures is offered.
    """
    def second(t, W):
        lam = fd_second_vertical(U, t, W)
        if U.second is None:
            return SecondBatch(lam)
        return U.second(t, W)._replace(lam=lam)

    def dtime(t, W):
        lo, hi = max(0.0, t - time_step), min(U.T, t + time_step)
        return (U.batch(hi, W) - U.batch(lo, W)) / (hi - lo)

    return replace(U, time_derivative=dtime if U.time_dependent else None, vertical=None,
                   second=second, name=f"fd({U.name})")
