"""Deterministic calculus via regularizations on grid paths.

All regularization parameters are integer multiples ``k`` of the grid step,
so the shifts ``s -> s +/- eps`` land on nodes and every difference quotient
is exact. The integral over ``s`` of a quotient is a left-point rectangle sum
``sum_i h(s_i) * dt``; with this rule the telescoping identities (e.g. the
closed forward integral of ``1`` against ``f`` is ``f(b)``) hold exactly for
every ``eps`` and at ``eps = dt`` the forward integral *is* the left-point
(Ito) Riemann sum.

Divergence is reported through :class:`IntegralResult`, never raised.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pathgrid import GridPath, SignedMeasure1D, k_eta_lattice, _check_same_grid

OVERFLOW_GUARD = 1e150


class Mode(enum.Enum):
    CLOSED = "closed"
    HALF_OPEN = "half_open"


@dataclass(frozen=True)
class EpsSchedule:
    """Decreasing regularization parameters, each a multiple of the grid step."""

    eps: tuple
    tol_cauchy: float = 1e-3
    extrapolate: bool = False

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("schedule entries must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("schedule must be strictly decreasing")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def from_multiples(cls, dt: float, multiples: Sequence[int] = (16, 8, 4, 2, 1),
                       **kw) -> "EpsSchedule":
        return cls(tuple(k * dt for k in multiples), **kw)

    @classmethod
    def default(cls, path: GridPath, **kw) -> "EpsSchedule":
        """``eps_k = 2^k dt`` for ``k = K..0`` with ``eps_max <= (b - a) / 8``."""
        span = path.t_end - path.t_start
        K = max(0, int(math.floor(math.log2(span / 8 / path.dt) + 1e-9)))
        return cls.from_multiples(path.dt, [2 ** k for k in range(K, -1, -1)], **kw)

    def steps(self, dt: float) -> list[int]:
        out = []
        for e in self.eps:
            k = int(round(e / dt))
            if abs(k * dt - e) > 1e-7 * e:
                raise ValueError(f"eps={e} is not a multiple of the grid step {dt}")
            if k < 1:
                raise ValueError("schedule finer than the grid")
            out.append(k)
        return out


@dataclass
class IntegralResult:
    value: float
    converged: bool
    cauchy_gap: float
    per_eps: list
    notes: dict = field(default_factory=dict)

    def to_text(self) -> str:
        return json.dumps({"value": self.value, "converged": self.converged,
                           "cauchy_gap": self.cauchy_gap,
                           "per_eps": [[e, v] for e, v in self.per_eps],
                           **({"notes": self.notes} if self.notes else {})})

    @classmethod
    def from_text(cls, text: str) -> "IntegralResult":
        d = json.loads(text)
        return cls(d["value"], d["converged"], d["cauchy_gap"],
                   [tuple(p) for p in d["per_eps"]], d.get("notes", {}))


def summarize(per_eps: list, sched: EpsSchedule, notes: dict | None = None) -> IntegralResult:
    """Turn an eps-trace (coarse to fine) into a limit estimate."""
    vals = [v for _, v in per_eps]
    last = vals[-1]
    if len(vals) < 2:
        gap = math.nan
    else:
        gap = abs(last - vals[-2]) / max(1.0, abs(last))
    value = last
    if sched.extrapolate and len(vals) >= 2:
        (e0, v0), (e1, v1) = per_eps[-2], per_eps[-1]
        value = v1 - e1 * (v0 - v1) / (e0 - e1)
    finite = all(np.isfinite(v) and abs(v) < OVERFLOW_GUARD for v in vals)
    converged = bool(finite and gap <= sched.tol_cauchy)
    return IntegralResult(float(value), converged, float(gap), list(per_eps), dict(notes or {}))


def _zero_left_padded(f: np.ndarray, k: int) -> np.ndarray:
    """``f`` on nodes ``-k .. n + k``: zero to the left, ``f(b)`` to the right."""
    return np.concatenate([np.zeros(k), f, np.full(k, f[-1])])


def _forward_sum(g: np.ndarray, f: np.ndarray, k: int, mode: Mode) -> float:
    n = f.size - 1
    F = _zero_left_padded(f, k)
    # node i of f sits at F[i + k]
    q = (F[2 * k:2 * k + n] - F[k:k + n]) / k
    total = float(np.dot(g[:n], q))
    if mode is Mode.CLOSED:
        # s in [a - eps, a): g_J = g(a), f_Jbar(s) = 0
        total += g[0] * float(np.sum(F[k:2 * k])) / k
    return total


def _backward_sum(g: np.ndarray, f: np.ndarray, k: int, mode: Mode) -> float:
    n = f.size - 1
    F = _zero_left_padded(f, k)
    q = (F[k:k + n] - F[0:n]) / k
    total = float(np.dot(g[:n], q))
    if mode is Mode.CLOSED:
        # s in [b, b + eps): g_J = g(b), f_Jbar(s) = f(b)
        total += g[-1] * float(np.sum(F[k + n:2 * k + n] - F[n:n + k])) / k
    return total


def forward_integral_det(g: GridPath, f: GridPath, mode: Mode = Mode.HALF_OPEN,
                         sched: EpsSchedule | None = None) -> IntegralResult:
    """Deterministic forward integral of ``g`` against ``f`` on ``[a, b]`` or ``]a, b]``."""
    _check_same_grid(g, f)
    sched = sched or EpsSchedule.default(f)
    per = [(e, _forward_sum(g.values, f.values, k, mode))
           for e, k in zip(sched.eps, sched.steps(f.dt))]
    return summarize(per, sched)


def backward_integral_det(g: GridPath, f: GridPath, mode: Mode = Mode.HALF_OPEN,
                          sched: EpsSchedule | None = None) -> IntegralResult:
    """Deterministic backward integral, quotient ``(f(s) - f(s - eps)) / eps``."""
    _check_same_grid(g, f)
    sched = sched or EpsSchedule.default(f)
    per = [(e, _backward_sum(g.values, f.values, k, mode))
           for e, k in zip(sched.eps, sched.steps(f.dt))]
    return summarize(per, sched)


def _density_on(mu: SignedMeasure1D, f: GridPath) -> np.ndarray | None:
    if mu.density is None:
        return None
    if mu.density.size == f.values.size:
        return mu.density
    return mu.density_at(f.times)


def _measure_quotient(mu: SignedMeasure1D, f: GridPath, k: int, forward: bool) -> tuple[float, float]:
    """One regularized approximant; returns ``(total, contribution of an atom at a)``."""
    n = f.n_steps
    F = _zero_left_padded(f.values, k)
    if forward:
        q = (F[2 * k:2 * k + n + 1] - F[k:k + n + 1]) / k
    else:
        q = (F[k:k + n + 1] - F[0:n + 1]) / k
    eps = k * f.dt
    total = 0.0
    dens = _density_on(mu, f)
    if dens is not None:
        total += float(np.dot(dens[:n], q[:n]))
    at_a = 0.0
    for x, w in mu.atoms:
        if forward:
            qa = (_fjbar(f, x + eps) - _fjbar(f, x)) / eps
        else:
            qa = (_fjbar(f, x) - _fjbar(f, x - eps)) / eps
        total += w * qa
        if abs(x - f.t_start) <= 1e-9 * max(1.0, abs(x)):
            at_a += w * qa
    return total, at_a


def _fjbar(f: GridPath, s: float) -> float:
    if s < f.t_start - 1e-12:
        return 0.0
    return float(np.interp(s, f.times, f.values))


def regularized_measure_integral(mu: SignedMeasure1D, f: GridPath, k: int,
                                 forward: bool = True) -> float:
    """The approximant of the measure integral at ``eps = k * dt`` (no limit taken)."""
    return _measure_quotient(mu, f, k, forward)[0]


def forward_integral_measure(mu: SignedMeasure1D, f: GridPath,
                             sched: EpsSchedule | None = None) -> IntegralResult:
    """Forward integral of a finite signed measure against ``f`` on ``[a, b]``.

    The quotient is integrated over the closed interval, so an atom at ``a``
    contributes; its share is reported in ``notes['atom_at_a']``.
    """
    _check_domain(mu, f)
    sched = sched or EpsSchedule.default(f)
    per, at_a = [], 0.0
    for e, k in zip(sched.eps, sched.steps(f.dt)):
        v, at_a = _measure_quotient(mu, f, k, True)
        per.append((e, v))
    return summarize(per, sched, {"atom_at_a": at_a} if at_a else None)


def backward_integral_measure(mu: SignedMeasure1D, f: GridPath,
                              sched: EpsSchedule | None = None) -> IntegralResult:
    _check_domain(mu, f)
    sched = sched or EpsSchedule.default(f)
    per, at_a = [], 0.0
    for e, k in zip(sched.eps, sched.steps(f.dt)):
        v, at_a = _measure_quotient(mu, f, k, False)
        per.append((e, v))
    return summarize(per, sched, {"atom_at_a": at_a} if at_a else None)


def _check_domain(mu: SignedMeasure1D, f: GridPath):
    tol = 1e-9 * max(1.0, abs(f.t_start), abs(f.t_end))
    for x, _ in mu.atoms:
        if x < f.t_start - tol or x > f.t_end + tol:
            raise ValueError(f"atom at {x} outside the path domain")
    if abs(mu.a - f.t_start) > tol or abs(mu.b - f.t_end) > tol:
        raise ValueError("measure and path live on different intervals")


def _covariation_array(f: np.ndarray, g: np.ndarray, k: int, i0: int) -> np.ndarray:
    """``(1/eps) int_0^x df dg`` at every node, nodes past ``b`` clamped."""
    n = f.size - 1
    F = np.concatenate([f, np.full(k, f[-1])])
    G = np.concatenate([g, np.full(k, g[-1])])
    prod = (F[k:k + n] - F[:n]) * (G[k:k + n] - G[:n]) / k
    cum = np.concatenate([[0.0], np.cumsum(prod)])
    return cum - cum[i0]


def covariation_det(f: GridPath, g: GridPath, sched: EpsSchedule | None = None,
                    full: bool = False):
    """Deterministic covariation ``x -> [f, g](x)``; needs ``0`` as a grid node.

    Returns the finest-``eps`` path. With ``full=True`` also returns the
    :class:`IntegralResult` of the terminal value ``[f, g](b)``.
    """
    _check_same_grid(f, g)
    if not f.t_start <= 0.0 <= f.t_end:
        raise ValueError("covariation needs 0 in the domain")
    i0 = f.node_index(0.0)
    sched = sched or EpsSchedule.default(f)
    per, arrs = [], []
    for e, k in zip(sched.eps, sched.steps(f.dt)):
        c = _covariation_array(f.values, g.values, k, i0)
        arrs.append(c)
        per.append((e, float(c[-1] if i0 < f.n_steps else c[0])))
    path = f.with_values(arrs[-1])
    if full:
        return path, summarize(per, sched)
    return path


def quadratic_variation_det(f: GridPath, sched: EpsSchedule | None = None, full: bool = False):
    return covariation_det(f, f, sched, full)


@dataclass
class StrongExistenceReport:
    times: np.ndarray
    limit_values: np.ndarray
    limit_converged: np.ndarray
    envelope: np.ndarray
    envelope_integral: float
    passed: bool
    lattice: list


def gamma_strong_existence_check(G: Callable, eta: GridPath, sched: EpsSchedule | None = None,
                                 m: int = 8, n_times: int = 16,
                                 eps_max: float = 1.0) -> StrongExistenceReport:
    """Numerical surrogate of strong existence for ``t -> int_{]-t,0]} G_dx(t, eta) d^- eta``.

    ``G(t, path)`` returns a :class:`SignedMeasure1D` on ``[-T, 0]``. Part (a)
    checks the limit at ``n_times`` grid times; part (b) evaluates the
    regularized integrals over the lattice of left shifts of ``eta`` and the
    regularization lattice, and reports the pointwise envelope together with
    its trapezoidal time integral.
    """
    T = eta.t_end - eta.t_start
    sched = sched or EpsSchedule.default(eta)
    idx = np.unique(np.linspace(0, eta.n_steps, n_times + 1).round().astype(int))
    times = idx * eta.dt
    reg_steps = sorted(set(sched.steps(eta.dt)) | {
        max(1, int(round(e / eta.dt))) for e in np.linspace(0, min(eps_max, T), m + 1)[1:]})
    shifts = k_eta_lattice(eta, min(eps_max, 1.0), m)
    limits, conv, env = [], [], []
    for t, i in zip(times, idx):
        if i == 0:
            limits.append(0.0), conv.append(True), env.append(0.0)
            continue
        sub = eta.restrict(-t, 0.0)
        res = forward_integral_measure(_restrict(G(t, eta), -t), sub, sched)
        limits.append(res.value)
        conv.append(res.converged)
        worst = abs(res.value)
        for _, gam in shifts:
            mu = _restrict(G(t, gam), -t)
            gsub = gam.restrict(-t, 0.0)
            for k in reg_steps:
                v = regularized_measure_integral(mu, gsub, k)
                if not np.isfinite(v) or abs(v) > OVERFLOW_GUARD:
                    raise OverflowError(f"regularized integral diverged at t={t}")
                worst = max(worst, abs(v))
        env.append(worst)
    env = np.array(env)
    integral = float(np.trapezoid(env, times))
    ok = bool(all(conv) and np.isfinite(integral))
    return StrongExistenceReport(times, np.array(limits), np.array(conv), env, integral,
                                 ok, [e for e, _ in shifts])


def _restrict(mu: SignedMeasure1D, lo: float) -> SignedMeasure1D:
    """Restriction of ``mu`` to ``[lo, b]``, density resampled on the sub-interval nodes."""
    if abs(lo - mu.a) < 1e-12:
        return mu
    atoms = tuple((x, w) for x, w in mu.atoms if x >= lo - 1e-12)
    dens = None
    if mu.density is not None:
        h = (mu.b - mu.a) / (mu.density.size - 1)
        n = max(1, int(round((mu.b - lo) / h)))
        dens = mu.density_at(np.linspace(lo, mu.b, n + 1))
    return SignedMeasure1D(lo, mu.b, atoms, dens)


restrict_measure = _restrict
