"""Stochastic calculus via regularizations on simulated path ensembles.

Ensembles are generated in fixed-size blocks of paths; block ``b`` draws from
the substream ``SeedSequence(seed, spawn_key=(b,))``, so path ``i`` depends
only on ``(seed, i)`` and never on how many workers produced it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .detcalc import EpsSchedule
from .functional import PathFunctional, unit_sigma
from .pathgrid import DiagonalMeasure, GridPath, window_matrix

BLOCK = 256
WORKERS_ENV = "PATHREG_WORKERS"


def default_workers() -> int:
    """Worker count from ``PATHREG_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Generator of one block; ``stream`` separates auxiliary draws so rows stay prefix-stable."""
    key = (int(block),) if stream == 0 else (int(block), int(stream))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


# -- process models ---------------------------------------------------------

@dataclass(frozen=True)
class BrownianMotion:
    x0: float = 0.0
    key = "brownian"


@dataclass(frozen=True)
class BrownianPlusSmoothDrift:
    """``X_t = x0 + W_t + drift(t) - drift(0)``."""

    drift: Callable = staticmethod(lambda t: np.sin(2 * np.pi * t) / 4)
    x0: float = 0.0
    key = "brownian_drift"


@dataclass(frozen=True)
class HolderMix:
    """``W + weight * B^H`` with ``B^H`` a fractional Brownian motion, ``H > 1/2``."""

    hurst: float = 0.8
    weight: float = 1.0
    x0: float = 0.0
    key = "holder_mix"

    def __post_init__(self):
        if not 0.5 < self.hurst < 1.0:
            raise ValueError("HolderMix needs 1/2 < H < 1")


@dataclass(frozen=True)
class PathDependentSDE:
    """``dX = sigma(t, history) dW`` by explicit Euler.

    ``sigma(t, H)`` receives the batch history ``H`` of shape
    ``(n_paths, i + 1)`` (node values up to the current time) and returns
    ``(n_paths,)``. :func:`pathreg.pathgrid.window_matrix` turns a history
    into clamped windows.
    """

    sigma: Callable = staticmethod(lambda t, H: np.ones(H.shape[0]))
    x0: float = 0.0
    guard: float = 1e6
    key = "path_sde"


def fgn_circulant(n: int, hurst: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` rows of unit-step fractional Gaussian noise of length ``n`` (Davies-Harte)."""
    k = np.arange(n + 1, dtype=float)
    gamma = 0.5 * ((k + 1) ** (2 * hurst) - 2 * k ** (2 * hurst) + np.abs(k - 1) ** (2 * hurst))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    lam[lam < 0] = 0.0
    M = row.size
    g = rng.standard_normal((size, 2, M))
    z = g[:, 0] + 1j * g[:, 1]
    out = np.fft.fft(np.sqrt(lam / M) * z, axis=1)
    return out.real[:, :n]


@dataclass(frozen=True)
class Grid:
    T: float
    n_steps: int

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Simulated paths ``values[i]`` on ``grid`` and their driving increments ``dW[i]``."""

    seed: int
    grid: Grid
    model: object
    values: np.ndarray
    dW: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def path(self, i: int) -> GridPath:
        return GridPath(0.0, self.grid.T, self.values[i])

    def windows(self, i: int, width_steps: int | None = None) -> np.ndarray:
        """Clamped windows of all paths at node ``i``."""
        return window_matrix(self.values, i, width_steps or self.grid.n_steps)


def _simulate_block(model, grid: Grid, seed: int, block: int, size: int):
    rng = block_rng(seed, block)
    n, dt = grid.n_steps, grid.dt
    dW = rng.standard_normal((size, n)) * math.sqrt(dt)
    if isinstance(model, PathDependentSDE):
        X = np.empty((size, n + 1))
        X[:, 0] = model.x0
        for i in range(n):
            s = np.asarray(model.sigma(i * dt, X[:, :i + 1]), dtype=float)
            if not np.all(np.isfinite(s)) or np.any(np.abs(s) > model.guard):
                raise FloatingPointError(f"sigma not finite/bounded at t={i * dt}")
            X[:, i + 1] = X[:, i] + s * dW[:, i]
        return X, dW
    X = np.concatenate([np.zeros((size, 1)), np.cumsum(dW, axis=1)], axis=1)
    if isinstance(model, BrownianPlusSmoothDrift):
        t = grid.times
        X = X + (np.asarray(model.drift(t), dtype=float) - float(model.drift(0.0)))
    elif isinstance(model, HolderMix):
        fgn = fgn_circulant(n, model.hurst, block_rng(seed, block, 1), size) * dt ** model.hurst
        fbm = np.concatenate([np.zeros((size, 1)), np.cumsum(fgn, axis=1)], axis=1)
        X = X + model.weight * fbm
    elif not isinstance(model, BrownianMotion):
        raise TypeError(f"unknown model {model!r}")
    return X + model.x0, dW


def simulate(model, grid: Grid, seed: int, n_paths: int, workers: int | None = None) -> PathEnsemble:
    """Reproducible ensemble of ``n_paths`` paths of ``model`` on ``grid``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    blocks = [(b, min(BLOCK, n_paths - b * BLOCK)) for b in range(math.ceil(n_paths / BLOCK))]
    workers = workers or default_workers()

    def run(bs):
        return _simulate_block(model, grid, seed, *bs)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(bs) for bs in blocks]
    X = np.concatenate([p[0] for p in parts])
    dW = np.concatenate([p[1] for p in parts])
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("non-finite values in simulated paths")
    return PathEnsemble(seed, grid, model, X, dW)


# -- convergence diagnostics --------------------------------------------------

@dataclass
class ConvergenceInProbability:
    """Fractions of paths whose approximants deviate by more than ``delta``.

    ``terminal[e, d]`` compares the value at ``T`` for schedule entry ``e``
    with the reference (finest) entry; ``ucp[e, d]`` uses ``sup_t`` instead.
    ``successive*`` compare each entry with the next finer one.
    """

    eps: list
    reference_eps: float
    deltas: list
    terminal: np.ndarray
    ucp: np.ndarray
    successive: np.ndarray
    successive_ucp: np.ndarray
    level: float = 0.05

    @property
    def certified(self) -> bool:
        return bool(self.successive.shape[0] and self.successive[-1, 0] < self.level)

    @property
    def ucp_certified(self) -> bool:
        return bool(self.successive_ucp.shape[0] and self.successive_ucp[-1, 0] < self.level)


def _diagnose(arrays: list, eps: list, scale: float,
              rel_deltas: Sequence[float] = (1e-2, 1e-3)) -> ConvergenceInProbability:
    deltas = [d * scale for d in rel_deltas]
    ref = arrays[-1]
    term, ucp, succ, succ_u = [], [], [], []
    for j, A in enumerate(arrays):
        dterm = np.abs(A[:, -1] - ref[:, -1])
        dsup = np.max(np.abs(A - ref), axis=1)
        term.append([np.mean(dterm > d) for d in deltas])
        ucp.append([np.mean(dsup > d) for d in deltas])
        if j + 1 < len(arrays):
            B = arrays[j + 1]
            succ.append([np.mean(np.abs(A[:, -1] - B[:, -1]) > d) for d in deltas])
            succ_u.append([np.mean(np.max(np.abs(A - B), axis=1) > d) for d in deltas])
    shape = (0, len(deltas))
    return ConvergenceInProbability(
        list(eps), eps[-1], deltas, np.array(term), np.array(ucp),
        np.array(succ) if succ else np.zeros(shape), np.array(succ_u) if succ_u else np.zeros(shape))


def _scale(A: np.ndarray) -> float:
    s = float(np.median(np.abs(A[:, -1])))
    return s if s > 0 else 1.0


def _padded(X: np.ndarray, k: int) -> np.ndarray:
    return np.concatenate([X, np.repeat(X[:, -1:], k, axis=1)], axis=1)


def forward_paths(Y: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    """``A_t = sum_{s_i < t} Y_i (X_{i+k} - X_i) / k`` at every node, ``X`` clamped past ``T``."""
    n = X.shape[1] - 1
    Xp = _padded(X, k)
    incr = (Xp[:, k:k + n] - X[:, :n]) / k
    return np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(Y[:, :n] * incr, axis=1)], axis=1)


def covariation_paths(X: np.ndarray, Y: np.ndarray, k: int) -> np.ndarray:
    n = X.shape[1] - 1
    Xp, Yp = _padded(X, k), _padded(Y, k)
    prod = (Xp[:, k:k + n] - X[:, :n]) * (Yp[:, k:k + n] - Y[:, :n]) / k
    return np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(prod, axis=1)], axis=1)


def _schedule(ens: PathEnsemble, sched: EpsSchedule | None) -> tuple[EpsSchedule, list[int]]:
    sched = sched or EpsSchedule.from_multiples(ens.grid.dt)
    return sched, sched.steps(ens.grid.dt)


@dataclass
class ForwardIntegralSP:
    """Forward integral per path at the finest ``eps`` and its diagnostics.

    ``paths[:, j]`` is ``A_{t_j}``; the last column is the proper value (the
    regularized quotient over all of ``[0, T]``). ``improper`` extrapolates
    ``A_t`` for ``t -> T-`` from the last 5% of the grid; paths whose fit is
    not Cauchy are flagged and withheld (NaN).
    """

    times: np.ndarray
    paths: np.ndarray
    terminal_per_eps: list
    diagnostics: ConvergenceInProbability
    mode: str
    improper: np.ndarray | None = None
    improper_stderr: np.ndarray | None = None
    improper_flagged: np.ndarray | None = None

    @property
    def proper(self) -> np.ndarray:
        return self.paths[:, -1]

    @property
    def open_paths(self) -> np.ndarray:
        return self.paths[:, :-1]


def _improper(A: np.ndarray, times: np.ndarray, frac: float = 0.05, tol: float = 5e-2):
    n = A.shape[1] - 1
    m = max(3, int(round(frac * n)))
    t = times[n - m:n]
    Y = A[:, n - m:n]
    V = np.vstack([np.ones_like(t), t - times[-1]]).T
    coef, *_ = np.linalg.lstsq(V, Y.T, rcond=None)
    resid = Y.T - V @ coef
    dof = max(1, m - 2)
    s2 = np.sum(resid ** 2, axis=0) / dof
    cov00 = np.linalg.inv(V.T @ V)[0, 0]
    se = np.sqrt(s2 * cov00)
    value = coef[0]
    gap = np.abs(value - A[:, n - 1])
    flagged = gap > 3 * se + tol * (1 + np.abs(value))
    return np.where(flagged, np.nan, value), se, flagged


def forward_integral_sp(Y, X: PathEnsemble, mode: str = "open",
                        sched: EpsSchedule | None = None) -> ForwardIntegralSP:
    """Forward integral ``int Y d^- X`` per path.

    ``Y`` is an array ``(n_paths, n_steps + 1)`` of adapted integrand values at
    the nodes or a callable of the ensemble returning such an array. ``mode``
    is ``"open"``, ``"improper"`` or ``"proper"``; every mode carries the full
    path, the improper fields are filled only when requested.
    """
    if mode not in ("open", "improper", "proper"):
        raise ValueError(f"unknown mode {mode!r}")
    Yv = np.asarray(Y(X) if callable(Y) else Y, dtype=float)
    if Yv.shape != X.values.shape:
        raise ValueError("integrand shape does not match the ensemble")
    sched, ks = _schedule(X, sched)
    arrays = [forward_paths(Yv, X.values, k) for k in ks]
    diag = _diagnose(arrays, list(sched.eps), _scale(arrays[-1]))
    out = ForwardIntegralSP(X.grid.times, arrays[-1],
                            [(e, a[:, -1].copy()) for e, a in zip(sched.eps, arrays)], diag, mode)
    if mode == "improper":
        out.improper, out.improper_stderr, out.improper_flagged = _improper(arrays[-1], X.grid.times)
    return out


@dataclass
class CovariationSP:
    times: np.ndarray
    paths: np.ndarray
    terminal_per_eps: list
    diagnostics: ConvergenceInProbability
    ucp_note: bool

    def median(self) -> np.ndarray:
        return np.median(self.paths, axis=0)


def covariation_sp(X: PathEnsemble, Y: PathEnsemble | np.ndarray | None = None,
                   sched: EpsSchedule | None = None) -> CovariationSP:
    """``[X, Y]_t`` per path; ``Y`` defaults to ``X`` (quadratic variation).

    ``Y`` may be a second ensemble on the same grid or an array of paths
    (e.g. a deterministic function broadcast over the ensemble).
    """
    Yv = X.values if Y is None else (Y.values if isinstance(Y, PathEnsemble) else np.asarray(Y, float))
    if isinstance(Y, PathEnsemble) and Y.grid != X.grid:
        raise ValueError("grid mismatch")
    Yv = np.broadcast_to(Yv, X.values.shape)
    sched, ks = _schedule(X, sched)
    arrays = [covariation_paths(X.values, Yv, k) for k in ks]
    diag = _diagnose(arrays, list(sched.eps), _scale(arrays[-1]))
    same = Y is None or Y is X
    return CovariationSP(X.grid.times, arrays[-1],
                         [(e, a[:, -1].copy()) for e, a in zip(sched.eps, arrays)], diag, same)


def quadratic_variation_sp(X: PathEnsemble, sched: EpsSchedule | None = None) -> CovariationSP:
    return covariation_sp(X, None, sched)


# -- Ito formula residuals ------------------------------------------------------

@dataclass(frozen=True)
class SmoothF:
    """``F(t, x)`` with its partial derivatives, all vectorized."""

    f: Callable
    ft: Callable
    fx: Callable
    fxx: Callable
    name: str = "F"


SQUARE = SmoothF(lambda t, x: x ** 2, lambda t, x: 0 * x, lambda t, x: 2 * x,
                 lambda t, x: 2 + 0 * x, "x^2")
TIME_X = SmoothF(lambda t, x: t * x, lambda t, x: x, lambda t, x: t + 0 * x,
                 lambda t, x: 0 * x, "t*x")
CUBE = SmoothF(lambda t, x: x ** 3, lambda t, x: 0 * x, lambda t, x: 3 * x ** 2,
               lambda t, x: 6 * x, "x^3")


@dataclass
class Residual:
    times: np.ndarray
    paths: np.ndarray

    @property
    def sup(self) -> np.ndarray:
        return np.max(np.abs(self.paths), axis=1)

    def quantiles(self, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
        return np.quantile(self.paths, qs, axis=0)


def ito_residual(F: SmoothF, X: PathEnsemble, sched: EpsSchedule | None = None,
                 qv: np.ndarray | None = None) -> Residual:
    """Per-path residual of the finite quadratic variation Ito formula.

    Uses the finest ``eps`` of the schedule for the forward integral and for
    ``[X]`` (unless ``qv`` supplies ``[X]`` at the nodes).
    """
    sched, ks = _schedule(X, sched)
    k = ks[-1]
    t = X.grid.times[None, :]
    V = X.values
    dt = X.grid.dt
    Fv = F.f(t, V)
    if not np.all(np.isfinite(Fv)):
        raise FloatingPointError("F not finite along the paths")
    C = covariation_paths(V, V, k) if qv is None else np.broadcast_to(qv, V.shape)
    dt_term = np.concatenate([np.zeros((V.shape[0], 1)),
                              np.cumsum(F.ft(t, V)[:, :-1] * dt, axis=1)], axis=1)
    fwd = forward_paths(F.fx(t, V) * np.ones_like(V), V, k)
    second = np.concatenate([np.zeros((V.shape[0], 1)),
                             np.cumsum(F.fxx(t, V)[:, :-1] * np.diff(C, axis=1), axis=1)], axis=1)
    res = Fv - Fv[:, :1] - dt_term - fwd - 0.5 * second
    return Residual(X.grid.times, res)


def chi_qv_window(qv, mu: DiagonalMeasure, t: float, T: float | None = None) -> np.ndarray:
    """``lam [X]_t + int_{-t}^0 g4(x) [X]_{t+x} dx`` per path.

    ``qv`` is a callable ``s -> [X]_s`` (vectorized), a :class:`GridPath`, or an
    array ``(n_paths, n_steps + 1)`` of ``[X]`` on the uniform grid of
    ``[0, T]`` (``T`` defaults to ``mu.T``).
    """
    T = mu.T if T is None else T
    if t > T + 1e-12:
        raise ValueError("t beyond the horizon")
    if callable(qv) and not isinstance(qv, GridPath):
        Q = lambda s: np.atleast_2d(np.asarray(qv(s), dtype=float))
    else:
        arr = qv.values if isinstance(qv, GridPath) else np.asarray(qv, dtype=float)
        arr = np.atleast_2d(arr)
        grid = np.linspace(0.0, T, arr.shape[1])
        Q = lambda s: np.array([np.interp(s, grid, row) for row in arr])
    out = mu.lam * Q(np.array([t]))[:, 0]
    if mu.g4 is not None and t > 0:
        dx = mu.T / (mu.g4.size - 1)
        m = max(1, int(round(t / dx)))
        x = np.linspace(-t, 0.0, m + 1)
        vals = Q(t + x) * mu.diag_density(x)[None, :]
        out = out + np.trapezoid(vals, dx=t / m, axis=1)
    return out


def chi_qv_window_from_rate(Z: Callable, mu: DiagonalMeasure, t: float, n: int = 512) -> float:
    """Time-ordered form ``int_0^t (lam Z_s + int_{-s}^0 g4(x) Z_{s+x} dx) ds`` for ``[X] = int Z``."""
    s = np.linspace(0.0, t, n + 1)
    inner = []
    for si in s:
        val = mu.lam * float(Z(np.asarray(si)))
        if mu.g4 is not None and si > 0:
            x = np.linspace(-si, 0.0, n + 1)
            val += float(np.trapezoid(mu.diag_density(x) * Z(si + x), x))
        inner.append(val)
    return float(np.trapezoid(inner, s))


def _forward_measure_batch(pb, W: np.ndarray, j0: int, k: int, dx: float, T: float) -> np.ndarray:
    """Regularized ``int_{[x_j0, 0]} mu(dx) (eta(x+eps) - eta(x)) / eps`` for each row."""
    P, m1 = W.shape
    m = m1 - 1
    if j0 >= m:
        return np.zeros(P)
    Wp = np.concatenate([W, np.repeat(W[:, -1:], k, axis=1)], axis=1)
    out = np.zeros(P)
    if pb.density is not None:
        q = (Wp[:, j0 + k:m + k] - W[:, j0:m]) / k
        out += np.sum(np.asarray(pb.density)[:, j0:m] * q, axis=1)
    if pb.atoms:
        grid = np.linspace(-T, 0.0, m + 1)
        eps = k * dx
        for x, w in pb.atoms:
            if x < grid[j0] - 1e-12:
                continue
            a = np.array([np.interp(x + eps, grid, r) - np.interp(x, grid, r) for r in W])
            out += np.asarray(w) * a / eps
    return out


def window_ito_residual(U: PathFunctional, X: PathEnsemble, sigma: Callable | None = unit_sigma,
                        sched: EpsSchedule | None = None, form: str = "ito") -> Residual:
    """Per-path residual of the Ito formula for the window process of ``X``.

    ``form="ito"`` subtracts the time-derivative integral, the perpendicular
    term ``int I^-(s, X_s) ds``, the forward integral of the vertical derivative
    and half the second-order term. The second-order term uses
    ``sigma^2(s + x, X_{s+x})`` along the diagonal when ``sigma`` is given and
    the increments of the estimated ``[X]`` when ``sigma`` is ``None``.
    ``form="operator"`` subtracts ``int L U(s, X_s) ds`` instead of the
    perpendicular, time and second-order terms.
    """
    sched, ks = _schedule(X, sched)
    k = ks[-1]
    V = X.values
    P, n1 = V.shape
    n = n1 - 1
    T, dt = X.grid.T, X.grid.dt
    times = X.grid.times
    if sigma is not None:
        rate = np.empty((P, n + 1))
        for i in range(n + 1):
            rate[:, i] = np.asarray(sigma(times[i], X.windows(i)), dtype=float) ** 2
    else:
        C = covariation_paths(V, V, k)
        rate = np.concatenate([np.diff(C, axis=1), np.zeros((P, 1))], axis=1) / dt
    Vp = _padded(V, k)
    value = np.empty((P, n + 1))
    drift = np.zeros((P, n + 1))
    for i in range(n + 1):
        W = X.windows(i)
        s = times[i]
        value[:, i] = U.batch(s, W)
        if i == n:
            break
        dtime = U.d_time(s, W)
        j0 = n - i
        perp = _forward_measure_batch(U.perp_batch(s, W), W, j0, k, dt, T) if i > 0 else 0.0
        sb = U.second_batch(s, W)
        sec = np.asarray(sb.lam) * rate[:, i]
        if sb.g4 is not None and i > 0:
            g4 = np.asarray(sb.g4)[:, j0:]
            sec = sec + np.trapezoid(g4 * rate[:, 0:i + 1], dx=dt, axis=1)
        vert = U.d_vertical(s, W) * (Vp[:, i + k] - V[:, i]) / k
        if form == "operator":
            Lval = dtime + perp + 0.5 * sec
            drift[:, i + 1] = drift[:, i] + Lval * dt + vert
        else:
            drift[:, i + 1] = drift[:, i] + (dtime + perp + 0.5 * sec) * dt + vert
    return Residual(times, value - value[:, :1] - drift)


def ensemble_summary(times: np.ndarray, paths: np.ndarray) -> str:
    """Tabular text ``t, quantile05, median, quantile95``."""
    q = np.quantile(paths, [0.05, 0.5, 0.95], axis=0)
    lines = ["t,quantile05,median,quantile95"]
    lines += [f"{t:.10g},{a:.10g},{b:.10g},{c:.10g}" for t, a, b, c in zip(times, *q)]
    return "\n".join(lines) + "\n"
