"""Paths on uniform grids, windows, shifts and the diagonal measure class.

Everything here is immutable after construction. Off-grid queries are
resolved by linear interpolation between nodes; outside the domain a path
is extended by clamping (or by zero on the left, see ``extend_zero_left``).
"""

from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

_GRID_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _trapezoid(y: np.ndarray, dx: float, axis: int = -1) -> float:
    return np.trapezoid(y, dx=dx, axis=axis)


@dataclass(frozen=True, eq=False)
class GridPath:
    """A continuous trajectory sampled at ``n_steps + 1`` uniform nodes."""

    t_start: float
    t_end: float
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("GridPath needs a 1-d array of at least two values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridPath values must be finite")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def from_function(cls, f: Callable, t_start: float, t_end: float,
                      n_steps: int) -> "GridPath":
        t = np.linspace(t_start, t_end, n_steps + 1)
        return cls(t_start, t_end, np.asarray(f(t), dtype=float) * np.ones_like(t))

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def __call__(self, t):
        return extend_clamped(self, t)

    def node_index(self, t: float) -> int:
        """Index of the node at time ``t``; raises if ``t`` is off-grid."""
        q = (t - self.t_start) / self.dt
        k = int(round(q))
        if abs(q - k) > 1e-7 or k < 0 or k > self.n_steps:
            raise ValueError(f"time {t} is not a node of the grid")
        return k

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values) -> "GridPath":
        return GridPath(self.t_start, self.t_end, values)

    def restrict(self, lo: float, hi: float) -> "GridPath":
        """Sub-path on the node interval ``[lo, hi]``."""
        i, j = self.node_index(lo), self.node_index(hi)
        return GridPath(lo, hi, self.values[i:j + 1])

    def __add__(self, other: "GridPath") -> "GridPath":
        _check_same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridPath") -> "GridPath":
        _check_same_grid(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "GridPath":
        return self.with_values(c * self.values)

    __rmul__ = __mul__

    def to_text(self) -> str:
        """Two-column ``t,x`` text with a header line."""
        buf = io.StringIO()
        buf.write("t,x\n")
        for t, x in zip(self.times, self.values):
            buf.write(f"{float(t)!r},{float(x)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "GridPath":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if lines[0].replace(" ", "") != "t,x":
            raise ValueError("expected header line 't,x'")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        t = data[:, 0]
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
            raise ValueError("times must be uniformly spaced and increasing")
        return cls(t[0], t[-1], data[:, 1])


def _check_same_grid(p: GridPath, q: GridPath):
    if (p.n_steps != q.n_steps or abs(p.t_start - q.t_start) > _GRID_TOL
            or abs(p.t_end - q.t_end) > _GRID_TOL):
        raise ValueError("paths live on different grids")


def extend_clamped(p: GridPath, t):
    """Value of ``p`` at ``t``, held constant outside ``[t_start, t_end]``."""
    out = np.interp(t, p.times, p.values)
    return float(out) if np.ndim(out) == 0 else out


def extend_zero_left(f: GridPath, s):
    """Value of ``f`` at ``s``: ``f(b)`` right of the domain, zero left of it."""
    s_arr = np.asarray(s, dtype=float)
    out = np.where(s_arr < f.t_start, 0.0, np.interp(s_arr, f.times, f.values))
    return float(out) if out.ndim == 0 else out


class CadPath(NamedTuple):
    """A window that is continuous on ``[-T, 0[`` with a jump of size ``jump`` at 0."""

    path: GridPath
    jump: float = 0.0

    @property
    def present(self) -> float:
        return float(self.path.values[-1] + self.jump)


@dataclass(frozen=True, eq=False)
class WindowView:
    """The window ``x -> base(anchor + x)`` for ``x`` in ``[-width, 0]``."""

    base: GridPath
    anchor: float
    width: float

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr < -self.width - _GRID_TOL) or np.any(x_arr > _GRID_TOL):
            raise ValueError("window argument outside [-width, 0]")
        return extend_clamped(self.base, self.anchor + x)

    def to_gridpath(self) -> GridPath:
        """Materialise on the base path's spacing (``width`` must be a multiple)."""
        m = int(round(self.width / self.base.dt))
        if abs(m * self.base.dt - self.width) > 1e-7 * self.width:
            raise ValueError("window width is not a multiple of the base spacing")
        x = np.linspace(-self.width, 0.0, m + 1)
        return GridPath(-self.width, 0.0, extend_clamped(self.base, self.anchor + x))


def window_at(p: GridPath, t: float, width: float | None = None) -> WindowView:
    """Window of ``p`` ending at ``t``; width defaults to the path's horizon."""
    if width is None:
        width = p.t_end - p.t_start
    return WindowView(p, float(t), float(width))


def window_matrix(values: np.ndarray, i: int, m: int) -> np.ndarray:
    """Clamped windows of ``m + 1`` nodes ending at node ``i`` for a batch of paths.

    ``values`` has shape ``(n_paths, n_nodes)``; nodes before 0 repeat node 0.
    """
    if i >= m:
        return values[:, i - m:i + 1]
    pad = np.repeat(values[:, :1], m - i, axis=1)
    return np.concatenate([pad, values[:, :i + 1]], axis=1)


def shift_member(eta: GridPath, eps: float) -> GridPath:
    """The member ``x -> eta(x - eps)`` of the left-shift family of ``eta``."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("shift must lie in [0, 1]")
    if eps == 0.0:
        return eta
    return eta.with_values(extend_clamped(eta, eta.times - eps))


def k_eta_lattice(eta: GridPath, eps_max: float = 1.0, m: int = 8) -> list[tuple[float, GridPath]]:
    """Finite lattice ``{k eps_max / m}`` of shifted copies of ``eta``."""
    return [(k * eps_max / m, shift_member(eta, k * eps_max / m)) for k in range(m + 1)]


class PathClassTag(enum.Enum):
    ALL_CONTINUOUS = "AllContinuous"
    FINITE_QV = "FiniteQV"
    CUSTOM_SPAN = "CustomSpan"


@dataclass(frozen=True, eq=False)
class SignedMeasure1D:
    """Finite signed measure on ``[a, b]``: point masses plus a sampled density.

    The density, when present, is sampled at ``len(density)`` uniform nodes
    spanning ``[a, b]`` and integrated with the trapezoidal rule.
    """

    a: float
    b: float
    atoms: tuple = ()
    density: np.ndarray | None = None

    def __post_init__(self):
        atoms = tuple((float(x), float(w)) for x, w in self.atoms)
        for x, _ in atoms:
            if x < self.a - _GRID_TOL or x > self.b + _GRID_TOL:
                raise ValueError(f"atom at {x} outside [{self.a}, {self.b}]")
        object.__setattr__(self, "atoms", atoms)
        if self.density is not None:
            d = _frozen(self.density)
            if d.ndim != 1 or d.size < 2 or not np.all(np.isfinite(d)):
                raise ValueError("density must be a finite 1-d sample array")
            object.__setattr__(self, "density", d)

    @classmethod
    def zero(cls, a: float, b: float) -> "SignedMeasure1D":
        return cls(a, b)

    @property
    def nodes(self) -> np.ndarray | None:
        if self.density is None:
            return None
        return np.linspace(self.a, self.b, self.density.size)

    def density_at(self, x):
        if self.density is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.interp(x, self.nodes, self.density, left=0.0, right=0.0)

    def is_zero(self) -> bool:
        return (all(w == 0.0 for _, w in self.atoms)
                and (self.density is None or not np.any(self.density)))

    def total_variation(self) -> float:
        tv = sum(abs(w) for _, w in self.atoms)
        if self.density is not None:
            tv += _trapezoid(np.abs(self.density), (self.b - self.a) / (self.density.size - 1))
        return float(tv)

    def integrate(self, h: Callable) -> float:
        """``int h dmu``; ``h`` must accept numpy arrays."""
        total = sum(w * float(h(np.asarray(x))) for x, w in self.atoms)
        if self.density is not None:
            x = self.nodes
            total += _trapezoid(self.density * h(x), x[1] - x[0])
        return float(total)

    def __add__(self, other: "SignedMeasure1D") -> "SignedMeasure1D":
        if (self.a, self.b) != (other.a, other.b):
            raise ValueError("measures on different intervals")
        if self.density is None:
            dens = other.density
        elif other.density is None:
            dens = self.density
        else:
            dens = self.density + other.density
        return SignedMeasure1D(self.a, self.b, self.atoms + other.atoms, dens)

    def __mul__(self, c: float) -> "SignedMeasure1D":
        dens = None if self.density is None else c * self.density
        return SignedMeasure1D(self.a, self.b, tuple((x, c * w) for x, w in self.atoms), dens)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class DiagonalMeasure:
    """Element of the diagonal measure class on ``[-T, 0]^2``.

    ``lam`` is the mass of the atom at ``(0, 0)``. ``g2``, ``g3`` and ``g4`` are
    node samples on a uniform grid of ``[-T, 0]`` (``None`` means zero); ``g2``
    weights ``dx (x) delta_0``, ``g3`` weights ``delta_0 (x) dy`` and ``g4`` is the
    density along the diagonal. ``g1`` is an optional square array of samples
    on the product grid.
    """

    T: float
    lam: float = 0.0
    g2: np.ndarray | None = None
    g3: np.ndarray | None = None
    g4: np.ndarray | None = None
    g1: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        sizes = set()
        for name in ("g2", "g3", "g4"):
            arr = getattr(self, name)
            if arr is not None:
                arr = _frozen(arr)
                if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name} must be a finite 1-d sample array")
                sizes.add(arr.size)
                object.__setattr__(self, name, arr)
        if self.g1 is not None:
            g1 = _frozen(self.g1)
            if g1.ndim != 2 or g1.shape[0] != g1.shape[1] or not np.all(np.isfinite(g1)):
                raise ValueError("g1 must be a finite square sample array")
            sizes.add(g1.shape[0])
            object.__setattr__(self, "g1", g1)
        if len(sizes) > 1:
            raise ValueError("all sampled components must share one grid")
        if not np.isfinite(self.lam):
            raise ValueError("atom mass must be finite")

    @property
    def n_nodes(self) -> int | None:
        for arr in (self.g2, self.g3, self.g4):
            if arr is not None:
                return arr.size
        return None if self.g1 is None else self.g1.shape[0]

    def nodes(self, n: int | None = None) -> np.ndarray:
        n = n or self.n_nodes or 2
        return np.linspace(-self.T, 0.0, n)

    def diag_density(self, x):
        """Diagonal density ``g4`` at ``x`` (zero when absent)."""
        if self.g4 is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return np.interp(x, self.nodes(), self.g4)

    def diagonal(self, h: Callable, t: float | None = None, n: int | None = None) -> float:
        """``lam h(0) + int_{-t}^0 g4(x) h(x) dx``, the mass seen along the diagonal.

        ``h`` takes an array of ``x`` in ``[-t, 0]``; ``t`` defaults to ``T``.
        """
        t = self.T if t is None else float(t)
        total = self.lam * float(h(np.asarray(0.0)))
        if self.g4 is not None and t > 0:
            dx = self.T / (self.g4.size - 1)
            m = max(1, int(round(t / dx))) if n is None else n
            x = np.linspace(-t, 0.0, m + 1)
            total += _trapezoid(self.diag_density(x) * h(x), t / m)
        return float(total)

    def __add__(self, other: "DiagonalMeasure") -> "DiagonalMeasure":
        def plus(u, v):
            if u is None:
                return v
            return u if v is None else u + v
        return DiagonalMeasure(self.T, self.lam + other.lam, plus(self.g2, other.g2),
                               plus(self.g3, other.g3), plus(self.g4, other.g4),
                               plus(self.g1, other.g1))

    def __mul__(self, c: float) -> "DiagonalMeasure":
        def times(u):
            return None if u is None else c * u
        return DiagonalMeasure(self.T, c * self.lam, times(self.g2), times(self.g3),
                               times(self.g4), times(self.g1))

    __rmul__ = __mul__

    def to_text(self) -> str:
        def enc(arr):
            return None if arr is None else np.asarray(arr).tolist()
        return json.dumps({"T": self.T, "lambda": self.lam, "g2": enc(self.g2),
                           "g3": enc(self.g3), "g4": enc(self.g4), "g1": enc(self.g1)})

    @classmethod
    def from_text(cls, text: str) -> "DiagonalMeasure":
        d = json.loads(text)
        return cls(d["T"], d["lambda"], d.get("g2"), d.get("g3"), d.get("g4"), d.get("g1"))


def apply_diag_measure(mu: DiagonalMeasure, h: Callable) -> float:
    """Pair ``mu`` with a bounded kernel ``h(x, y)`` on ``[-T, 0]^2``.

    Each absolutely continuous component is integrated with the trapezoidal
    rule on the measure's own nodes. ``h`` must accept numpy arrays.
    """
    total = mu.lam * float(h(np.asarray(0.0), np.asarray(0.0)))
    if mu.n_nodes is not None:
        x = mu.nodes()
        dx = x[1] - x[0]
        zero = np.zeros_like(x)
        parts = []
        if mu.g2 is not None:
            parts.append(_trapezoid(mu.g2 * h(x, zero), dx))
        if mu.g3 is not None:
            parts.append(_trapezoid(mu.g3 * h(zero, x), dx))
        if mu.g4 is not None:
            parts.append(_trapezoid(mu.g4 * h(x, x), dx))
        if mu.g1 is not None:
            X, Y = np.meshgrid(x, x, indexing="ij")
            parts.append(_trapezoid(_trapezoid(mu.g1 * h(X, Y), dx, axis=1), dx))
        total += sum(parts)
    if not np.isfinite(total):
        raise ValueError("kernel produced non-finite values")
    return float(total)


def concatenate(past: GridPath, future: np.ndarray) -> GridPath:
    """Append node values ``future`` (same spacing) after ``past``."""
    future = np.asarray(future, dtype=float)
    vals = np.concatenate([past.values, future])
    return GridPath(past.t_start, past.t_end + future.size * past.dt, vals)


def paths_from_rows(rows: Iterable, t_start: float, t_end: float) -> list[GridPath]:
    return [GridPath(t_start, t_end, r) for r in rows]
