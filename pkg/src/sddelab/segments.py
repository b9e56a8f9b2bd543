"""Piecewise-constant history segments on the unit delay window.

The delay state of a path x at time t is the window s -> x(t+s) for
s in [-1, 0].  On a uniform grid of N cells with width h = 1/N, cell c
(0-based) covers the interval [-1 + c*h, -1 + (c+1)*h) and stores the
path value at the cell's left endpoint.  The newest cell (c = N-1) sits
next to s = 0; evaluation at s = 0 itself is the job of the head
variable, which segments deliberately do not store.

With the time step equal to the cell width, advancing the window by one
step is an exact shift: drop the oldest cell, move every cell down by
one, and append the pre-step head as the newest cell (the path on
[t, t+h) frozen at its left endpoint).  Transport of the history is
therefore free of numerical diffusion; all discretization error lives in
the head dynamics.

Node evaluation is right-continuous: the value at a grid node u > -1 is
the value of the cell whose interval starts at u, and the value at u = 0
is the head.  This is the unique convention under which the stored tail
of an evolved state reproduces the head trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Segment",
    "SegmentPath",
    "constant_segment",
    "segment_from_function",
    "shift_append",
    "lp_norm",
    "value_at_node",
    "node_cell_index",
    "atom_cell_index",
    "measure_read",
    "time_integral_of_segments",
    "TimeIntegral",
    "segment_l2_in_time_bound",
    "segment_csv_rows",
]


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Segment:
    """One history window: an (N, d) array of cell values.

    values[c] is the path value on [-1 + c*h, -1 + (c+1)*h), h = 1/N.
    Instances are immutable; the value array is marked read-only.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("segment values must be an (N, d) array")
        if not (v.flags.writeable is False and v.dtype == float):
            v = _as_readonly(v)
        object.__setattr__(self, "values", v)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return 1.0 / self.values.shape[0]


def constant_segment(value, n_cells: int) -> Segment:
    """Segment holding the same d-vector on every cell."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.ndim != 1:
        raise ValueError("constant value must be a scalar or d-vector")
    return Segment(np.tile(v, (n_cells, 1)))


def segment_from_function(fn: Callable[[float], np.ndarray], n_cells: int, d: int) -> Segment:
    """Sample fn at cell left endpoints s_c = -1 + c/N."""
    h = 1.0 / n_cells
    vals = np.empty((n_cells, d))
    for c in range(n_cells):
        vals[c] = np.atleast_1d(np.asarray(fn(-1.0 + c * h), dtype=float))
    return Segment(vals)


def shift_append(f: Segment, head: np.ndarray) -> Segment:
    """Advance the window one step: drop the oldest cell, append the head.

    Models the window at t+h from the window at t when the path on
    [t, t+h) is frozen at its left endpoint, so head must be the
    pre-update head X(t).

    Args:
      f: current window.
      head: d-vector appended as the newest cell.

    Returns:
      The shifted Segment.

    Raises:
      ValueError: head dimension does not match the segment.
    """
    head = np.atleast_1d(np.asarray(head, dtype=float))
    if head.shape != (f.d,):
        raise ValueError(f"head has shape {head.shape}, expected ({f.d},)")
    out = np.empty_like(f.values)
    out[:-1] = f.values[1:]
    out[-1] = head
    return Segment(out)


def lp_norm(f: Segment, p: float) -> float:
    """L^p norm of the segment: (sum_c h * |values[c]|_2^p)^(1/p).

    The window has unit length, so a constant segment c has norm |c|_2
    for every p.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    cell_norms = np.linalg.norm(f.values, axis=1)
    return float(np.sum(f.h * cell_norms**p) ** (1.0 / p))


def node_cell_index(n_cells: int, u: float) -> int:
    """Cell index for right-continuous evaluation at grid node u.

    Returns n_cells for u = 0 (meaning: read the head), otherwise the
    0-based index of the cell whose interval starts at u.

    Raises:
      ValueError: u is not a grid node of [-1, 0].
    """
    pos = (u + 1.0) * n_cells
    i = int(round(pos))
    if abs(pos - i) > 1e-9 * n_cells or not (0 <= i <= n_cells):
        raise ValueError(f"u={u} is not a grid node for N={n_cells}")
    return i


def value_at_node(f: Segment, head: np.ndarray, u: float) -> np.ndarray:
    """Right-continuous value of the window at grid node u in [-1, 0]."""
    i = node_cell_index(f.n_cells, u)
    if i == f.n_cells:
        return np.atleast_1d(np.asarray(head, dtype=float))
    return f.values[i]


def atom_cell_index(n_cells: int, theta: float) -> int:
    """Cell index for measure-style point reads of the window at node theta.

    Point masses of a bounded-variation measure act on the piecewise
    constant window by the cell to the LEFT of an interior node (the
    Stieltjes sum pairs each jump of the integrator with the integrand
    value it has just swept past).  The endpoints are special: theta = 0
    reads the head (sentinel n_cells) and theta = -1 reads the oldest
    cell, index 0.
    """
    i = node_cell_index(n_cells, theta)
    if i == 0 or i == n_cells:
        return i
    return i - 1


def measure_read(f: Segment, head: np.ndarray, theta: float) -> np.ndarray:
    """Window value at node theta under the measure-read convention."""
    i = atom_cell_index(f.n_cells, theta)
    if i == f.n_cells:
        return np.atleast_1d(np.asarray(head, dtype=float))
    return f.values[i]


@dataclass(frozen=True)
class SegmentPath:
    """Shift-consistent history of a simulated path.

    Stores the initial window f0 and the head trajectory; every
    intermediate window is a view into the stacked array
    [f0 cells; heads[0]; heads[1]; ...], so consecutive windows are
    related by one shift_append step by construction.
    """

    f0: Segment
    heads: np.ndarray
    dt: float
    _history: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        heads = np.asarray(self.heads, dtype=float)
        if heads.ndim != 2 or heads.shape[1] != self.f0.d:
            raise ValueError("heads must be an (n_steps+1, d) array matching f0")
        n = self.f0.n_cells
        if abs(self.dt * n - 1.0) > 1e-9:
            raise ValueError("dt must equal the cell width 1/N")
        hist = np.concatenate([self.f0.values, heads[:-1]], axis=0)
        hist.setflags(write=False)
        if not heads.flags.writeable is False:
            heads = _as_readonly(heads)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "_history", hist)

    @property
    def n_steps(self) -> int:
        return self.heads.shape[0] - 1

    @property
    def d(self) -> int:
        return self.f0.d

    @property
    def n_cells(self) -> int:
        return self.f0.n_cells

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def head_at(self, k: int) -> np.ndarray:
        return self.heads[k]

    def segment_at(self, k: int) -> Segment:
        """Window at grid index k (a zero-copy view of the history)."""
        if not 0 <= k <= self.n_steps:
            raise IndexError(f"index {k} outside [0, {self.n_steps}]")
        return Segment(self._history[k : k + self.n_cells])

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(t - k * self.dt) > 1e-9 or not (0 <= k <= self.n_steps):
            raise ValueError(f"t={t} is not on the path grid")
        return k


@dataclass(frozen=True)
class TimeIntegral:
    """Result of time_integral_of_segments.

    g_cells / g_head are the cell values and the node-0 value of
    g(u) = integral of x(s+u) over s in [0, t]; derivative is the
    forward difference quotient of g on the grid, which telescopes to
    the exact window difference x_t - x_0 because the time step equals
    the cell width.  in_w1p records that the difference quotient is
    finite on every cell, the discrete stand-in for membership in the
    Sobolev class.
    """

    g_cells: np.ndarray
    g_head: np.ndarray
    derivative: np.ndarray
    in_w1p: bool


def time_integral_of_segments(path: SegmentPath, t: float) -> TimeIntegral:
    """Left-point quadrature of the running window integral.

    Args:
      path: simulated history.
      t: grid time in [0, path horizon].

    Returns:
      TimeIntegral with g(u) = sum_k dt * x(t_k + u) over t_k < t, the
      node-0 value g(0) = sum_k dt * X(t_k), and the forward difference
      derivative (exactly x_t - x_0 cellwise).

    Raises:
      ValueError: t off the grid.
    """
    n_t = path.index_of(t)
    n = path.n_cells
    g_cells = np.zeros((n, path.d))
    for k in range(n_t):
        g_cells += path.dt * path._history[k : k + n]
    g_head = path.dt * np.sum(path.heads[:n_t], axis=0) if n_t else np.zeros(path.d)
    # forward difference; the top cell differences against the node-0 value
    h = path.f0.h
    upper = np.concatenate([g_cells[1:], g_head[None, :]], axis=0)
    derivative = (upper - g_cells) / h
    in_w1p = bool(np.all(np.isfinite(derivative)))
    return TimeIntegral(g_cells=g_cells, g_head=g_head, derivative=derivative, in_w1p=in_w1p)


def segment_l2_in_time_bound(path: SegmentPath, t: float, p: float) -> tuple[float, float]:
    """Both sides of the window-vs-head integral estimate.

    lhs = (integral over [0,t] of |X_s|_{L^p}^2 ds)^(1/2), left-point
    quadrature over grid times.  rhs = |f0|_{L^p} +
    t^(1/min(p,2)) * (integral of |X(u)|^max(p,2) du)^(1/max(p,2)).
    The lhs never exceeds the rhs beyond quadrature tolerance; this is
    the Minkowski-type estimate the solver comparison relies on.
    """
    n_t = path.index_of(t)
    dt = path.dt
    seg_norms = np.array([lp_norm(path.segment_at(k), p) for k in range(n_t)])
    lhs = float(np.sqrt(np.sum(dt * seg_norms**2)))
    lo, hi = min(p, 2.0), max(p, 2.0)
    head_norms = np.linalg.norm(path.heads[:n_t], axis=1)
    rhs = lp_norm(path.f0, p) + t ** (1.0 / lo) * float(np.sum(dt * head_norms**hi) ** (1.0 / hi))
    return lhs, rhs


def segment_csv_rows(f: Segment) -> list[list[str]]:
    """Rows (s, component_1..component_d) at cell midpoints, for CSV dump."""
    h = f.h
    rows = []
    for c in range(f.n_cells):
        s = -1.0 + (c + 0.5) * h
        rows.append([repr(s)] + [repr(float(x)) for x in f.values[c]])
    return rows
