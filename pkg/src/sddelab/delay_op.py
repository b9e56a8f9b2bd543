"""Evaluation of the delay term: window integrated against the measure.

The drift's memory term is the Stieltjes integral of the window against
a matrix-valued measure.  On the grid this is exact, not a quadrature:
atoms are point reads (interior nodes read the cell to their left, the
node 0 reads the head) and the piecewise-constant density pairs with the
piecewise-constant window cell by cell.
"""

from __future__ import annotations

import numpy as np

from .model import DelayMeasure
from .segments import Segment, atom_cell_index

__all__ = ["apply_delay", "delay_row_operator", "lower_measure"]


def _checked_atom_index(n_cells: int, theta: float) -> int:
    try:
        return atom_cell_index(n_cells, theta)
    except ValueError:
        raise ValueError(
            f"atom at θ={theta} is not on the {n_cells}-cell grid; snap atoms before evaluating"
        ) from None


def apply_delay(eta: DelayMeasure, f: Segment, head: np.ndarray) -> np.ndarray:
    """Integrate the window (with node-0 value head) against the measure.

    Args:
      eta: delay measure with atoms on grid nodes.
      f: current window.
      head: d-vector, the window's value at node 0.

    Returns:
      d-vector, sum of atom reads and the exact density pairing.

    Raises:
      ValueError: atom off the grid, or dimension mismatch.
    """
    head = np.atleast_1d(np.asarray(head, dtype=float))
    d = f.d
    if head.shape != (d,):
        raise ValueError(f"head has shape {head.shape}, expected ({d},)")
    out = np.zeros(d)
    for theta, M in eta.atoms:
        if M.shape != (d, d):
            raise ValueError(f"atom weight shape {M.shape} does not match d={d}")
        i = _checked_atom_index(f.n_cells, theta)
        out += M @ (head if i == f.n_cells else f.values[i])
    if eta.density is not None:
        if eta.density.shape != (f.n_cells, d, d):
            raise ValueError(
                f"density shape {eta.density.shape} does not match segment ({f.n_cells}, {d}, {d})"
            )
        out += f.h * np.einsum("cij,cj->i", eta.density, f.values)
    return out


def lower_measure(eta: DelayMeasure, n_cells: int, d: int):
    """Measure in the form the stepping kernels take.

    Returns (atom_idx, atom_w, dens_w): int cell indices with n_cells
    denoting a head read, the stacked atom weights, and the density
    already scaled by the cell width (shape (0, d, d) when absent).
    """
    idx = np.array([_checked_atom_index(n_cells, theta) for theta, _ in eta.atoms],
                   dtype=np.int64)
    w = np.array([M for _, M in eta.atoms], dtype=float).reshape(len(eta.atoms), d, d)
    if eta.density is not None:
        if eta.density.shape != (n_cells, d, d):
            raise ValueError(
                f"density shape {eta.density.shape} does not match ({n_cells}, {d}, {d})"
            )
        dens = eta.density / n_cells
    else:
        dens = np.zeros((0, d, d))
    return idx, w, dens


def delay_row_operator(eta: DelayMeasure, n_cells: int, d: int) -> np.ndarray:
    """Matrix L with L @ [head; cells] == apply_delay for every window.

    Column blocks are ordered [head, cell 0 (oldest), ..., cell N-1];
    shape (d, d*(N+1)).
    """
    L = np.zeros((d, d * (n_cells + 1)))
    for theta, M in eta.atoms:
        if M.shape != (d, d):
            raise ValueError(f"atom weight shape {M.shape} does not match d={d}")
        i = _checked_atom_index(n_cells, theta)
        if i == n_cells:
            L[:, 0:d] += M
        else:
            L[:, d * (1 + i) : d * (2 + i)] += M
    if eta.density is not None:
        if eta.density.shape != (n_cells, d, d):
            raise ValueError(
                f"density shape {eta.density.shape} does not match ({n_cells}, {d}, {d})"
            )
        h = 1.0 / n_cells
        for c in range(n_cells):
            L[:, d * (1 + c) : d * (2 + c)] += h * eta.density[c]
    return L
