"""Problem definition: drift, delay measure, noise field, initial data.

A problem instance is
    dX(t) = [A X(t) + integral of X_t dM] dt + B(X(t), X_t) dW(t)
with X(0) = x0 and initial window f0.  M is a matrix-valued measure on
[-1, 0] given by finitely many point masses plus a piecewise-constant
density; B maps the current head and window to a d x m matrix applied to
m-dimensional Brownian increments.

Everything here is an immutable value object; validation is report
based so a single call can surface every violated assumption at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .segments import Segment, lp_norm, measure_read

__all__ = [
    "DelayMeasure",
    "NoiseField",
    "AffineNoiseField",
    "Problem",
    "SolverConfig",
    "ValidationReport",
    "validate_problem",
    "total_variation",
    "snap_atoms",
]


def _frozen(a, shape=None) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    if shape is not None and out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DelayMeasure:
    """Matrix-valued measure on [-1, 0]: point masses plus a density.

    atoms: list of (location, weight) with location in [-1, 0] and
      weight a d x d matrix.
    density: (N, d, d) array of per-cell matrices, or None for no
      absolutely continuous part.  The density grid must match the
      solver grid; validation enforces this.
    """

    atoms: tuple[tuple[float, np.ndarray], ...]
    density: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        snapped = []
        for theta, M in self.atoms:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError("atom weights must be square matrices")
            snapped.append((float(theta), _frozen(M)))
        object.__setattr__(self, "atoms", tuple(snapped))
        if self.density is not None:
            dens = np.asarray(self.density, dtype=float)
            if dens.ndim != 3 or dens.shape[1] != dens.shape[2]:
                raise ValueError("density must be an (N, d, d) array")
            object.__setattr__(self, "density", _frozen(dens))

    @staticmethod
    def from_atoms(*atoms: tuple[float, object]) -> "DelayMeasure":
        return DelayMeasure(atoms=tuple((t, np.atleast_2d(np.asarray(M, dtype=float))) for t, M in atoms))

    @staticmethod
    def zero() -> "DelayMeasure":
        return DelayMeasure(atoms=())

    @staticmethod
    def constant_density(value, n_cells: int) -> "DelayMeasure":
        v = np.atleast_2d(np.asarray(value, dtype=float))
        return DelayMeasure(atoms=(), density=np.tile(v, (n_cells, 1, 1)))

    def dim(self) -> Optional[int]:
        if self.atoms:
            return self.atoms[0][1].shape[0]
        if self.density is not None:
            return self.density.shape[1]
        return None

    def is_zero(self) -> bool:
        if any(np.any(M != 0.0) for _, M in self.atoms):
            return False
        return self.density is None or not np.any(self.density != 0.0)


def total_variation(eta: DelayMeasure) -> float:
    """Sum of atom Frobenius norms plus the cellwise density integral.

    Absolutely homogeneous: scaling every weight and the density by
    lam >= 0 scales the result by lam.
    """
    tv = sum(float(np.linalg.norm(M)) for _, M in eta.atoms)
    if eta.density is not None:
        h = 1.0 / eta.density.shape[0]
        tv += float(h * np.sum(np.linalg.norm(eta.density, axis=(1, 2))))
    return float(tv)


def snap_atoms(eta: DelayMeasure, n_cells: int) -> tuple[DelayMeasure, float]:
    """Move each atom to the nearest grid node of the N-cell grid.

    Returns the snapped measure and the largest distance moved.  The
    caller decides whether that distance is acceptable; apply_delay
    requires exactly-on-grid atoms so the Stieltjes sum stays exact.
    """
    max_move = 0.0
    atoms = []
    for theta, M in eta.atoms:
        node = round((theta + 1.0) * n_cells)
        node = min(max(node, 0), n_cells)
        snapped = -1.0 + node / n_cells
        max_move = max(max_move, abs(snapped - theta))
        atoms.append((snapped, M))
    return DelayMeasure(atoms=tuple(atoms), density=eta.density), max_move


@dataclass(frozen=True)
class NoiseField:
    """Black-box noise coefficient: (head, window) -> d x m matrix.

    lipschitz_constant is declared by the caller, not estimated; it
    feeds the contraction diagnostics.  base_norm is the Frobenius norm
    of the field at the zero state.
    """

    map: Callable[[np.ndarray, Segment], np.ndarray]
    lipschitz_constant: float
    base_norm: float
    is_additive: bool = False

    def __call__(self, head: np.ndarray, tail: Segment) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.map(head, tail), dtype=float))


@dataclass(frozen=True)
class AffineNoiseField:
    """Noise affine in the state: base + head gains + one window read.

    B(x, f) = base + sum_j x_j * head_gains[j] + sum_j f(tail_loc)_j * tail_gains[j]

    where f(tail_loc) uses the measure-read convention.  The gain arrays
    have shape (d, d, m); gain[j] is the d x m matrix multiplied by
    component j.  This is the form the compiled solver kernels accept,
    so random test problems are generated in it.
    """

    base: np.ndarray
    head_gains: np.ndarray
    tail_gains: np.ndarray
    tail_loc: float = -1.0

    def __post_init__(self) -> None:
        base = np.atleast_2d(np.asarray(self.base, dtype=float))
        d, m = base.shape
        object.__setattr__(self, "base", _frozen(base))
        object.__setattr__(self, "head_gains", _frozen(self.head_gains, (d, d, m)))
        object.__setattr__(self, "tail_gains", _frozen(self.tail_gains, (d, d, m)))

    @staticmethod
    def additive(base) -> "AffineNoiseField":
        base = np.atleast_2d(np.asarray(base, dtype=float))
        d, m = base.shape
        z = np.zeros((d, d, m))
        return AffineNoiseField(base=base, head_gains=z, tail_gains=z.copy())

    @property
    def d(self) -> int:
        return self.base.shape[0]

    @property
    def m(self) -> int:
        return self.base.shape[1]

    @property
    def is_additive(self) -> bool:
        return not (np.any(self.head_gains != 0.0) or np.any(self.tail_gains != 0.0))

    @property
    def reads_tail(self) -> bool:
        return bool(np.any(self.tail_gains != 0.0))

    @property
    def base_norm(self) -> float:
        return float(np.linalg.norm(self.base))

    @property
    def lipschitz_constant(self) -> float:
        # Cauchy-Schwarz over components; the window read is measured in
        # the sup-over-cells metric, not inflated by the L^p cell width.
        hg = float(np.sqrt(np.sum(self.head_gains**2)))
        tg = float(np.sqrt(np.sum(self.tail_gains**2)))
        return hg + tg

    @property
    def map(self) -> Callable[[np.ndarray, Segment], np.ndarray]:
        return self.__call__

    def __call__(self, head: np.ndarray, tail: Segment) -> np.ndarray:
        head = np.atleast_1d(np.asarray(head, dtype=float))
        out = self.base.copy()
        out += np.tensordot(head, self.head_gains, axes=(0, 0))
        if self.reads_tail:
            v = measure_read(tail, head, self.tail_loc)
            out += np.tensordot(v, self.tail_gains, axes=(0, 0))
        return out


@dataclass(frozen=True)
class Problem:
    """One SDDE instance: dimensions, coefficients, initial data, horizon."""

    d: int
    m: int
    drift: np.ndarray
    delay: DelayMeasure
    noise: object
    x0: np.ndarray
    f0: Segment
    horizon: float
    p: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "drift", _frozen(np.atleast_2d(self.drift)))
        object.__setattr__(self, "x0", _frozen(np.atleast_1d(self.x0)))


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and sampling choices shared by all solvers."""

    n_cells: int
    dt: float
    seed: int = 0
    mc_paths: int = 10_000
    tolerance: float = 1e-9

    @staticmethod
    def aligned(n_cells: int, **kw) -> "SolverConfig":
        return SolverConfig(n_cells=n_cells, dt=1.0 / n_cells, **kw)


@dataclass(frozen=True)
class ValidationReport:
    """Violated invariants (fatal) and advisory warnings (non-fatal)."""

    violations: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __contains__(self, text: str) -> bool:
        return any(text in v for v in self.violations)

    def __str__(self) -> str:
        lines = [f"violation: {v}" for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) if lines else "ok"


def _product_norm(head: np.ndarray, seg: Segment, p: float) -> float:
    return float((np.linalg.norm(head) ** p + lp_norm(seg, p) ** p) ** (1.0 / p))


def validate_problem(p: Problem, c: SolverConfig) -> ValidationReport:
    """Check every standing assumption; return them all, not just the first.

    Fatal findings go to violations (the instance is well-posed for all
    solvers iff that list is empty).  The declared noise Lipschitz
    constant is only spot-checked on sampled pairs and can at most
    produce a warning.
    """
    bad: list[str] = []
    warn: list[str] = []

    if c.n_cells < 1:
        bad.append(f"n_cells must be positive, got {c.n_cells}")
    if c.dt <= 0:
        bad.append(f"dt must be positive, got {c.dt}")
    elif abs(c.dt * c.n_cells - 1.0) > 1e-9:
        bad.append(f"dt ≠ 1/N: dt={c.dt!r} with N={c.n_cells}")
    if c.mc_paths < 1:
        bad.append(f"mc_paths must be positive, got {c.mc_paths}")
    if c.tolerance <= 0:
        bad.append(f"tolerance must be positive, got {c.tolerance}")

    if p.horizon <= 0:
        bad.append(f"horizon must be positive, got {p.horizon}")
    elif c.dt > 0:
        steps = p.horizon / c.dt
        if abs(steps - round(steps)) > 1e-9:
            bad.append(f"horizon {p.horizon} is not an integer multiple of dt={c.dt!r}")

    if p.p < 1:
        bad.append(f"p must be >= 1, got {p.p}")

    if p.drift.shape != (p.d, p.d):
        bad.append(f"drift has shape {p.drift.shape}, expected ({p.d}, {p.d})")
    if p.x0.shape != (p.d,):
        bad.append(f"x0 has shape {p.x0.shape}, expected ({p.d},)")
    if p.f0.d != p.d:
        bad.append(f"f0 holds {p.f0.d}-vectors, expected {p.d}-vectors")
    if p.f0.n_cells != c.n_cells:
        bad.append(f"f0 has {p.f0.n_cells} cells, config asks for {c.n_cells}")

    for theta, M in p.delay.atoms:
        if theta < -1.0 - 1e-12 or theta > 1e-12:
            bad.append(f"atom outside [−1,0]: θ={theta}")
        else:
            node = round((theta + 1.0) * c.n_cells)
            move = abs((-1.0 + node / c.n_cells) - theta)
            if move > c.tolerance:
                bad.append(
                    f"atom at θ={theta} is {move:.3e} from the nearest grid node, beyond tolerance {c.tolerance:.3e}"
                )
        if M.shape != (p.d, p.d):
            bad.append(f"atom weight at θ={theta} has shape {M.shape}, expected ({p.d}, {p.d})")
    if p.delay.density is not None:
        if p.delay.density.shape != (c.n_cells, p.d, p.d):
            bad.append(
                f"delay density has shape {p.delay.density.shape}, expected ({c.n_cells}, {p.d}, {p.d})"
            )
    if not np.isfinite(total_variation(p.delay)):
        bad.append("delay measure has non-finite total variation")

    # shape check plus Lipschitz spot check on the noise field
    if p.f0.d == p.d and p.f0.n_cells == c.n_cells and p.x0.shape == (p.d,):
        try:
            out = np.atleast_2d(np.asarray(p.noise(p.x0, p.f0), dtype=float))
        except Exception as e:  # the map is caller-supplied code
            bad.append(f"noise map raised on the initial state: {e!r}")
        else:
            if out.shape != (p.d, p.m):
                bad.append(f"noise map returns shape {out.shape}, expected ({p.d}, {p.m})")
            else:
                K = float(p.noise.lipschitz_constant)
                rng = np.random.default_rng(c.seed ^ 0x5EED)
                worst = 0.0
                for _ in range(8):
                    x1 = rng.standard_normal(p.d)
                    x2 = rng.standard_normal(p.d)
                    f1 = Segment(rng.standard_normal((c.n_cells, p.d)))
                    f2 = Segment(rng.standard_normal((c.n_cells, p.d)))
                    gap = float(np.linalg.norm(np.asarray(p.noise(x1, f1)) - np.asarray(p.noise(x2, f2))))
                    dist = _product_norm(x1 - x2, Segment(f1.values - f2.values), p.p)
                    if dist > 0:
                        worst = max(worst, gap / dist)
                if worst > K * 1.05 + 1e-12:
                    warn.append(
                        f"declared Lipschitz constant {K:.4g} exceeded on sampled pairs (observed ratio {worst:.4g})"
                    )

    return ValidationReport(violations=tuple(bad), warnings=tuple(warn))
