"""Brownian increments, grid step processes, and stochastic-integral checks.

The driving noise is an m-dimensional Brownian motion represented by its
grid increments, generated from counter-based streams: the pair
(seed, stream_id) keys a Philox generator, so any path can be
regenerated in isolation and disjoint stream ids give independent paths.
Integrands are step processes (one d x m matrix per step) and integrals
are left-point Ito sums.

The check_* functions turn the integral identities into Monte Carlo or
exact-arithmetic tests; each returns rows of (name, estimate, standard
error, pass) that the CLI serializes as a report.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "BrownianPath",
    "StepProcess",
    "IntegrandFamily",
    "CheckRow",
    "sample_brownian",
    "sample_brownian_batch",
    "coarsen",
    "ito_integral",
    "gamma_norm",
    "weighted_gamma_norm",
    "gamma_norm_by_gaussian_sums",
    "default_integrand_families",
    "check_ito_isometry",
    "check_bdg_one_sided",
    "check_closed_operator_swap",
    "check_fubini_swap",
]

_U64 = 0xFFFFFFFFFFFFFFFF


def _stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([seed & _U64, stream_id & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class BrownianPath:
    """Grid increments of an m-dimensional Brownian motion.

    increments[k] is W(t_{k+1}) - W(t_k) ~ N(0, dt I_m).  The path is a
    pure function of (seed, stream_id, m, dt, n_steps).
    """

    m: int
    dt: float
    increments: np.ndarray
    seed: int
    stream_id: int

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != self.m:
            raise ValueError("increments must be an (n_steps, m) array")
        if inc.flags.writeable:
            inc = inc.copy()
            inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def path(self) -> np.ndarray:
        """Cumulative values W(t_0)..W(t_n), starting at 0."""
        out = np.zeros((self.n_steps + 1, self.m))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_brownian(m: int, dt: float, n_steps: int, seed: int, stream_id: int = 0) -> BrownianPath:
    """Reproducible increments; same (seed, stream_id) gives identical arrays."""
    if m < 1 or n_steps < 1 or dt <= 0:
        raise ValueError("m, n_steps must be positive integers and dt > 0")
    rng = _stream_rng(seed, stream_id)
    inc = rng.standard_normal((n_steps, m)) * np.sqrt(dt)
    return BrownianPath(m=m, dt=dt, increments=inc, seed=seed, stream_id=stream_id)


def sample_brownian_batch(m: int, dt: float, n_steps: int, seed: int,
                          stream_ids: Sequence[int]) -> np.ndarray:
    """Stacked increments (P, n_steps, m), one independent stream per row."""
    out = np.empty((len(stream_ids), n_steps, m))
    root = np.sqrt(dt)
    for i, sid in enumerate(stream_ids):
        out[i] = _stream_rng(seed, sid).standard_normal((n_steps, m)) * root
    return out


def coarsen(W: BrownianPath, factor: int) -> BrownianPath:
    """Same Brownian path on a grid coarsened by an integer factor.

    Sums increments in consecutive groups, which is exactly the coarse
    path of the fine one; refinement studies couple solvers through a
    single fine path and its coarsenings.
    """
    if factor < 1 or W.n_steps % factor != 0:
        raise ValueError(f"factor {factor} must divide n_steps {W.n_steps}")
    grouped = W.increments.reshape(W.n_steps // factor, factor, W.m).sum(axis=1)
    return BrownianPath(m=W.m, dt=W.dt * factor, increments=grouped,
                        seed=W.seed, stream_id=W.stream_id)


@dataclass(frozen=True)
class StepProcess:
    """Grid integrand: matrices[k] multiplies the k-th increment.

    The adapted flag is granted only by the constructors that cannot
    look ahead: `deterministic` (no path dependence at all),
    `from_path_functional` (each matrix sees only the strictly earlier
    increments), and `from_adapted_matrices` (for solver output, where
    matrix k was computed from the state before step k).  A bare
    StepProcess(matrices) is unmarked and the integral refuses it.
    """

    matrices: np.ndarray
    adapted: bool = False

    def __post_init__(self) -> None:
        mats = np.asarray(self.matrices, dtype=float)
        if mats.ndim != 3:
            raise ValueError("matrices must be an (n_steps, d, m) array")
        if mats.flags.writeable:
            mats = mats.copy()
            mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def n_steps(self) -> int:
        return self.matrices.shape[0]

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def m(self) -> int:
        return self.matrices.shape[2]

    @staticmethod
    def deterministic(matrices) -> "StepProcess":
        return StepProcess(np.asarray(matrices, dtype=float), adapted=True)

    @staticmethod
    def constant(matrix, n_steps: int) -> "StepProcess":
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        return StepProcess(np.tile(M, (n_steps, 1, 1)), adapted=True)

    @staticmethod
    def from_path_functional(W: BrownianPath,
                             fn: Callable[[int, np.ndarray], np.ndarray]) -> "StepProcess":
        """Build Phi_k = fn(k, increments before step k); adapted by construction."""
        mats = [np.atleast_2d(np.asarray(fn(k, W.increments[:k]), dtype=float))
                for k in range(W.n_steps)]
        return StepProcess(np.stack(mats), adapted=True)

    @staticmethod
    def from_adapted_matrices(matrices) -> "StepProcess":
        """Mark solver-produced matrices adapted; caller guarantees causality."""
        return StepProcess(np.asarray(matrices, dtype=float), adapted=True)


def ito_integral(phi: StepProcess, W: BrownianPath) -> np.ndarray:
    """Cumulative left-point sums S[j] = sum over k < j of Phi_k dW_k.

    Returns an (n_steps + 1, d) trajectory with S[0] = 0.

    Raises:
      ValueError: phi not marked adapted, or shapes disagree.
    """
    if not phi.adapted:
        raise ValueError("integrand is not marked adapted; use an adapted constructor")
    if phi.n_steps != W.n_steps or phi.m != W.m:
        raise ValueError(
            f"integrand grid ({phi.n_steps} steps, m={phi.m}) does not match "
            f"path ({W.n_steps} steps, m={W.m})"
        )
    terms = np.einsum("kim,km->ki", phi.matrices, W.increments)
    out = np.zeros((W.n_steps + 1, phi.d))
    np.cumsum(terms, axis=0, out=out[1:])
    return out


def gamma_norm(phi: StepProcess, dt: float) -> float:
    """Hilbert-Schmidt norm of the integrand: (sum_k dt |Phi_k|_F^2)^(1/2)."""
    return float(np.sqrt(dt * np.sum(phi.matrices**2)))


def weighted_gamma_norm(phi: StepProcess, s: float, alpha: float, dt: float) -> float:
    """Singular-weight norm (sum_k |Phi_k|_F^2 * int_cell (s-u)^(-2a) du)^(1/2).

    The weight integral is exact per cell, so the cell touching u = s is
    finite for alpha < 1/2.  Only steps with t_k < s contribute.

    Raises:
      ValueError: alpha outside (0, 1/2), or s off the grid.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    j = round(s / dt)
    if abs(s - j * dt) > 1e-9 or j < 0 or j > phi.n_steps:
        raise ValueError(f"s={s} is not a grid time within the process")
    if j == 0:
        return 0.0
    k = np.arange(j)
    e = 1.0 - 2.0 * alpha
    weights = ((s - k * dt) ** e - (s - (k + 1) * dt) ** e) / e
    frob_sq = np.sum(phi.matrices[:j] ** 2, axis=(1, 2))
    return float(np.sqrt(np.sum(weights * frob_sq)))


def gamma_norm_by_gaussian_sums(phi: StepProcess, dt: float, n_samples: int,
                                seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of the squared norm via Gaussian sums.

    The integrand defines a linear map from step functions to R^d; its
    squared Hilbert-Schmidt norm equals E|sum_n g_n R(e_n)|^2 for any
    orthonormal basis (e_n) and iid standard Gaussians g_n.  A random
    orthogonal rotation of the basis is drawn so the estimate does not
    silently exploit the coordinate basis.  Returns (mean, standard
    error) of the squared-norm samples; compare against gamma_norm**2.
    """
    D = phi.n_steps * phi.m
    if D > 64:
        raise ValueError(f"subspace dimension {D} exceeds the 64 guard")
    # columns of R: the map applied to normalized cell-coordinate indicators
    R = np.sqrt(dt) * phi.matrices.transpose(1, 0, 2).reshape(phi.d, D)
    rng = _stream_rng(seed, 0xBA515)
    Q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    RQ = R @ Q
    G = rng.standard_normal((n_samples, D))
    samples = np.sum((G @ RQ.T) ** 2, axis=1)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n_samples))


# ----------------------------------------------------- Monte Carlo checks

@dataclass(frozen=True)
class CheckRow:
    """One line of an MC report: estimate, its standard error, verdict."""

    name: str
    estimate: float
    std_error: float
    passed: bool


@dataclass(frozen=True)
class IntegrandFamily:
    """A named recipe turning (path index, Brownian path) into an integrand."""

    name: str
    d: int
    m: int
    build: Callable[[int, "BrownianPath"], StepProcess]


def default_integrand_families(seed: int = 0) -> list[IntegrandFamily]:
    """Five integrand families spanning the cases the identities cover.

    Constant; deterministic time-varying; adapted reading the path;
    adapted nonlinear in the path; random but time-constant (measurable
    at time zero, drawn from a stream disjoint from every path stream).
    """

    def det_time_varying(_: int, W: BrownianPath) -> StepProcess:
        k = np.arange(W.n_steps, dtype=float)
        t = k * W.dt
        mats = np.empty((W.n_steps, 2, 3))
        mats[:, 0, 0] = 1.0
        mats[:, 0, 1] = np.sin(2 * np.pi * t)
        mats[:, 0, 2] = t
        mats[:, 1, 0] = -0.5
        mats[:, 1, 1] = np.cos(np.pi * t)
        mats[:, 1, 2] = 1.0 - t
        return StepProcess.deterministic(mats)

    def path_value(_: int, W: BrownianPath) -> StepProcess:
        return StepProcess.from_path_functional(
            W, lambda k, prefix: float(prefix[:, 0].sum()))

    def cos_of_path(_: int, W: BrownianPath) -> StepProcess:
        return StepProcess.from_path_functional(
            W, lambda k, prefix: float(np.cos(prefix[:, 0].sum())))

    def frozen_random_matrix(path_index: int, W: BrownianPath) -> StepProcess:
        rng = _stream_rng(seed, (1 << 32) + path_index)
        return StepProcess.constant(rng.standard_normal((2, 2)), W.n_steps)

    return [
        IntegrandFamily("constant_identity", 1, 1,
                        lambda _, W: StepProcess.constant([[1.0]], W.n_steps)),
        IntegrandFamily("deterministic_time_varying", 2, 3, det_time_varying),
        IntegrandFamily("path_value", 1, 1, path_value),
        IntegrandFamily("cos_of_path", 1, 1, cos_of_path),
        IntegrandFamily("frozen_random_matrix", 2, 2, frozen_random_matrix),
    ]


def _family_samples(family: IntegrandFamily, mc_paths: int, seed: int, dt: float,
                    n_steps: int, stream_offset: int = 0):
    """Per-path (sup |S|, |S(T)|^2, gamma^2) samples for one family."""
    sup_abs = np.empty(mc_paths)
    final_sq = np.empty(mc_paths)
    gamma_sq = np.empty(mc_paths)
    for p in range(mc_paths):
        W = sample_brownian(family.m, dt, n_steps, seed, stream_offset + p)
        phi = family.build(p, W)
        S = ito_integral(phi, W)
        norms = np.linalg.norm(S, axis=1)
        sup_abs[p] = norms.max()
        final_sq[p] = norms[-1] ** 2
        gamma_sq[p] = gamma_norm(phi, dt) ** 2
    return sup_abs, final_sq, gamma_sq


def check_ito_isometry(families: Optional[Sequence[IntegrandFamily]] = None,
                       mc_paths: int = 10_000, seed: int = 0,
                       dt: float = 1.0 / 64, n_steps: int = 64) -> list[CheckRow]:
    """Isometry test E|S(T)|^2 = E gamma^2 for each family.

    The estimate is the ratio of the two means; the standard error comes
    from the paired per-path differences, so a family with random norm
    is tested as sharply as a deterministic one.  Pass iff the ratio is
    within 3 standard errors of 1.
    """
    rows = []
    for family in families if families is not None else default_integrand_families(seed):
        _, final_sq, gamma_sq = _family_samples(family, mc_paths, seed, dt, n_steps)
        mean_gamma = gamma_sq.mean()
        diff = final_sq - gamma_sq
        ratio = final_sq.mean() / mean_gamma
        se = diff.std(ddof=1) / np.sqrt(mc_paths) / mean_gamma
        rows.append(CheckRow(f"isometry_{family.name}", float(ratio), float(se),
                             bool(abs(ratio - 1.0) <= 3.0 * se + 1e-12)))
    return rows


def check_bdg_one_sided(family: IntegrandFamily, p: float, mc_paths: int = 2_000,
                        seed: int = 0, dt: float = 1.0 / 64,
                        n_steps: int = 64) -> CheckRow:
    """Empirical constant in E sup|S|^p <= c E gamma^p, tested for stability.

    No value of the constant is asserted, only that the ratio is finite
    and stable when the path count doubles (within 25 percent).  An
    identically zero family makes the ratio 0/0; that degenerate case
    passes with estimate 0.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    sup1, _, gam1 = _family_samples(family, mc_paths, seed, dt, n_steps)
    sup2, _, gam2 = _family_samples(family, 2 * mc_paths, seed, dt, n_steps,
                                    stream_offset=1 << 33)
    num1, den1 = (sup1**p).mean(), (gam1 ** (p / 2)).mean()
    num2, den2 = (sup2**p).mean(), (gam2 ** (p / 2)).mean()
    if den1 == 0.0 and num1 == 0.0:
        return CheckRow(f"bdg_p{p:g}_{family.name}", 0.0, 0.0, True)
    ratio1 = num1 / den1
    ratio2 = num2 / den2
    se = (sup1**p).std(ddof=1) / np.sqrt(mc_paths) / den1
    stable = np.isfinite(ratio1) and np.isfinite(ratio2) and (
        abs(ratio2 - ratio1) <= 0.25 * max(ratio1, ratio2) + 1e-12
    )
    return CheckRow(f"bdg_p{p:g}_{family.name}", float(ratio1), float(se), bool(stable))


def check_closed_operator_swap(A: np.ndarray, phi: StepProcess,
                               W: BrownianPath) -> tuple[np.ndarray, np.ndarray, float]:
    """A (int Phi dW) versus int (A Phi) dW: exact up to float roundoff.

    Returns the two trajectories and their relative sup discrepancy.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    lhs = ito_integral(phi, W) @ A.T
    swapped = StepProcess(np.einsum("ij,kjm->kim", A, phi.matrices), adapted=phi.adapted)
    rhs = ito_integral(swapped, W)
    scale = max(float(np.max(np.abs(lhs))), 1.0)
    err = float(np.max(np.abs(lhs - rhs)) / scale)
    return lhs, rhs, err


def check_fubini_swap(phis: Sequence[StepProcess], weights: Sequence[float],
                      W: BrownianPath) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted sum of integrals versus integral of the weighted sum.

    Finite-index stochastic Fubini; exact linear algebra at this level.
    """
    weights = np.asarray(weights, dtype=float)
    if len(phis) != weights.shape[0]:
        raise ValueError("one weight per integrand required")
    lhs = sum(w * ito_integral(phi, W) for w, phi in zip(weights, phis))
    mixed = sum(w * phi.matrices for w, phi in zip(weights, phis))
    rhs = ito_integral(StepProcess(mixed, adapted=all(f.adapted for f in phis)), W)
    scale = max(float(np.max(np.abs(lhs))), 1.0)
    err = float(np.max(np.abs(lhs - rhs)) / scale)
    return lhs, rhs, err
