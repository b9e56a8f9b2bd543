"""Diagnostics on solved paths: factorization, continuity, quadratic
variation, and the stationary covariance of additive-noise problems.

The factorization check is the heavyweight: it rebuilds the stochastic
convolution from its fractionally-weighted intermediate and compares
against the directly computed one.  Both singular weights are
integrated exactly over grid cells (closed-form power integrals), so
the alpha-dependence of the error is genuine discretization error, not
quadrature blow-up near the singularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import convolve_matvec, lifted_evolve_batch
from .delay_op import lower_measure
from .model import Problem, SolverConfig
from .noise import BrownianPath
from .solvers import SolutionPath, fundamental_matrices, solve_direct

__all__ = [
    "FactorizationReport",
    "StationaryResult",
    "QVResult",
    "factorization_check",
    "continuity_modulus",
    "quadratic_variation_diag",
    "stationary_covariance",
    "fundamental_solution",
]


def fundamental_solution(p: Problem, c: SolverConfig, T: float | None = None) -> np.ndarray:
    """Head response r(t) to unit initial heads with empty window.

    Returns the (n+1, d, d) trajectory of matrices on the grid of c;
    r[0] is the identity.  This is the convolution kernel through which
    every mild-solution formula and the stationary covariance run.
    """
    horizon = p.horizon if T is None else T
    n = round(horizon / c.dt)
    if abs(horizon - n * c.dt) > 1e-9 or n < 0:
        raise ValueError(f"T={horizon} is not a nonnegative multiple of dt")
    return fundamental_matrices(p.drift, p.delay, c.n_cells, n)


def continuity_modulus(path: SolutionPath, q: float) -> float:
    """Largest grid increment of the path, raised to the declared power.

    max_k |X(t_{k+1}) - X(t_k)|^q is the single-path statistic whose
    expectation across refinements exhibits the path-continuity of the
    solution; it must shrink as dt does.

    Raises:
      ValueError: q <= 2 (the moment hypothesis needs q > 2).
    """
    if q <= 2:
        raise ValueError(f"q must exceed 2, got {q}")
    inc = np.linalg.norm(np.diff(path.heads, axis=0), axis=1)
    return float(inc.max() ** q) if inc.size else 0.0


@dataclass(frozen=True)
class QVResult:
    """Realized quadratic variation next to its time-quadrature twin."""

    qv: float
    time_quadrature: float
    verdict: str


def quadratic_variation_diag(path: SolutionPath, p: Problem) -> QVResult:
    """Realized QV of the noise part against the integrated squared norm.

    qv = sum_k |B_k dW_k|^2 estimates the integral of |B|_F^2 dt; the
    two agree within Monte Carlo error across paths.  An exactly zero
    qv means the path has bounded variation (the deterministic case);
    anything else rules out a classically differentiable solution.
    """
    n = path.n_steps
    terms = np.einsum("kim,km->ki", path.noise_matrices, path.brownian.increments[:n])
    qv = float(np.sum(terms**2))
    quad = float(path.dt * np.sum(path.noise_matrices**2))
    return QVResult(qv=qv, time_quadrature=quad,
                    verdict="deterministic" if qv == 0.0 else "stochastic")


@dataclass(frozen=True)
class StationaryResult:
    """Quadrature of the stationary covariance with its decay evidence."""

    covariance: np.ndarray
    decay_rate: float
    tail_bound: float
    probe_final: float


def stationary_covariance(p: Problem, c: SolverConfig, t_max: float,
                          decay_tol: float = 1e-4) -> StationaryResult:
    """Covariance of the invariant law for additive noise, by quadrature.

    Q = integral over [0, t_max] of (r(t) b)(r(t) b)^T dt with r the
    fundamental solution and b the constant noise matrix, left-point
    rule on the solver grid (which makes it exactly the long-time
    covariance of the discrete chain itself).  The probe |r(t) b|
    must decay below decay_tol on the late window; otherwise there is
    no evidence of an invariant law and the routine refuses.

    Raises:
      ValueError: noise is not additive.
      RuntimeError: probe not decayed by t_max.
    """
    if not getattr(p.noise, "is_additive", False):
        raise ValueError("stationary covariance requires additive noise")
    b = np.atleast_2d(np.asarray(p.noise(np.zeros(p.d), p.f0), dtype=float))
    n = round(t_max / c.dt)
    if abs(t_max - n * c.dt) > 1e-9 or n < 1:
        raise ValueError(f"t_max={t_max} is not a positive multiple of dt")
    r = fundamental_matrices(p.drift, p.delay, c.n_cells, n)
    g = np.einsum("kij,jm->kim", r, b)
    norms = np.linalg.norm(g, axis=(1, 2))
    late = float(norms[int(0.9 * n):].max())
    if late > decay_tol:
        raise RuntimeError(
            f"semigroup not exponentially stable on probe: sup over late window "
            f"{late:.3e} exceeds {decay_tol:.3e} by t_max={t_max}"
        )
    mid = float(norms[int(0.45 * n): int(0.55 * n)].max())
    span = 0.45 * n * c.dt
    rate = float(np.log(max(mid, 1e-300) / max(late, 1e-300)) / span) if mid > late > 0 else np.inf
    tail = float(late**2 / (2 * rate)) if np.isfinite(rate) and rate > 0 else 0.0
    Q = c.dt * np.einsum("kim,kjm->ij", g[:n], g[:n])
    return StationaryResult(covariance=Q, decay_rate=rate, tail_bound=tail,
                            probe_final=late)


@dataclass(frozen=True)
class FactorizationReport:
    """Reconstruction-vs-direct comparison of the stochastic convolution."""

    alpha: float
    q: float
    dt: float
    n_cells: int
    errors: np.ndarray
    sup_error: float
    convolution_scale: float


def _cell_weight_lower(lags: np.ndarray, alpha: float, dt: float) -> np.ndarray:
    """Cell averages of (t_l - u)^(-alpha): exact integral over each cell / dt.

    lags are the integers l - k >= 1; the value for lag g is
    ((g dt)^(1-a) - ((g-1) dt)^(1-a)) / ((1-a) dt).
    """
    e = 1.0 - alpha
    return ((lags * dt) ** e - ((lags - 1) * dt) ** e) / (e * dt)


def _cell_weight_upper(lags: np.ndarray, alpha: float, dt: float) -> np.ndarray:
    """Exact integrals of (t_j - s)^(alpha-1) over cells at integer lags >= 1."""
    return ((lags * dt) ** alpha - ((lags - 1) * dt) ** alpha) / alpha


def factorization_check(p: Problem, c: SolverConfig, W: BrownianPath, alpha: float,
                        q: float = 4.0) -> tuple[float, FactorizationReport]:
    """Rebuild the stochastic convolution through its weighted intermediate.

    The intermediate process carries the weight (t-u)^(-alpha) inside
    the stochastic sum; applying the (alpha-1)-weighted deterministic
    smoothing and the sin(pi alpha)/pi factor must return the plain
    convolution.  Errors are measured in the product norm (head plus
    window L2) on every grid point and should fall as dt does, with
    the singular weights integrated in closed form per cell.

    Raises:
      ValueError: alpha outside (1/q, 1/2).
    """
    if not (1.0 / q < alpha < 0.5):
        raise ValueError(f"alpha={alpha} outside (1/q, 1/2) for q={q}")
    n = round(p.horizon / c.dt)
    N, d, dt = c.n_cells, p.d, c.dt
    path = solve_direct(p, c, W)
    v = np.einsum("kim,km->ki", path.noise_matrices, W.increments[:n])
    r = fundamental_matrices(p.drift, p.delay, N, n)

    psi2_head = convolve_matvec(r, v)
    shifted = np.concatenate([np.zeros((1, d, d)), r[:n]], axis=0)
    psi2_hat = convolve_matvec(shifted, v)  # hat[i+1] = sum_{k<=i} r[i-k] v_k

    # propagated noise vectors: G[k, i] = r[i] @ v[k]
    G = np.einsum("lij,kj->kli", r, v)

    psi1_head = np.zeros((n, d))
    psi1_tail = np.zeros((n, N, d))
    for l in range(1, n):
        k = np.arange(l)
        cbar = _cell_weight_lower(l - k, alpha, dt)
        psi1_head[l] = np.einsum("k,ki->i", cbar, G[k, l - k])
        for kk in range(l):
            lag = l - kk
            reach = min(lag, N)
            # window cells N-reach..N-1 of the evolved noise state hold
            # its heads at local steps lag-reach..lag-1
            psi1_tail[l, N - reach:] += cbar[kk] * G[kk, lag - reach : lag]

    idxm, wm, densm = lower_measure(p.delay, N, d)
    H_E = lifted_evolve_batch(p.drift, idxm, wm, densm, psi1_head, psi1_tail, dt, n)

    factor = np.sin(np.pi * alpha) / np.pi
    h = 1.0 / N
    errors = np.zeros(n + 1)
    cells = np.arange(N)
    for j in range(1, n + 1):
        l = np.arange(j)
        w_up = _cell_weight_upper(j - l, alpha, dt)
        head_recon = factor * np.einsum("l,li->i", w_up, H_E[l, j - l])
        # direct tail of the convolution at time j via its propagated heads
        i = j + cells - N
        valid = i >= 0
        tail_direct = np.zeros((N, d))
        tail_direct[valid] = psi2_hat[i[valid] + 1]
        # reconstructed tail: evolved-state windows, looked up from
        # recorded heads where the evolution has overwritten the cell
        I = (j - l)[:, None] + cells[None, :]
        from_heads = I >= N
        ih = np.clip(I - N, 0, n)
        it = np.clip(I, 0, N - 1)
        lcol = l[:, None]
        ev_tails = np.where(from_heads[:, :, None], H_E[lcol, ih], psi1_tail[lcol, it])
        tail_recon = factor * np.einsum("l,lcd->cd", w_up, ev_tails)
        dh = psi2_head[j] - head_recon
        dtl = tail_direct - tail_recon
        errors[j] = np.sqrt(np.sum(dh**2) + h * np.sum(dtl**2))
    scale = float(np.max(np.linalg.norm(psi2_head, axis=1)))
    sup = float(errors.max())
    return sup, FactorizationReport(alpha=alpha, q=q, dt=dt, n_cells=N,
                                    errors=errors, sup_error=sup,
                                    convolution_scale=scale)
