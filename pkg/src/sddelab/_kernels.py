"""Hot loops behind the solvers, in compiled and plain-numpy form.

Two interchangeable implementations of the stepping and convolution
kernels: a numba-jitted one (per-path scalar loops) and a vectorized
numpy one (loops over time, broadcasts over paths).  The active backend
is chosen by the SDDELAB_BACKEND environment variable:

    auto   use numba when importable, else numpy (default)
    numba  require numba, fail at import if unavailable
    numpy  force the fallback

`set_backend` switches at runtime; `implementations` hands out a named
backend directly so differential tests and benchmarks can pin both.

All kernels take the delay measure in pre-lowered form: atom cell
indices (the value n_cells denotes a head read), atom weight matrices,
and an already h-scaled density array (shape (0, d, d) when absent).
The history window lives in a ring buffer: logical cell c of the window
at the current step sits at physical slot (ptr + c) % N, and one step
writes the pre-update head at ptr then advances ptr.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "em_heads_batch",
    "lifted_evolve_batch",
    "convolve_matvec",
    "active_backend",
    "set_backend",
    "implementations",
    "selected_backend",
]

_ENV_FLAG = "SDDELAB_BACKEND"


# ---------------------------------------------------------------- numpy

def _em_heads_batch_np(A, atom_idx, atom_w, dens_w, f0_vals, x0, dt, dW,
                       base, head_g, tail_g, tail_idx, record_stride):
    P, n_steps, m = dW.shape
    N, d = f0_vals.shape
    ring = np.tile(f0_vals, (P, 1, 1))
    x = np.tile(x0, (P, 1))
    ptr = 0
    n_rec = n_steps // record_stride + 1
    out = np.empty((P, n_rec, d))
    out[:, 0] = x
    has_dens = dens_w.shape[0] > 0
    logical = np.arange(N)
    for k in range(n_steps):
        drift = x @ A.T
        for a in range(atom_idx.shape[0]):
            idx = atom_idx[a]
            v = x if idx == N else ring[:, (ptr + idx) % N, :]
            drift += v @ atom_w[a].T
        if has_dens:
            gathered = ring[:, (ptr + logical) % N, :]
            drift += np.einsum("cij,pcj->pi", dens_w, gathered)
        B = base[None, :, :] + np.einsum("pj,jim->pim", x, head_g)
        vt = x if tail_idx == N else ring[:, (ptr + tail_idx) % N, :]
        B = B + np.einsum("pj,jim->pim", vt, tail_g)
        x_new = x + dt * drift + np.einsum("pim,pm->pi", B, dW[:, k, :])
        ring[:, ptr, :] = x
        ptr = (ptr + 1) % N
        x = x_new
        if (k + 1) % record_stride == 0:
            out[:, (k + 1) // record_stride] = x
    return out


def _lifted_evolve_batch_np(A, atom_idx, atom_w, dens_w, heads0, tails0, dt, n_steps):
    P, d = heads0.shape
    N = tails0.shape[1]
    ring = tails0.copy()
    x = heads0.copy()
    ptr = 0
    out = np.empty((P, n_steps + 1, d))
    out[:, 0] = x
    has_dens = dens_w.shape[0] > 0
    logical = np.arange(N)
    for k in range(n_steps):
        drift = x @ A.T
        for a in range(atom_idx.shape[0]):
            idx = atom_idx[a]
            v = x if idx == N else ring[:, (ptr + idx) % N, :]
            drift += v @ atom_w[a].T
        if has_dens:
            gathered = ring[:, (ptr + logical) % N, :]
            drift += np.einsum("cij,pcj->pi", dens_w, gathered)
        x_new = x + dt * drift
        ring[:, ptr, :] = x
        ptr = (ptr + 1) % N
        x = x_new
        out[:, k + 1] = x
    return out


def _convolve_matvec_np(R, V):
    n = V.shape[0]
    d = R.shape[1]
    out = np.zeros((n + 1, d))
    for j in range(1, n + 1):
        # R[j], R[j-1], ..., R[1] against V[0..j-1]
        out[j] = np.einsum("kij,kj->i", R[j:0:-1], V[:j])
    return out


def _numpy_impl() -> dict:
    return {
        "em_heads_batch": _em_heads_batch_np,
        "lifted_evolve_batch": _lifted_evolve_batch_np,
        "convolve_matvec": _convolve_matvec_np,
    }


# ---------------------------------------------------------------- numba

def _numba_impl() -> dict:
    from numba import njit

    @njit(cache=True)
    def em_nb(A, atom_idx, atom_w, dens_w, f0_vals, x0, dt, dW,
              base, head_g, tail_g, tail_idx, record_stride):
        P, n_steps, m = dW.shape
        N, d = f0_vals.shape
        n_atoms = atom_idx.shape[0]
        has_dens = dens_w.shape[0] > 0
        n_rec = n_steps // record_stride + 1
        out = np.empty((P, n_rec, d))
        for p in range(P):
            ring = f0_vals.copy()
            x = x0.copy()
            ptr = 0
            for i in range(d):
                out[p, 0, i] = x[i]
            for k in range(n_steps):
                drift = np.zeros(d)
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += A[i, j] * x[j]
                    drift[i] = acc
                for a in range(n_atoms):
                    idx = atom_idx[a]
                    if idx == N:
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += atom_w[a, i, j] * x[j]
                            drift[i] += acc
                    else:
                        slot = (ptr + idx) % N
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += atom_w[a, i, j] * ring[slot, j]
                            drift[i] += acc
                if has_dens:
                    for c in range(N):
                        slot = (ptr + c) % N
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += dens_w[c, i, j] * ring[slot, j]
                            drift[i] += acc
                x_new = np.empty(d)
                for i in range(d):
                    x_new[i] = x[i] + dt * drift[i]
                for i in range(d):
                    for mm in range(m):
                        b = base[i, mm]
                        for j in range(d):
                            b += x[j] * head_g[j, i, mm]
                        if tail_idx == N:
                            for j in range(d):
                                b += x[j] * tail_g[j, i, mm]
                        else:
                            slot = (ptr + tail_idx) % N
                            for j in range(d):
                                b += ring[slot, j] * tail_g[j, i, mm]
                        x_new[i] += b * dW[p, k, mm]
                for i in range(d):
                    ring[ptr, i] = x[i]
                ptr = (ptr + 1) % N
                x = x_new
                if (k + 1) % record_stride == 0:
                    r = (k + 1) // record_stride
                    for i in range(d):
                        out[p, r, i] = x[i]
        return out

    @njit(cache=True)
    def lifted_nb(A, atom_idx, atom_w, dens_w, heads0, tails0, dt, n_steps):
        P, d = heads0.shape
        N = tails0.shape[1]
        n_atoms = atom_idx.shape[0]
        has_dens = dens_w.shape[0] > 0
        out = np.empty((P, n_steps + 1, d))
        for p in range(P):
            ring = tails0[p].copy()
            x = heads0[p].copy()
            ptr = 0
            for i in range(d):
                out[p, 0, i] = x[i]
            for k in range(n_steps):
                drift = np.zeros(d)
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += A[i, j] * x[j]
                    drift[i] = acc
                for a in range(n_atoms):
                    idx = atom_idx[a]
                    if idx == N:
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += atom_w[a, i, j] * x[j]
                            drift[i] += acc
                    else:
                        slot = (ptr + idx) % N
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += atom_w[a, i, j] * ring[slot, j]
                            drift[i] += acc
                if has_dens:
                    for c in range(N):
                        slot = (ptr + c) % N
                        for i in range(d):
                            acc = 0.0
                            for j in range(d):
                                acc += dens_w[c, i, j] * ring[slot, j]
                            drift[i] += acc
                x_new = np.empty(d)
                for i in range(d):
                    x_new[i] = x[i] + dt * drift[i]
                for i in range(d):
                    ring[ptr, i] = x[i]
                ptr = (ptr + 1) % N
                x = x_new
                for i in range(d):
                    out[p, k + 1, i] = x[i]
        return out

    @njit(cache=True)
    def conv_nb(R, V):
        n = V.shape[0]
        d = R.shape[1]
        out = np.zeros((n + 1, d))
        for j in range(1, n + 1):
            for k in range(j):
                lag = j - k
                for i in range(d):
                    acc = 0.0
                    for q in range(d):
                        acc += R[lag, i, q] * V[k, q]
                    out[j, i] += acc
        return out

    return {
        "em_heads_batch": em_nb,
        "lifted_evolve_batch": lifted_nb,
        "convolve_matvec": conv_nb,
    }


# ------------------------------------------------------------ dispatch

_impl_cache: dict[str, dict] = {}


def implementations(name: str) -> dict:
    """Raw kernel table for a named backend ("numba" or "numpy")."""
    if name not in _impl_cache:
        if name == "numpy":
            _impl_cache[name] = _numpy_impl()
        elif name == "numba":
            _impl_cache[name] = _numba_impl()
        else:
            raise ValueError(f"unknown backend {name!r}")
    return _impl_cache[name]


def selected_backend() -> str:
    """Backend the environment asks for, with auto-detection resolved."""
    flag = os.environ.get(_ENV_FLAG, "auto").strip().lower()
    if flag not in ("auto", "numba", "numpy"):
        raise ValueError(f"{_ENV_FLAG} must be auto, numba, or numpy; got {flag!r}")
    if flag == "numpy":
        return "numpy"
    if flag == "numba":
        return "numba"
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


_active_name = selected_backend()
_active = implementations(_active_name)


def active_backend() -> str:
    return _active_name


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous name."""
    global _active_name, _active
    previous = _active_name
    _active = implementations(name)
    _active_name = name
    return previous


def _lowered(a, dtype=float) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=dtype))


def em_heads_batch(A, atom_idx, atom_w, dens_w, f0_vals, x0, dt, dW,
                   base, head_g, tail_g, tail_idx, record_stride=1) -> np.ndarray:
    """Euler steps with affine noise for a batch of paths sharing (x0, f0).

    Args:
      A: (d, d) drift matrix.
      atom_idx: (n_atoms,) int cell indices, n_cells meaning a head read.
      atom_w: (n_atoms, d, d) atom weights.
      dens_w: (N, d, d) h-scaled density, or (0, d, d).
      f0_vals: (N, d) initial window, oldest cell first.
      x0: (d,) initial head.
      dt: step size.
      dW: (P, n_steps, m) Brownian increments.
      base, head_g, tail_g, tail_idx: affine noise data; gains have shape
        (d, d, m) with gain[j] applied to state component j; tail_idx is
        the window read cell (n_cells for a head read).
      record_stride: record the head every this many steps.

    Returns:
      (P, n_steps // record_stride + 1, d) recorded heads, slot 0 = x0.
    """
    dW = _lowered(dW)
    n_steps = dW.shape[1]
    if n_steps % record_stride != 0:
        raise ValueError("record_stride must divide n_steps")
    return _active["em_heads_batch"](
        _lowered(A), _lowered(atom_idx, np.int64), _lowered(atom_w), _lowered(dens_w),
        _lowered(f0_vals), _lowered(x0), float(dt), dW,
        _lowered(base), _lowered(head_g), _lowered(tail_g), int(tail_idx),
        int(record_stride),
    )


def lifted_evolve_batch(A, atom_idx, atom_w, dens_w, heads0, tails0, dt, n_steps) -> np.ndarray:
    """Deterministic lifted flow for a batch of initial states.

    heads0: (P, d); tails0: (P, N, d) oldest cell first.  Returns the
    (P, n_steps + 1, d) head trajectories; intermediate and final
    windows follow from the head history by the shift structure.
    """
    return _active["lifted_evolve_batch"](
        _lowered(A), _lowered(atom_idx, np.int64), _lowered(atom_w), _lowered(dens_w),
        _lowered(heads0), _lowered(tails0), float(dt), int(n_steps),
    )


def convolve_matvec(R, V) -> np.ndarray:
    """out[j] = sum over k < j of R[j - k] @ V[k]; out[0] = 0.

    R: (n + 1, d, d) lag matrices (R[0] unused); V: (n, d).
    """
    R = _lowered(R)
    V = _lowered(V)
    if R.shape[0] != V.shape[0] + 1:
        raise ValueError("R must have one more entry than V")
    return _active["convolve_matvec"](R, V)
