"""Problem/solver configuration files: flat INI sections, matrices row-major.

Schema (the single source of truth for the CLI):

    [problem]
    d = 1                  ; state dimension
    m = 1                  ; noise dimension
    drift = -1.0           ; d*d entries, row-major, comma-separated
    p = 2.0                ; optional, default 2
    x0 = 1.0               ; d entries
    f0 = constant: 1.0     ; d entries, or cells: c1,..,cd; c1,..,cd; ...
    horizon = 2.0
    noise_base = 0.5       ; d*m entries, row-major (optional, default 0)
    noise_head_gains = ... ; d*d*m entries, gain[j] row-major, j outermost (optional)
    noise_tail_gains = ... ; same layout (optional)
    noise_tail_loc = -1.0  ; window node the tail gains read (optional)

    [delay.atoms]          ; optional section, one atom per key
    atom1 = -1.0, -0.8     ; theta, then d*d weight entries row-major

    [delay.density]        ; optional section
    constant = 0.3         ; d*d entries, or cells = g1; g2; ... (N groups)

    [solver]
    n_cells = 100
    dt = 0.01
    seed = 42
    mc_paths = 10000
    tolerance = 1e-9

Noise is always the affine field; a black-box noise map cannot be
expressed in a config file and is constructed in code instead.
"""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .model import AffineNoiseField, DelayMeasure, Problem, SolverConfig
from .segments import Segment, constant_segment

__all__ = ["ConfigError", "load_config", "refine_problem"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def _floats(text: str, count: int | None, what: str) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in text.replace(",", " ").split()])
    except ValueError as e:
        raise ConfigError(f"{what}: {e}") from None
    if count is not None and vals.size != count:
        raise ConfigError(f"{what}: expected {count} numbers, got {vals.size}")
    return vals


def _parse_f0(text: str, d: int, n_cells: int) -> Segment:
    text = text.strip()
    if text.startswith("constant:"):
        return constant_segment(_floats(text[9:], d, "f0 constant"), n_cells)
    if text.startswith("cells:"):
        groups = [g for g in text[6:].split(";") if g.strip()]
        if len(groups) != n_cells:
            raise ConfigError(f"f0 cells: expected {n_cells} groups, got {len(groups)}")
        return Segment(np.stack([_floats(g, d, "f0 cell") for g in groups]))
    # bare numbers are shorthand for a constant window
    return constant_segment(_floats(text, d, "f0"), n_cells)


def _parse_delay(cp: configparser.ConfigParser, d: int, n_cells: int) -> DelayMeasure:
    atoms = []
    if cp.has_section("delay.atoms"):
        for key in cp["delay.atoms"]:
            vals = _floats(cp["delay.atoms"][key], 1 + d * d, f"delay atom {key}")
            atoms.append((float(vals[0]), vals[1:].reshape(d, d)))
    density = None
    if cp.has_section("delay.density"):
        sec = cp["delay.density"]
        if "constant" in sec:
            M = _floats(sec["constant"], d * d, "density constant").reshape(d, d)
            density = np.tile(M, (n_cells, 1, 1))
        elif "cells" in sec:
            groups = [g for g in sec["cells"].split(";") if g.strip()]
            if len(groups) != n_cells:
                raise ConfigError(f"density cells: expected {n_cells} groups, got {len(groups)}")
            density = np.stack([_floats(g, d * d, "density cell").reshape(d, d)
                                for g in groups])
        else:
            raise ConfigError("delay.density section needs 'constant' or 'cells'")
    return DelayMeasure(atoms=tuple(atoms), density=density)


def load_config(path: str | Path) -> tuple[Problem, SolverConfig]:
    """Read a problem and solver configuration; raises ConfigError on any defect."""
    # '#' only: ';' separates cell groups in multi-cell values
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in ("problem", "solver"):
        if not cp.has_section(section):
            raise ConfigError(f"missing [{section}] section")
    try:
        prob = cp["problem"]
        d = prob.getint("d")
        m = prob.getint("m")
        horizon = prob.getfloat("horizon")
        p_exp = prob.getfloat("p", fallback=2.0)
        sol = cp["solver"]
        n_cells = sol.getint("n_cells")
        dt = sol.getfloat("dt", fallback=None)
        if dt is None:
            dt = 1.0 / n_cells
        cfg = SolverConfig(n_cells=n_cells, dt=dt,
                           seed=sol.getint("seed", fallback=0),
                           mc_paths=sol.getint("mc_paths", fallback=10_000),
                           tolerance=sol.getfloat("tolerance", fallback=1e-9))
    except (configparser.Error, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    if d is None or m is None or horizon is None or n_cells is None:
        raise ConfigError("d, m, horizon, and n_cells are required")

    drift = _floats(prob.get("drift", ""), d * d, "drift").reshape(d, d)
    x0 = _floats(prob.get("x0", ""), d, "x0")
    f0 = _parse_f0(prob.get("f0", fallback="0.0 " * d), d, n_cells)
    delay = _parse_delay(cp, d, n_cells)

    base = (_floats(prob["noise_base"], d * m, "noise_base").reshape(d, m)
            if "noise_base" in prob else np.zeros((d, m)))
    hg = (_floats(prob["noise_head_gains"], d * d * m, "noise_head_gains").reshape(d, d, m)
          if "noise_head_gains" in prob else np.zeros((d, d, m)))
    tg = (_floats(prob["noise_tail_gains"], d * d * m, "noise_tail_gains").reshape(d, d, m)
          if "noise_tail_gains" in prob else np.zeros((d, d, m)))
    tail_loc = prob.getfloat("noise_tail_loc", fallback=-1.0)
    noise = AffineNoiseField(base=base, head_gains=hg, tail_gains=tg, tail_loc=tail_loc)

    problem = Problem(d=d, m=m, drift=drift, delay=delay, noise=noise,
                      x0=x0, f0=f0, horizon=horizon, p=p_exp)
    return problem, cfg


def refine_problem(p: Problem, factor: int) -> Problem:
    """Same problem on a grid refined by an integer factor.

    Piecewise-constant data refine exactly: window cells and density
    cells are repeated; atoms stay where they are (grid nodes of the
    coarse grid are nodes of the fine one).
    """
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return p
    f0 = Segment(np.repeat(p.f0.values, factor, axis=0))
    density = (np.repeat(p.delay.density, factor, axis=0)
               if p.delay.density is not None else None)
    delay = DelayMeasure(atoms=p.delay.atoms, density=density)
    return Problem(d=p.d, m=p.m, drift=p.drift, delay=delay, noise=p.noise,
                   x0=p.x0, f0=f0, horizon=p.horizon, p=p.p)
