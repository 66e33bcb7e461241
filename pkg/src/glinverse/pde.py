"""Crank-Nicolson forward solver and its time-reversed discrete adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linsolve import CnOperators
from .mesh import Grid2D

FORCING_RULES = ("left", "trapezoid")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``y^0 .. y^Nt`` stored row-wise, shape ``(Nt + 1, m)``."""

    states: np.ndarray
    grid: Grid2D

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Adjoint levels ``phi^0 .. phi^Nt`` plus the lifted terms used by the
    exact gradient.

    ``lifted[n] = M-^{-H} phi^{n+1}`` for ``n = 0 .. Nt-1``.  Because ``M-^H``
    and ``M+^H`` commute, ``phi^n = M+^H lifted[n]``, so both come out of a
    single solve per step.
    """

    states: np.ndarray
    lifted: np.ndarray
    grid: Grid2D


def _check_field(grid: Grid2D, v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.complex128)
    if v.shape != (grid.m,):
        raise ValueError(f"{name} must have length {grid.m}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has a non-finite entry at index {int(np.flatnonzero(~np.isfinite(v))[0])}")
    return v


def step_weights(Nt: int, forcing_rule: str):
    """Per-step forcing combination as ``[(level, weight), ...]`` lists.

    Step ``k`` (from ``t^k`` to ``t^{k+1}``) adds ``dt * sum(w * f^level)``.
    The trapezoid rule extends the control with ``f^Nt := f^{Nt-1}`` so the
    control keeps ``Nt`` levels.
    """
    if forcing_rule == "left":
        return [[(k, 1.0)] for k in range(Nt)]
    if forcing_rule == "trapezoid":
        out = [[(k, 0.5), (k + 1, 0.5)] for k in range(Nt - 1)]
        out.append([(Nt - 1, 1.0)])
        return out
    raise ValueError(f"unknown forcing rule {forcing_rule!r}, expected one of {FORCING_RULES}")


def forward(grid: Grid2D, ops: CnOperators, y0, f, forcing_rule: str = "left") -> Trajectory:
    """March ``M- y^{n+1} = M+ y^n + dt F^n`` from ``y^0 = y0``.

    ``f`` has shape ``(Nt, m)``.  With ``forcing_rule="left"`` the step
    forcing is ``F^n = f^n``; with ``"trapezoid"`` it is
    ``(f^n + f^{n+1}) / 2``.
    """
    y0 = _check_field(grid, y0, "y0")
    f = np.asarray(f, dtype=np.complex128)
    if f.shape != (grid.Nt, grid.m):
        raise ValueError(f"forcing must have shape {(grid.Nt, grid.m)}, got {f.shape}")
    if not np.all(np.isfinite(f)):
        n, k = np.argwhere(~np.isfinite(f))[0]
        raise ValueError(f"forcing has a non-finite entry at level {n}, node {k}")
    weights = step_weights(grid.Nt, forcing_rule)

    states = np.empty((grid.Nt + 1, grid.m), dtype=np.complex128)
    states[0] = y0
    dt = grid.dt
    for n in range(grid.Nt):
        rhs = ops.Mplus @ states[n]
        for level, w in weights[n]:
            rhs += (dt * w) * f[level]
        states[n + 1] = ops.fact.solve(rhs)
    return Trajectory(states, grid)


def observe(traj: Trajectory) -> np.ndarray:
    """Final state ``y^Nt`` (a copy)."""
    return traj.final.copy()


def adjoint(grid: Grid2D, ops: CnOperators, terminal) -> AdjointTrajectory:
    """Backward recursion ``M-^H phi^n = M+^H phi^{n+1}``, ``phi^Nt = terminal``."""
    terminal = _check_field(grid, terminal, "terminal")
    states = np.empty((grid.Nt + 1, grid.m), dtype=np.complex128)
    lifted = np.empty((grid.Nt, grid.m), dtype=np.complex128)
    states[-1] = terminal
    for n in range(grid.Nt - 1, -1, -1):
        lifted[n] = ops.fact_h.solve(states[n + 1])
        states[n] = ops.MplusH @ lifted[n]
    return AdjointTrajectory(states, lifted, grid)


def duality_mismatch(grid: Grid2D, ops: CnOperators, f, v) -> float:
    """Relative gap between ``(v, y^Nt)_h`` and ``dt * sum_n (M-^{-H} phi^{n+1}, f^n)_h``.

    ``y`` solves the forward scheme with ``y0 = 0`` and left-point forcing
    ``f``; ``phi`` solves the adjoint recursion with terminal value ``v``.
    Both pairings are the complex (sesquilinear) ones, so the gap vanishes
    up to rounding iff the adjoint recursion is the exact transpose.
    """
    v = _check_field(grid, v, "v")
    traj = forward(grid, ops, np.zeros(grid.m, dtype=np.complex128), f, "left")
    adj = adjoint(grid, ops, v)
    lhs = np.vdot(v, traj.final) * grid.cell_area
    rhs = grid.dt * grid.cell_area * np.sum(np.conj(adj.lifted) * np.asarray(f))
    scale = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
    return float(abs(lhs - rhs) / scale)
