"""Terminal-tracking Tikhonov objective and its adjoint gradient.

Gradients are Riesz representers with respect to the control inner product:
``<<., .>>_{h,t}`` for full space-time controls and ``<., .>_h`` for the
spatial factor ``q`` of a separable control ``f^n = q g^n``.  A directional
derivative along ``df`` is therefore ``<<grad, df>>``, and the derivative with
respect to one raw real coordinate is the matching part of ``grad`` times the
quadrature weight (``dx dy dt`` or ``dx dy``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mesh
from .linsolve import CnOperators
from .mesh import Grid2D
from .pde import FORCING_RULES, Trajectory, adjoint, forward, step_weights

MODES = ("full", "separable")
# "exact" is the discrete adjoint of the CN recursion; "paper" drops the
# M-^{-H} lift (phi^{n+1} + eps f^n); "dt" scales phi^{n+1} by dt.
GRADIENT_MODES = ("exact", "paper", "dt")


class NonFiniteError(ValueError):
    """Raised when an array carries NaN/inf; ``index`` locates the first one."""

    def __init__(self, name, index):
        self.name = name
        self.index = tuple(int(i) for i in np.atleast_1d(index))
        super().__init__(f"{name} has a non-finite entry at index {self.index}")


def _require_finite(name, arr):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name, np.argwhere(~np.isfinite(arr))[0])


@dataclass(frozen=True, eq=False)
class Control:
    """Source unknown.

    ``mode="full"``: ``values`` holds ``f^0 .. f^{Nt-1}``, shape ``(Nt, m)``.
    ``mode="separable"``: ``values`` is ``q`` (length ``m``) and ``g`` the
    prescribed time samples ``g^0 .. g^{Nt-1}``; only ``q`` is optimized.
    """

    mode: str
    values: np.ndarray
    g: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown control mode {self.mode!r}")
        values = np.array(self.values, dtype=np.complex128)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.mode == "full":
            if values.ndim != 2:
                raise ValueError(f"full control must be 2-D (Nt, m), got shape {values.shape}")
            if self.g is not None:
                raise ValueError("full control takes no time profile g")
        else:
            if values.ndim != 1:
                raise ValueError(f"separable q must be 1-D, got shape {values.shape}")
            if self.g is None:
                raise ValueError("separable control needs a time profile g")
            g = np.array(self.g, dtype=np.complex128).ravel()
            g.setflags(write=False)
            object.__setattr__(self, "g", g)

    @classmethod
    def full(cls, f) -> "Control":
        return cls("full", f)

    @classmethod
    def separable(cls, q, g) -> "Control":
        return cls("separable", q, g)

    @classmethod
    def zeros_like(cls, other: "Control") -> "Control":
        return other.with_values(np.zeros_like(other.values))

    def with_values(self, values) -> "Control":
        return Control(self.mode, values, self.g)

    def levels(self) -> np.ndarray:
        """Space-time samples ``f^n``, shape ``(Nt, m)``."""
        if self.mode == "full":
            return np.array(self.values)
        return np.outer(self.g, self.values)


@dataclass(frozen=True, eq=False)
class InverseProblem:
    grid: Grid2D
    ops: CnOperators
    y0: np.ndarray
    data: np.ndarray
    eps: float = 0.0
    control_mode: str = "separable"
    forcing_rule: str = "left"
    gradient_mode: str = "exact"
    g: np.ndarray | None = field(default=None)

    def __post_init__(self):
        m = self.grid.m
        for name in ("y0", "data"):
            arr = np.array(getattr(self, name), dtype=np.complex128)
            if arr.shape != (m,):
                raise ValueError(f"{name} must have length {m}, got shape {arr.shape}")
            _require_finite(name, arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.eps) or self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.control_mode not in MODES:
            raise ValueError(f"unknown control mode {self.control_mode!r}")
        if self.forcing_rule not in FORCING_RULES:
            raise ValueError(f"unknown forcing rule {self.forcing_rule!r}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.ops.m != m or not np.isclose(self.ops.dt, self.grid.dt, rtol=1e-14, atol=0):
            raise ValueError("operators were assembled for a different grid")
        if self.g is not None:
            g = np.array(self.g, dtype=np.complex128).ravel()
            if g.shape != (self.grid.Nt,):
                raise ValueError(f"g must have {self.grid.Nt} samples, got {g.shape}")
            object.__setattr__(self, "g", g)

    def zero_control(self) -> Control:
        if self.control_mode == "full":
            return Control.full(np.zeros((self.grid.Nt, self.grid.m)))
        g = self.g if self.g is not None else np.ones(self.grid.Nt)
        return Control.separable(np.zeros(self.grid.m), g)

    def check_control(self, c: Control):
        if c.mode != self.control_mode:
            raise ValueError(f"control mode {c.mode!r} does not match problem mode {self.control_mode!r}")
        Nt, m = self.grid.Nt, self.grid.m
        expected = (Nt, m) if c.mode == "full" else (m,)
        if c.values.shape != expected:
            raise ValueError(f"control values must have shape {expected}, got {c.values.shape}")
        if c.mode == "separable" and c.g.shape != (Nt,):
            raise ValueError(f"g must have {Nt} samples, got {c.g.shape}")
        _require_finite("control", c.values)
        if c.g is not None:
            _require_finite("g", c.g)

    # Control-space geometry used by the optimizer.
    def inner(self, x, y) -> float:
        if self.control_mode == "full":
            return mesh.inner_ht(self.grid, x, y)
        return mesh.inner_h(self.grid, x, y)

    def norm(self, x) -> float:
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def coordinate_weight(self) -> float:
        """Quadrature weight linking the gradient to raw-coordinate derivatives."""
        w = self.grid.cell_area
        return w * self.grid.dt if self.control_mode == "full" else w


def control_norm_ht(grid: Grid2D, c: Control) -> float:
    """``||f||_{h,t}`` of the materialized control."""
    if c.mode == "full":
        return mesh.norm_ht(grid, c.values)
    g2 = float(np.sum(np.abs(c.g) ** 2)) * grid.dt
    return mesh.norm_h(grid, c.values) * np.sqrt(g2)


def objective(P: InverseProblem, c: Control):
    """Return ``(J, misfit, trajectory)`` with
    ``J = misfit + eps/2 ||f||_{h,t}^2`` and ``misfit = 1/2 ||y^Nt - data||_h^2``."""
    P.check_control(c)
    f = c.levels()
    traj = forward(P.grid, P.ops, P.y0, f, P.forcing_rule)
    _require_finite("state", traj.states)
    residual = traj.final - P.data
    misfit = 0.5 * mesh.inner_h(P.grid, residual, residual)
    reg = 0.5 * P.eps * control_norm_ht(P.grid, c) ** 2
    return misfit + reg, misfit, traj


def objective_difference(P: InverseProblem, c1: Control, c2: Control) -> float:
    """``J(c1) - J(c2)`` from two forward solves, without subtracting two
    nearly equal objective values.

    Uses ``|u|^2 - |v|^2 = Re(conj(u - v) (u + v))`` on the residuals and on
    the control levels, which keeps central differences with tiny steps
    accurate to roundoff in the state rather than in ``J``.
    """
    P.check_control(c1)
    P.check_control(c2)
    y1 = forward(P.grid, P.ops, P.y0, c1.levels(), P.forcing_rule).final
    y2 = forward(P.grid, P.ops, P.y0, c2.levels(), P.forcing_rule).final
    d_misfit = 0.5 * mesh.inner_h(P.grid, y1 - y2, (y1 - P.data) + (y2 - P.data))
    f1, f2 = c1.levels(), c2.levels()
    d_reg = 0.5 * P.eps * mesh.inner_ht(P.grid, f1 - f2, f1 + f2)
    return d_misfit + d_reg


def _adjoint_sources(P: InverseProblem, traj: Trajectory, mode: str) -> np.ndarray:
    """Per-step adjoint terms ``s_k`` so that ``grad^n = sum_k w_kn s_k``."""
    adj = adjoint(P.grid, P.ops, traj.final - P.data)
    if mode == "exact":
        return adj.lifted
    if mode == "paper":
        return adj.states[1:]
    if mode == "dt":
        return P.grid.dt * adj.states[1:]
    raise ValueError(f"unknown gradient mode {mode!r}")


def _misfit_gradient_levels(P: InverseProblem, traj: Trajectory, mode: str) -> np.ndarray:
    sources = _adjoint_sources(P, traj, mode)
    out = np.zeros_like(sources)
    for k, combo in enumerate(step_weights(P.grid.Nt, P.forcing_rule)):
        for level, w in combo:
            out[level] += w * sources[k]
    return out


def _check_traj(P: InverseProblem, traj: Trajectory):
    if traj.grid != P.grid or traj.states.shape != (P.grid.Nt + 1, P.grid.m):
        raise ValueError("trajectory does not belong to this problem's grid")


def gradient_full(P: InverseProblem, c: Control, traj: Trajectory, mode: str | None = None) -> np.ndarray:
    """Space-time gradient levels ``s^n + eps f^n``, shape ``(Nt, m)``."""
    if c.mode != "full":
        raise ValueError("gradient_full needs a full space-time control")
    _check_traj(P, traj)
    mode = mode or P.gradient_mode
    return _misfit_gradient_levels(P, traj, mode) + P.eps * c.values


def gradient_separable(P: InverseProblem, c: Control, traj: Trajectory, mode: str | None = None) -> np.ndarray:
    """Gradient in ``q``: ``sum_n conj(g^n) (s^n + eps q g^n) dt``."""
    if c.mode != "separable":
        raise ValueError("gradient_separable needs a separable control")
    _check_traj(P, traj)
    mode = mode or P.gradient_mode
    levels = _misfit_gradient_levels(P, traj, mode) + P.eps * c.levels()
    return P.grid.dt * (np.conj(c.g) @ levels)


def gradient(P: InverseProblem, c: Control, traj: Trajectory, mode: str | None = None) -> np.ndarray:
    if c.mode == "full":
        return gradient_full(P, c, traj, mode)
    return gradient_separable(P, c, traj, mode)


def _probe_coordinates(shape, n_probes, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(n_probes, size), replace=False)
    parts = rng.integers(0, 2, size=flat.size)  # 0: real part, 1: imaginary part
    return [(np.unravel_index(k, shape), bool(part)) for k, part in zip(flat, parts)]


def _fd_errors(P, c, n_probes, h_fd, seed, modes):
    P.check_control(c)
    rng = np.random.default_rng(seed)
    probes = _probe_coordinates(c.values.shape, n_probes, rng)
    _, _, traj = objective(P, c)
    grads = {mode: gradient(P, c, traj, mode) for mode in modes}
    weight = P.coordinate_weight()
    worst = {mode: 0.0 for mode in modes}
    for idx, imag in probes:
        step = np.zeros(c.values.shape, dtype=np.complex128)
        step[idx] = 1j * h_fd if imag else h_fd
        fd = objective_difference(P, c.with_values(c.values + step), c.with_values(c.values - step)) / (2.0 * h_fd)
        for mode in modes:
            g = grads[mode][idx]
            analytic = weight * (g.imag if imag else g.real)
            scale = max(abs(fd), abs(analytic))
            err = 0.0 if scale == 0.0 else abs(fd - analytic) / scale
            worst[mode] = max(worst[mode], err)
    return worst


def fd_check(P: InverseProblem, c: Control, n_probes: int = 20, h_fd: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between the adjoint gradient and central
    differences over ``n_probes`` random real/imaginary coordinates."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if not h_fd > 0:
        raise ValueError("h_fd must be positive")
    return _fd_errors(P, c, n_probes, h_fd, seed, [P.gradient_mode])[P.gradient_mode]


def calibrate_gradient(P: InverseProblem, c: Control, n_probes: int = 20, h_fd: float = 1e-6, seed: int = 0):
    """Compare the candidate adjoint scalings against finite differences.

    Returns ``(best_mode, errors)`` where ``errors`` maps each mode in
    :data:`GRADIENT_MODES` to its worst relative error.
    """
    errors = _fd_errors(P, c, n_probes, h_fd, seed, list(GRADIENT_MODES))
    best = min(errors, key=errors.get)
    return best, errors
