"""Polak-Ribiere+ nonlinear conjugate gradient with Armijo backtracking."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .inverse import Control, InverseProblem, control_norm_ht, gradient, objective

logger = logging.getLogger(__name__)

STOP_REASONS = ("tolerance", "k_max", "line_search_failure")


class LineSearchFailure(RuntimeError):
    """Armijo backtracking exhausted ``max_backtracks``.

    ``report`` carries the partial :class:`RunReport` when raised from
    :func:`ncg_minimize`.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class NcgConfig:
    tau: float = 1e-5
    k_max: int = 300
    armijo_c: float = 1e-3
    backtrack_factor: float = 0.5
    alpha0: float = 1.0
    restart_period: int = 5
    rho: float | None = None
    max_backtracks: int = 60
    # "fixed": every line search starts at alpha0.
    # "grow": start at alpha_prev / backtrack_factor after the first step.
    step_init: str = "fixed"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}")
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if self.restart_period < 1:
            raise ValueError(f"restart_period must be >= 1, got {self.restart_period}")
        if self.rho is not None and not self.rho > 0:
            raise ValueError(f"rho must be positive when set, got {self.rho}")
        if self.max_backtracks < 0:
            raise ValueError(f"max_backtracks must be >= 0, got {self.max_backtracks}")
        if self.step_init not in ("fixed", "grow"):
            raise ValueError(f"step_init must be 'fixed' or 'grow', got {self.step_init!r}")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    J: float
    misfit: float
    grad_norm: float
    alpha: float
    beta: float
    backtracks: int
    restart: bool


@dataclass
class RunReport:
    iterations: int
    history: list[IterationRecord]
    initial_control: Control
    final_control: Control
    final_state: np.ndarray
    stop_reason: str
    J0: float
    misfit0: float
    grad_norm0: float

    @property
    def final_J(self) -> float:
        return self.history[-1].J if self.history else self.J0

    @property
    def final_grad_norm(self) -> float:
        return self.history[-1].grad_norm if self.history else self.grad_norm0


def _euclid(x, y) -> float:
    return float(np.vdot(x, y).real)


def pr_plus_beta(r_k, r_km1, inner=_euclid) -> float:
    """``max(0, <<r_k - r_{k-1}, r_k>> / (<<r_{k-1}, r_{k-1}>> + 1e-30))``."""
    r_k = np.asarray(r_k)
    r_km1 = np.asarray(r_km1)
    if r_k.shape != r_km1.shape:
        raise ValueError(f"shape mismatch: {r_k.shape} vs {r_km1.shape}")
    num = inner(r_k - r_km1, r_k)
    den = inner(r_km1, r_km1) + 1e-30
    return max(0.0, num / den)


def armijo(eval_J, f, d, r, cfg: NcgConfig, *, J0=None, alpha0=None, inner=_euclid, project=None):
    """Backtracking on ``alpha0 * backtrack_factor**j``.

    Accepts the first ``alpha`` with
    ``J(P(f + alpha d)) <= J(f) + c alpha <<r, d>>`` where ``P`` is
    ``project`` (identity if ``None``).  Returns ``(alpha, J_new, backtracks)``.
    """
    slope = inner(r, d)
    if not slope < 0:
        raise ValueError(f"d is not a descent direction: <<r, d>> = {slope:.3e} >= 0")
    if J0 is None:
        J0 = eval_J(f)
    alpha = cfg.alpha0 if alpha0 is None else alpha0
    for j in range(cfg.max_backtracks + 1):
        trial = f + alpha * d
        if project is not None:
            trial = project(trial)
        J_new = eval_J(trial)
        if J_new <= J0 + cfg.armijo_c * alpha * slope:
            return alpha, J_new, j
        alpha *= cfg.backtrack_factor
    raise LineSearchFailure(
        f"Armijo condition not met after {cfg.max_backtracks} backtracks (last alpha={alpha / cfg.backtrack_factor:.3e})"
    )


def project_ball(grid, c: Control, rho: float) -> Control:
    """Radial projection onto ``{f : ||f||_{h,t} <= rho}``; separable controls scale ``q``."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    norm = control_norm_ht(grid, c)
    if norm <= rho:
        return c
    return c.with_values(c.values * (rho / norm))


class _Evaluator:
    """Caches the forward trajectory of the most recent objective call."""

    def __init__(self, P: InverseProblem, template: Control):
        self.P = P
        self.template = template
        self.last = None

    def control(self, x) -> Control:
        return self.template.with_values(x)

    def __call__(self, x) -> float:
        J, misfit, traj = objective(self.P, self.control(x))
        self.last = (x, J, misfit, traj)
        return J


def ncg_minimize(P: InverseProblem, c0: Control | None, cfg: NcgConfig, callback=None) -> RunReport:
    """Minimize the objective of ``P`` starting from ``c0`` (zero if ``None``).

    Stops when ``||r_k|| < tau`` in the control norm of ``P`` or after
    ``k_max`` iterations.  ``callback(record)`` is called after each
    accepted step.
    """
    if c0 is None:
        c0 = P.zero_control()
    P.check_control(c0)
    grid = P.grid
    inner = P.inner
    project = None  # identity unless a ball radius is set
    if cfg.rho is not None:
        c0 = project_ball(grid, c0, cfg.rho)
        template = c0
        project = lambda x: project_ball(grid, template.with_values(x), cfg.rho).values  # noqa: E731

    evaluator = _Evaluator(P, c0)
    x = np.array(c0.values)
    J = evaluator(x)
    _, _, misfit, traj = evaluator.last
    r = gradient(P, evaluator.control(x), traj)
    r_norm = np.sqrt(max(inner(r, r), 0.0))
    J0, misfit0, r_norm0 = J, misfit, r_norm

    history: list[IterationRecord] = []
    d_prev = r_prev = None
    alpha_prev = None
    k = 0

    def report(stop):
        return RunReport(
            iterations=len(history),
            history=history,
            initial_control=c0,
            final_control=evaluator.control(x),
            final_state=traj.final.copy(),
            stop_reason=stop,
            J0=J0,
            misfit0=misfit0,
            grad_norm0=r_norm0,
        )

    while r_norm >= cfg.tau and k < cfg.k_max:
        beta = 0.0
        restart = k == 0 or k % cfg.restart_period == 0
        if not restart:
            if inner(r, d_prev) >= 0:
                restart = True
            else:
                beta = pr_plus_beta(r, r_prev, inner)
        d = -r if restart else -r + beta * d_prev
        if not restart and inner(r, d) >= 0:
            d, beta, restart = -r, 0.0, True

        if cfg.step_init == "grow" and alpha_prev is not None:
            alpha_init = alpha_prev / cfg.backtrack_factor
        else:
            alpha_init = cfg.alpha0
        try:
            alpha, J_new, nb = armijo(
                evaluator, x, d, r, cfg, J0=J, alpha0=alpha_init, inner=inner, project=project
            )
        except LineSearchFailure as exc:
            exc.report = report("line_search_failure")
            raise
        x_new, _, misfit, traj = evaluator.last
        r_prev, d_prev = r, d
        x, J = x_new, J_new
        r = gradient(P, evaluator.control(x), traj)
        r_norm = np.sqrt(max(inner(r, r), 0.0))
        alpha_prev = alpha
        record = IterationRecord(k, J, misfit, r_norm, alpha, beta, nb, restart)
        history.append(record)
        logger.debug("k=%d J=%.6e misfit=%.6e |r|=%.3e alpha=%.3e bt=%d", k, J, misfit, r_norm, alpha, nb)
        if callback is not None:
            callback(record)
        k += 1

    return report("tolerance" if r_norm < cfg.tau else "k_max")
