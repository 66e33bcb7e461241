"""Benchmark sources, synthetic data, noise, error metrics and table runs."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mesh
from .inverse import Control, InverseProblem
from .linsolve import assemble_cn
from .mesh import Grid2D, build_grid
from .optimize import NcgConfig, RunReport, ncg_minimize
from .pde import forward

EXAMPLES = ("ex1", "ex2", "ex3", "ex4")
TABLES = ("T1", "T2", "T3", "T4")
SCALES = ("paper", "desk")
SIGMA = 0.12


def _gauss(X, Y):
    return np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / (2 * SIGMA**2))


def _sines(X, Y, kx=1, ky=1):
    return np.sin(kx * np.pi * X) * np.sin(ky * np.pi * Y)


def source_function(example_id: str):
    """Analytic ground truth: ``q(x, y)`` for ex1-ex3, ``f(x, y, t)`` for ex4."""
    if example_id == "ex1":
        return lambda X, Y: _sines(X, Y, 2, 2) + 0j
    if example_id == "ex2":
        return lambda X, Y: 1j * _gauss(X, Y) * _sines(X, Y)
    if example_id == "ex3":
        return lambda X, Y: _sines(X, Y, 2, 2) + 0.7j * _sines(X, Y, 3, 2)
    if example_id == "ex4":
        return lambda X, Y, t: 1j * np.exp(
            -((X - 0.5) ** 2 + (Y - 0.5) ** 2) * t / (2 * SIGMA**2)
        ) * _sines(X, Y)
    raise ValueError(f"unknown example {example_id!r}, expected one of {EXAMPLES}")


DESCRIPTIONS = {
    "ex1": "smooth real source q = sin(2 pi x) sin(2 pi y)",
    "ex2": "imaginary Gaussian-modulated source, sigma = 0.12",
    "ex3": "complex source, sin(2 pi x) sin(2 pi y) + 0.7 i sin(3 pi x) sin(2 pi y)",
    "ex4": "space-time forcing i exp(-r^2 t / (2 sigma^2)) sin(pi x) sin(pi y)",
}


def time_profile(spec, grid: Grid2D) -> np.ndarray:
    """Prescribed ``g^n`` for separable examples (default ``g = 1``)."""
    if isinstance(spec, str):
        if spec == "one":
            return np.ones(grid.Nt, dtype=np.complex128)
        raise ValueError(f"unknown time profile {spec!r}")
    g = np.asarray(spec, dtype=np.complex128).ravel()
    if g.shape != (grid.Nt,):
        raise ValueError(f"time profile needs {grid.Nt} samples, got {g.size}")
    return g


def make_source(example_id: str, grid: Grid2D, g="one"):
    """Return ``(true_control, description)`` sampled on the interior grid."""
    func = source_function(example_id)
    if example_id == "ex4":
        X, Y = grid.coordinates()
        t = grid.times[:-1]
        f = func(X[None, :], Y[None, :], t[:, None])
        return Control.full(f), DESCRIPTIONS[example_id]
    return Control.separable(grid.sample(func), time_profile(g, grid)), DESCRIPTIONS[example_id]


def initial_state(kind: str, grid: Grid2D) -> np.ndarray:
    if kind == "sine":
        return grid.sample(lambda X, Y: np.sin(np.pi * X / grid.Lx) * np.sin(np.pi * Y / grid.Ly))
    if kind == "zero":
        return np.zeros(grid.m, dtype=np.complex128)
    raise ValueError(f"unknown initial state {kind!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    example_id: str = "ex1"
    Lx: float = 1.0
    Ly: float = 1.0
    T: float = 1.0
    Nx: int = 100
    Ny: int = 100
    Nt: int = 70
    a: float = 36e-4
    b: float = 15e-4
    p: complex = 0.2 + 0.1j
    y0: str = "sine"
    eps: float = 1e-5
    tau: float = 1e-5
    k_max: int = 300
    noise_delta: float = 0.0
    seed: int = 0
    g: str = "one"
    data_refine: int = 1
    forcing_rule: str = "left"
    gradient_mode: str = "exact"
    convention: str = "pde"

    def __post_init__(self):
        if self.example_id not in EXAMPLES:
            raise ValueError(f"example_id must be one of {EXAMPLES}, got {self.example_id!r}")
        if self.noise_delta < 0:
            raise ValueError(f"noise_delta must be >= 0, got {self.noise_delta}")
        if self.data_refine not in (1, 2):
            raise ValueError(f"data_refine must be 1 or 2, got {self.data_refine}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "p", complex(self.p))
        self.grid()  # validates lengths and counts

    @property
    def control_mode(self) -> str:
        return "full" if self.example_id == "ex4" else "separable"

    def grid(self) -> Grid2D:
        return build_grid(self.Lx, self.Ly, self.T, self.Nx, self.Ny, self.Nt)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["p"] = [self.p.real, self.p.imag]
        return out


def _restrict(fine: Grid2D, coarse: Grid2D, v: np.ndarray) -> np.ndarray:
    return v.reshape(fine.ny, fine.nx)[1::2, 1::2].ravel().copy()


def synthesize_data(spec: ExperimentSpec):
    """Forward-simulate the true source; returns ``(u_T, true_control)``.

    With ``data_refine=2`` the data come from a grid twice as fine in space
    and are sampled at the coinciding nodes.
    """
    grid = spec.grid()
    truth, _ = make_source(spec.example_id, grid, spec.g)
    data_grid = grid if spec.data_refine == 1 else grid.refined(spec.data_refine)
    if data_grid is grid:
        data_truth = truth
    else:
        data_truth, _ = make_source(spec.example_id, data_grid, spec.g)
    ops = assemble_cn(data_grid, spec.a, spec.b, spec.p, spec.convention)
    y0 = initial_state(spec.y0, data_grid)
    traj = forward(data_grid, ops, y0, data_truth.levels(), spec.forcing_rule)
    u_T = traj.final.copy()
    if data_grid is not grid:
        u_T = _restrict(data_grid, grid, u_T)
    return u_T, truth


def noise_generator(seed: int) -> np.random.Generator:
    """PCG64 stream; normals via numpy's ziggurat ``standard_normal``."""
    return np.random.Generator(np.random.PCG64(seed))


def add_noise(grid: Grid2D, u_T, delta: float, seed: int) -> np.ndarray:
    """``u_T + delta * ||u_T||_h / ||xi||_h * xi`` with complex Gaussian ``xi``.

    Real parts of ``xi`` are drawn first, then imaginary parts.
    """
    u_T = np.asarray(u_T, dtype=np.complex128)
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return u_T.copy()
    u_norm = mesh.norm_h(grid, u_T)
    if u_norm == 0:
        raise ValueError("cannot scale relative noise on zero data")
    rng = noise_generator(seed)
    xi = rng.standard_normal(grid.m) + 1j * rng.standard_normal(grid.m)
    eta = (delta * u_norm / mesh.norm_h(grid, xi)) * xi
    return u_T + eta


@dataclass(frozen=True)
class Metrics:
    misfit_sq_ratio: float
    q_err_sq_ratio: float | None
    f_err_sq_ratio: float | None
    iterations: int
    stop_reason: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _sq_ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        raise ValueError(f"{what} has zero norm")
    return num / den


def compute_metrics(grid: Grid2D, recon: RunReport, truth: Control, data) -> Metrics:
    """Squared relative errors, matching the table column convention."""
    data = np.asarray(data)
    rec = recon.final_control
    misfit = _sq_ratio(
        mesh.norm_h(grid, recon.final_state - data) ** 2, mesh.norm_h(grid, data) ** 2, "data"
    )
    q_err = None
    if truth.mode == "separable":
        q_err = _sq_ratio(
            mesh.norm_h(grid, rec.values - truth.values) ** 2, mesh.norm_h(grid, truth.values) ** 2, "true q"
        )
    f_true = truth.levels()
    f_err = _sq_ratio(
        mesh.norm_ht(grid, rec.levels() - f_true) ** 2, mesh.norm_ht(grid, f_true) ** 2, "true f"
    )
    return Metrics(misfit, q_err, f_err, recon.iterations, recon.stop_reason)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    report: RunReport
    metrics: Metrics
    truth: Control
    data: np.ndarray
    clean_data: np.ndarray
    wall_time: float = 0.0


def build_problem(spec: ExperimentSpec):
    """Assemble operators, data and the :class:`InverseProblem` for ``spec``."""
    grid = spec.grid()
    clean, truth = synthesize_data(spec)
    data = add_noise(grid, clean, spec.noise_delta, spec.seed)
    ops = assemble_cn(grid, spec.a, spec.b, spec.p, spec.convention)
    problem = InverseProblem(
        grid,
        ops,
        initial_state(spec.y0, grid),
        data,
        eps=spec.eps,
        control_mode=spec.control_mode,
        forcing_rule=spec.forcing_rule,
        gradient_mode=spec.gradient_mode,
        g=truth.g,
    )
    return problem, truth, clean


def run_experiment(spec: ExperimentSpec, ncg: NcgConfig | None = None, callback=None) -> ExperimentResult:
    """Reconstruct the source of ``spec`` from zero; ``spec.tau`` and
    ``spec.k_max`` override the corresponding ``ncg`` fields."""
    start = time.perf_counter()
    cfg = replace(ncg or NcgConfig(), tau=spec.tau, k_max=spec.k_max)
    problem, truth, clean = build_problem(spec)
    report = ncg_minimize(problem, None, cfg, callback=callback)
    metrics = compute_metrics(problem.grid, report, truth, problem.data)
    return ExperimentResult(spec, report, metrics, truth, np.array(problem.data), clean, time.perf_counter() - start)


# Tables ----------------------------------------------------------------------

DESK_GRID = (50, 50, 70)
FULL_GRID = (100, 100, 70)
DESK_KMAX = 300
DESK_KMAX_NOISY = 1500
FULL_KMAX = 20000

TABLE_COLUMNS = {
    "T1": ("tau",),
    "T2": ("Nx", "Ny", "Nt"),
    "T3": ("eps",),
    "T4": ("noise_delta",),
}


def table_specs(table_id: str, scale: str = "desk", seed: int = 0, grid=None, k_max=None) -> list[ExperimentSpec]:
    """Per-row experiment specs of a table.

    ``grid`` and ``k_max`` override the scale defaults (handy for quick runs).
    """
    if table_id not in TABLES:
        raise ValueError(f"unknown table {table_id!r}, expected one of {TABLES}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}, expected one of {SCALES}")
    desk = scale == "desk"
    Nx, Ny, Nt = grid or (DESK_GRID if desk else FULL_GRID)

    def kmax(noisy=False):
        if k_max is not None:
            return k_max
        if not desk:
            return FULL_KMAX
        return DESK_KMAX_NOISY if noisy else DESK_KMAX

    base = ExperimentSpec(example_id="ex1", Nx=Nx, Ny=Ny, Nt=Nt, eps=1e-5, tau=1e-5, k_max=kmax(), seed=seed)
    if table_id == "T1":
        return [replace(base, tau=tau) for tau in (1e-3, 1e-4, 1e-5, 1e-6)]
    if table_id == "T3":
        return [replace(base, eps=eps) for eps in (1e-3, 1e-4, 1e-5, 1e-6)]
    if table_id == "T2":
        if grid is not None:
            grids = [grid]
        elif desk:
            grids = [(35, 35, 70), (50, 50, 70), (50, 50, 150)]
        else:
            grids = [(35, 35, 70), (50, 50, 70), (100, 100, 70), (100, 100, 150)]
        return [replace(base, Nx=gx, Ny=gy, Nt=gt) for gx, gy, gt in grids]
    return [
        replace(base, example_id="ex3", noise_delta=delta, k_max=kmax(delta > 0))
        for delta in (0.0, 1e-3, 5e-3)
    ]


@dataclass
class TableRow:
    config: dict
    metrics: Metrics
    wall_time: float


def run_table(table_id: str, scale: str = "desk", seed: int = 0, workers: int = 1, ncg: NcgConfig | None = None,
              grid=None, k_max=None, callback=None) -> list[TableRow]:
    """Run every row of ``table_id``; rows come back in table order."""
    specs = table_specs(table_id, scale, seed, grid, k_max)

    def one(spec):
        result = run_experiment(spec, ncg, callback=callback)
        return TableRow(spec.as_dict(), result.metrics, result.wall_time)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, specs))
    return [one(spec) for spec in specs]


# Manufactured-solution convergence -------------------------------------------

@dataclass
class ConvergenceResult:
    rule: str
    spatial: list[tuple[int, float]] = field(default_factory=list)
    temporal: list[tuple[int, float]] = field(default_factory=list)
    spatial_order: float = float("nan")
    temporal_order: float = float("nan")


def fitted_order(resolutions, errors) -> float:
    """Least-squares slope of ``-log(error)`` against ``log(resolution)``."""
    slope = np.polyfit(np.log(np.asarray(resolutions, float)), np.log(np.asarray(errors, float)), 1)[0]
    return float(-slope)


def _mms(a, b, p):
    # y*(x, y, t) = exp(-t) sin(pi x) sin(pi y) on the unit square; f = amp * y*.
    amp = -1.0 + 2 * np.pi**2 * complex(a, b) + p
    return amp


def _mms_final_error(N: int, Nt: int, rule: str, a, b, p, reference: str) -> float:
    grid = build_grid(1, 1, 1, N, N, Nt)
    ops = assemble_cn(grid, a, b, p)
    shape = grid.sample(lambda X, Y: _sines(X, Y))
    amp = _mms(a, b, p)
    f = amp * np.exp(-grid.times[:-1])[:, None] * shape[None, :]
    y_T = forward(grid, ops, shape, f, rule).final
    if reference == "continuous":
        exact = np.exp(-1.0) * shape
    else:
        # Exact-in-time solution of the semi-discrete ODE; sin(pi x) sin(pi y)
        # is an eigenvector of the 5-point Laplacian.
        mu = -(4 / grid.dx**2) * np.sin(np.pi * grid.dx / 2) ** 2 - (4 / grid.dy**2) * np.sin(np.pi * grid.dy / 2) ** 2
        kappa = complex(a, b) * mu - p
        C = amp / (-1.0 - kappa)
        exact = (C * np.exp(-1.0) + (1 - C) * np.exp(kappa)) * shape
    return mesh.norm_h(grid, y_T - exact)


def convergence_study(rule: str = "left", a: float = 1.0, b: float = 0.5, p: complex = 0.2 + 0.1j,
                      spatial_N=(8, 16, 32, 64), spatial_Nt: int = 2000,
                      temporal_Nt=(40, 80, 160, 320, 640), temporal_N: int = 16) -> ConvergenceResult:
    """Observed orders for ``y* = exp(-t) sin(pi x) sin(pi y)``.

    Spatial errors compare against ``y*(T)`` using the trapezoid forcing and
    ``spatial_Nt`` steps so time error stays negligible.  Temporal errors
    (with the requested ``rule``) compare against the exact solution of the
    spatially discrete ODE, isolating the time discretization.
    """
    if rule not in ("left", "trapezoid"):
        raise ValueError(f"unknown forcing rule {rule!r}")
    result = ConvergenceResult(rule)
    for N in spatial_N:
        result.spatial.append((N, _mms_final_error(N, spatial_Nt, "trapezoid", a, b, p, "continuous")))
    for Nt in temporal_Nt:
        result.temporal.append((Nt, _mms_final_error(temporal_N, Nt, rule, a, b, p, "semidiscrete")))
    result.spatial_order = fitted_order(*zip(*result.spatial))
    result.temporal_order = fitted_order(*zip(*result.temporal))
    return result
