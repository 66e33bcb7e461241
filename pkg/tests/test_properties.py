"""Randomized invariants of the discrete problem.

Each ``check_*`` takes a seed and a grid shape and raises ``AssertionError``
on violation, so the same checks drive both hypothesis and the acceptance
suite.
"""

from functools import lru_cache

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from glinverse.experiments import add_noise, initial_state
from glinverse.inverse import Control, InverseProblem, control_norm_ht, gradient, objective
from glinverse.linsolve import assemble_cn
from glinverse.mesh import build_grid, inner_ht, norm_h, norm_ht
from glinverse.optimize import NcgConfig, ncg_minimize, pr_plus_beta, project_ball
from glinverse.pde import forward

from conftest import A, B, P, crandn

SHAPES = [(9, 9, 8), (11, 13, 10), (13, 11, 12), (17, 17, 16)]


@lru_cache(maxsize=None)
def _setup(shape):
    g = build_grid(1, 1, 1, *shape)
    return g, assemble_cn(g, A, B, P)


def _problem(shape, rng, eps, mode="full"):
    g, ops = _setup(shape)
    return InverseProblem(g, ops, initial_state("sine", g), crandn(rng, g.m), eps=eps, control_mode=mode)


def _control(P_, rng):
    g = P_.grid
    if P_.control_mode == "full":
        return Control.full(crandn(rng, g.Nt, g.m))
    return Control.separable(crandn(rng, g.m), np.ones(g.Nt))


def _J(P_, c):
    return objective(P_, c)[0]


def _grad(P_, c):
    return gradient(P_, c, objective(P_, c)[2])


def check_convexity(seed, shape):
    rng = np.random.default_rng(seed)
    P_ = _problem(shape, rng, eps=rng.uniform(0, 1e-2))
    c1, c2 = _control(P_, rng), _control(P_, rng)
    J1, J2 = _J(P_, c1), _J(P_, c2)
    mid = _J(P_, c1.with_values(0.5 * (c1.values + c2.values)))
    assert mid <= 0.5 * (J1 + J2) + 1e-12 * (1 + abs(J1) + abs(J2))


def check_gradient_monotone(seed, shape):
    rng = np.random.default_rng(seed)
    P_ = _problem(shape, rng, eps=rng.uniform(0, 1e-2))
    c1, c2 = _control(P_, rng), _control(P_, rng)
    value = inner_ht(P_.grid, _grad(P_, c1) - _grad(P_, c2), c1.values - c2.values)
    assert value >= -1e-10


def check_eps_shift(seed, shape):
    rng = np.random.default_rng(seed)
    eps = rng.uniform(1e-6, 1.0)
    P_ = _problem(shape, rng, eps=eps)
    P0 = InverseProblem(P_.grid, P_.ops, P_.y0, P_.data, eps=0.0, control_mode="full")
    c = _control(P_, rng)
    traj = objective(P_, c)[2]
    diff = gradient(P_, c, traj) - gradient(P0, c, traj)
    scale = np.abs(eps * c.values).max()
    assert np.abs(diff - eps * c.values).max() <= 1e-13 * scale


def check_affine_forward(seed, shape):
    rng = np.random.default_rng(seed)
    g, ops = _setup(shape)
    y0 = crandn(rng, g.m)
    f1, f2 = crandn(rng, g.Nt, g.m), crandn(rng, g.Nt, g.m)
    al, be = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
    rule = ("left", "trapezoid")[seed % 2]
    zero_f, zero_y = np.zeros((g.Nt, g.m)), np.zeros(g.m)
    lhs = forward(g, ops, y0, al * f1 + be * f2, rule).states - forward(g, ops, y0, zero_f, rule).states
    rhs = al * forward(g, ops, zero_y, f1, rule).states + be * forward(g, ops, zero_y, f2, rule).states
    assert np.linalg.norm(lhs - rhs) <= 1e-11 * np.linalg.norm(rhs)


def check_beta_nonnegative(seed, shape):
    rng = np.random.default_rng(seed)
    g, _ = _setup(shape)
    r, rp = crandn(rng, g.Nt, g.m), crandn(rng, g.Nt, g.m)
    # Mix in a nearly parallel pair so the clamp is exercised.
    rp2 = r * (1 + 0.1 * rng.standard_normal())
    inner = lambda x, y: inner_ht(g, x, y)
    assert pr_plus_beta(r, rp, inner) >= 0
    assert pr_plus_beta(r, rp2, inner) >= 0


def check_ncg_descent(seed, shape):
    rng = np.random.default_rng(seed)
    mode = ("full", "separable")[seed % 2]
    P_ = _problem(shape, rng, eps=10 ** rng.uniform(-6, -2), mode=mode)
    report = ncg_minimize(P_, _control(P_, rng), NcgConfig(tau=1e-12, k_max=6))
    Js = [report.J0] + [rec.J for rec in report.history]
    assert all(b < a for a, b in zip(Js, Js[1:]))
    assert all(rec.beta >= 0 for rec in report.history)


def check_noise_normalization(seed, shape):
    rng = np.random.default_rng(seed)
    g, _ = _setup(shape)
    u = crandn(rng, g.m)
    delta = 10 ** rng.uniform(-5, 0)
    noisy = add_noise(g, u, delta, int(rng.integers(0, 2**31)))
    assert abs(norm_h(g, noisy - u) / norm_h(g, u) - delta) <= 1e-14 * max(delta, 1e-2)


def check_projection_idempotent(seed, shape):
    rng = np.random.default_rng(seed)
    mode = ("full", "separable")[seed % 2]
    P_ = _problem(shape, rng, eps=0.0, mode=mode)
    c = _control(P_, rng)
    rho = rng.uniform(0.05, 2.0) * control_norm_ht(P_.grid, c)
    once = project_ball(P_.grid, c, rho)
    twice = project_ball(P_.grid, once, rho)
    assert np.abs(twice.values - once.values).max() <= 1e-14 * np.abs(once.values).max()
    assert control_norm_ht(P_.grid, once) <= rho * (1 + 1e-14)


PROPERTIES = {
    "convexity along segments": check_convexity,
    "gradient monotonicity": check_gradient_monotone,
    "eps-shift identity": check_eps_shift,
    "affine forward map": check_affine_forward,
    "PR+ beta >= 0": check_beta_nonnegative,
    "monotone NCG descent": check_ncg_descent,
    "noise normalization": check_noise_normalization,
    "projection idempotence": check_projection_idempotent,
}

seeds = st.integers(min_value=0, max_value=2**32 - 1)
shapes = st.sampled_from(SHAPES)
settings.register_profile("props", max_examples=100, deadline=None, derandomize=True)
props = settings.get_profile("props")


@props
@given(seeds, shapes)
def test_convexity(seed, shape):
    check_convexity(seed, shape)


@props
@given(seeds, shapes)
def test_gradient_monotone(seed, shape):
    check_gradient_monotone(seed, shape)


@props
@given(seeds, shapes)
def test_eps_shift(seed, shape):
    check_eps_shift(seed, shape)


@props
@given(seeds, shapes)
def test_affine_forward(seed, shape):
    check_affine_forward(seed, shape)


@props
@given(seeds, shapes)
def test_beta_nonnegative(seed, shape):
    check_beta_nonnegative(seed, shape)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(seeds, shapes)
def test_ncg_descent(seed, shape):
    check_ncg_descent(seed, shape)


@props
@given(seeds, shapes)
def test_noise_normalization(seed, shape):
    check_noise_normalization(seed, shape)


@props
@given(seeds, shapes)
def test_projection_idempotent(seed, shape):
    check_projection_idempotent(seed, shape)


def test_gradient_lipschitz():
    # The gradient is affine, so differences are Hessian applications.  Fit M by
    # power iteration over 100 pairs, then check 100 fresh random pairs.
    rng = np.random.default_rng(21)
    P_ = _problem((9, 9, 8), rng, eps=1e-3)
    g = P_.grid
    c = _control(P_, rng)
    base = _grad(P_, c)

    def hess(v):
        return _grad(P_, c.with_values(c.values + v)) - base

    v = crandn(rng, g.Nt, g.m)
    M = 0.0
    for _ in range(100):
        v = v / norm_ht(g, v)
        w = hess(v)
        M = norm_ht(g, w)
        v = w
    for _ in range(100):
        c1 = _control(P_, rng)
        dc = crandn(rng, g.Nt, g.m) * 10 ** rng.uniform(-3, 1)
        num = norm_ht(g, _grad(P_, c1.with_values(c1.values + dc)) - _grad(P_, c1))
        assert num <= M * (1 + 1e-8) * norm_ht(g, dc)
