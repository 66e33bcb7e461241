import numpy as np
import pytest

from glinverse.experiments import initial_state
from glinverse.linsolve import assemble_cn, dense_propagator
from glinverse.mesh import build_grid, norm_h, pair_h
from glinverse.pde import adjoint, duality_mismatch, forward, observe, step_weights

from conftest import A, B, P, crandn


def _setup(shape=(9, 9, 8), a=A, b=B, p=P, convention="pde"):
    g = build_grid(1, 1, 1, *shape)
    return g, assemble_cn(g, a, b, p, convention)


def test_zero_in_zero_out():
    g, ops = _setup()
    traj = forward(g, ops, np.zeros(g.m), np.zeros((g.Nt, g.m)))
    assert traj.states.shape == (g.Nt + 1, g.m)
    assert np.all(traj.states == 0)
    assert np.all(observe(traj) == 0)


def test_contractive_without_reaction():
    g, ops = _setup((32, 32, 40), p=0.0)
    traj = forward(g, ops, initial_state("sine", g), np.zeros((g.Nt, g.m)))
    norms = [norm_h(g, y) for y in traj.states]
    assert all(n1 <= n0 * (1 + 1e-14) for n0, n1 in zip(norms, norms[1:]))


@pytest.mark.parametrize("shape", [(5, 5, 4), (9, 9, 8), (21, 21, 12)])
def test_homogeneous_matches_matrix_power(shape):
    g, ops = _setup(shape)
    y0 = initial_state("sine", g) + 0.3j * g.sample(lambda x, y: x * (1 - x) * y * (1 - y))
    ref = np.linalg.matrix_power(dense_propagator(ops), g.Nt) @ y0
    got = observe(forward(g, ops, y0, np.zeros((g.Nt, g.m))))
    assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_forced_matches_dense_recursion(rng):
    g, ops = _setup((9, 9, 8))
    f = crandn(rng, g.Nt, g.m)
    y0 = crandn(rng, g.m)
    Mm, Mp = ops.Mminus.toarray(), ops.Mplus.toarray()
    for rule in ("left", "trapezoid"):
        y = y0.copy()
        for n in range(g.Nt):
            fn = f[n] if rule == "left" else 0.5 * (f[n] + f[min(n + 1, g.Nt - 1)])
            y = np.linalg.solve(Mm, Mp @ y + g.dt * fn)
        got = forward(g, ops, y0, f, rule).final
        assert np.linalg.norm(got - y) <= 1e-10 * np.linalg.norm(y)


def test_observe_is_pure(rng):
    g, ops = _setup()
    traj = forward(g, ops, crandn(rng, g.m), crandn(rng, g.Nt, g.m))
    first = observe(traj)
    first[:] = 0
    np.testing.assert_array_equal(observe(traj), traj.final)


def test_step_weights():
    assert step_weights(3, "left") == [[(0, 1.0)], [(1, 1.0)], [(2, 1.0)]]
    assert step_weights(3, "trapezoid") == [[(0, 0.5), (1, 0.5)], [(1, 0.5), (2, 0.5)], [(2, 1.0)]]
    with pytest.raises(ValueError):
        step_weights(3, "midpoint")


def test_adjoint_zero_terminal():
    g, ops = _setup()
    adj = adjoint(g, ops, np.zeros(g.m))
    assert np.all(adj.states == 0) and np.all(adj.lifted == 0)


def test_adjoint_reduces_to_forward_when_self_adjoint(rng):
    g, ops = _setup(b=0.0, p=0.25)
    v = crandn(rng, g.m)
    adj = adjoint(g, ops, v)
    fwd = forward(g, ops, v, np.zeros((g.Nt, g.m)))
    for n in range(g.Nt + 1):
        np.testing.assert_allclose(adj.states[g.Nt - n], fwd.states[n], rtol=0, atol=1e-12)


def test_duality_pairing(rng):
    g, ops = _setup((11, 9, 7))
    for _ in range(10):
        f = crandn(rng, g.Nt, g.m)
        v = crandn(rng, g.m)
        assert duality_mismatch(g, ops, f, v) <= 1e-9


def test_duality_brute_force_alignment(rng):
    # Pair the forward map against v directly and against each shifted adjoint level.
    g, ops = _setup((7, 7, 5))
    f = crandn(rng, g.Nt, g.m)
    v = crandn(rng, g.m)
    lhs = pair_h(g, v, forward(g, ops, np.zeros(g.m), f).final)
    adj = adjoint(g, ops, v)
    Mm = ops.Mminus.toarray()
    lifted = [np.linalg.solve(Mm.conj().T, adj.states[n + 1]) for n in range(g.Nt)]
    rhs = g.dt * sum(pair_h(g, lifted[n], f[n]) for n in range(g.Nt))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
    np.testing.assert_allclose(np.array(lifted), adj.lifted, rtol=1e-12, atol=1e-14)


def test_affine_linearity(rng):
    g, ops = _setup((9, 9, 8))
    y0 = crandn(rng, g.m)
    f1, f2 = crandn(rng, g.Nt, g.m), crandn(rng, g.Nt, g.m)
    al, be = 0.7 - 0.2j, -1.3 + 0.5j
    zero = np.zeros((g.Nt, g.m))
    lhs = forward(g, ops, y0, al * f1 + be * f2).states - forward(g, ops, y0, zero).states
    rhs = al * forward(g, ops, np.zeros(g.m), f1).states + be * forward(g, ops, np.zeros(g.m), f2).states
    assert np.linalg.norm(lhs - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_input_validation():
    g, ops = _setup()
    with pytest.raises(ValueError):
        forward(g, ops, np.zeros(g.m), np.zeros((g.Nt - 1, g.m)))
    with pytest.raises(ValueError):
        forward(g, ops, np.zeros(g.m + 1), np.zeros((g.Nt, g.m)))
    f = np.zeros((g.Nt, g.m))
    f[2, 5] = np.inf
    with pytest.raises(ValueError, match="level 2, node 5"):
        forward(g, ops, np.zeros(g.m), f)


def _mms_error(N, Nt, convention):
    a, b, p = 1.0, 0.5, 0.2 + 0.1j
    g, ops = _setup((N, N, Nt), a, b, p, convention)
    shape = g.sample(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    amp = -1.0 + 2 * np.pi**2 * complex(a, b) + p
    f = amp * np.exp(-g.times[:-1])[:, None] * shape[None, :]
    yT = forward(g, ops, shape, f, "trapezoid").final
    return norm_h(g, yT - np.exp(-1.0) * shape)


def test_printed_reaction_sign_misses_manufactured_solution():
    # With A = (a+ib)L - pI the scheme converges; flipping the sign of p does not.
    good = [_mms_error(N, 400, "pde") for N in (8, 16, 32)]
    bad = [_mms_error(N, 400, "printed") for N in (8, 16, 32)]
    assert good[0] / good[2] > 10
    # Error stalls at a resolution-independent floor.
    assert bad[1] / bad[2] < 1.3
    assert bad[2] > 20 * good[2]
