import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.jost import jost_solution
from artifact.kernels import (
    GoursatConfig, KernelGrid, diagonal_identity_defect, fixed_point_residual, goursat_from_boundary,
    goursat_term, interaction, inverse_kernel_K10, kernel_diagonal, mixed_derivative_residual, solve_K0, solve_K12,
    verify_H_derivative_bounds, verify_kernel_bounds,
)
from artifact.potential import bump, constant, from_spec, norm_lp, zero

from conftest import random_smooth_pair


def march_oracle(q1_fn, q2_fn, a, n):
    """Independent Goursat solver: cell-by-cell marching along characteristics.

    Kt_uv = (q1(v+u) - q2(v-u)) Kt with Kt(0, v) = 1/2 int_v^a (q2 - q1) and
    Kt(u, a) = 0; the cell integral uses the average of the four corners.
    """
    h = a / n
    fine = np.linspace(0, a, 20 * n + 1)
    diff = q2_fn(fine) - q1_fn(fine)
    tail = np.concatenate([np.cumsum(((diff[1:] + diff[:-1]) / 2 * (a / (20 * n)))[::-1])[::-1], [0]])
    K = np.zeros((n + 1, n + 1))
    K[0] = 0.5 * tail[::20]

    def F(u, vv):
        s1, s2 = vv + u, vv - u
        f1 = q1_fn(np.array([s1]))[0] if s1 <= a else 0.0
        return f1 - q2_fn(np.array([s2]))[0]

    for i in range(n):
        for j in range(n - 1, i, -1):
            f = F((i + 0.5) * h, (j + 0.5) * h) * h * h / 4
            # K(i+1,j) - K(i+1,j+1) - K(i,j) + K(i,j+1) = -f (sum of corners)
            known = K[i + 1, j + 1] + K[i, j] - K[i, j + 1]
            corners = K[i + 1, j + 1] + K[i, j] + K[i, j + 1]
            K[i + 1, j] = (known - f * corners) / (1 + f)
    return K


def test_equal_potentials_give_zero_kernel():
    q = bump(0.7, 0.5, 0.2, n_grid=100)
    K = solve_K12(q, q)
    assert np.all(K.values == 0)
    assert np.all(solve_K0(zero(n_grid=100)).values == 0)
    assert np.all(inverse_kernel_K10(zero(n_grid=100)).values == 0)
    assert kernel_diagonal(K, 0.3) == 0


def test_constant_free_term_and_corner():
    c = 1.0
    K = solve_K0(constant(c, n_grid=200))
    assert K.values[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert kernel_diagonal(K, 0.0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("c", [1.0, -2.0])
def test_constant_matches_marching_oracle(c):
    # oracle on a 4x finer grid, so agreement measures discretisation error
    n = 50
    K = solve_K12(zero(n_grid=n), constant(c, n_grid=n))
    ref = march_oracle(lambda s: 0 * s, lambda s: c + 0 * s, 1.0, 4 * n)[::4, ::4]
    err = np.max(np.abs(np.triu(K.values - ref)))
    assert err < 1e-4 * abs(c) ** 2


def test_bump_pair_matches_marching_oracle():
    q1s, q2s = "bump(0.8,0.4,0.3)", "bump(-0.6,0.6,0.25)"
    n = 50
    q1, q2 = from_spec(q1s, 1.0, n), from_spec(q2s, 1.0, n)
    fine1, fine2 = from_spec(q1s, 1.0, 80 * n), from_spec(q2s, 1.0, 80 * n)
    f1 = lambda s: np.interp(s, fine1.x, fine1.values)
    f2 = lambda s: np.interp(s, fine2.x, fine2.values)
    ref = march_oracle(f1, f2, 1.0, 4 * n)[::4, ::4]
    K = solve_K12(q1, q2)
    assert np.max(np.abs(np.triu(K.values - ref))) < 5e-4


def test_kernel_bounds_on_constant_and_bump():
    for q1, q2 in [(zero(n_grid=100), constant(1.0, n_grid=100)),
                   (bump(1, 0.5, 0.2, n_grid=100), bump(-0.5, 0.3, 0.2, n_grid=100))]:
        K = solve_K12(q1, q2)
        assert all(c.passed for c in verify_kernel_bounds(K, q1, q2))
        assert all(c.passed for c in verify_H_derivative_bounds(q1, q2, K))
    q = bump(1, 0.5, 0.2, n_grid=100)
    assert all(c.passed for c in verify_kernel_bounds(inverse_kernel_K10(q), q, zero(n_grid=100)))


def test_constant_H_derivative_bound():
    c = 1.5
    q1, q2 = zero(n_grid=200), constant(c, n_grid=200)
    (chk,) = verify_H_derivative_bounds(q1, q2, solve_K12(q1, q2), Q1=c)
    assert chk.passed and chk.max_ratio < 1


def test_fixed_point_residual_and_pde():
    q1, q2 = bump(1, 0.4, 0.3, n_grid=200), bump(-1, 0.6, 0.3, n_grid=200)
    cfg = GoursatConfig(tol=1e-12)
    K = solve_K12(q1, q2, cfg)
    assert fixed_point_residual(K, q1, q2) <= 10 * cfg.tol
    assert diagonal_identity_defect(K, q1, q2) <= 10 * cfg.tol
    r200 = mixed_derivative_residual(K, q1, q2)
    q1b, q2b = bump(1, 0.4, 0.3, n_grid=400), bump(-1, 0.6, 0.3, n_grid=400)
    r400 = mixed_derivative_residual(solve_K12(q1b, q2b, cfg), q1b, q2b)
    assert r400 < 0.35 * r200           # second order


def test_transformation_identity():
    q1, q2 = bump(0.8, 0.4, 0.3, n_grid=400), bump(-0.6, 0.6, 0.25, n_grid=400)
    K = solve_K12(q1, q2)
    h = K.h
    for z in [1.5 + 0.2j, -3.0 + 1j, 4.0]:
        for m in [0, 100, 250]:
            x = m * h
            # t = x + 2u on the u-grid, K(x, t) = Kt(u_i, x + u_i)
            i = np.arange(0, K.n_grid - m + 1)
            t = x + 2 * i * h
            y1 = np.array([jost_solution(q1, z, min(tt, 1.0))[0] if tt <= 1 else np.exp(1j * z * tt)
                           for tt in t])
            integral = 2 * np.trapezoid(K.values[i, m + i] * y1, dx=h)
            lhs = jost_solution(q2, z, x)[0]
            rhs = jost_solution(q1, z, x)[0] + integral
            assert abs(lhs - rhs) <= 1e-5 * abs(lhs)


def test_composition_K01_K10():
    q = bump(1.0, 0.5, 0.2, n_grid=400)
    K01, K10 = solve_K0(q), inverse_kernel_K10(q)
    h = K01.h
    n = K01.n_grid
    z = 2.0 + 0.5j
    xs = h * np.arange(2 * n + 1)
    y0 = np.exp(1j * z * xs)

    def apply(K, y):
        out = y.copy()
        for m in range(n + 1):
            i = np.arange(0, n - m + 1)
            out[m] += 2 * np.trapezoid(K.values[i, m + i] * y[m + 2 * i], dx=h)
        return out

    back = apply(K10, apply(K01, y0))
    assert np.max(np.abs(back - y0)[: n + 1]) < 1e-4


def test_goursat_zero_and_forward_consistency():
    q1, q2 = bump(0.8, 0.4, 0.3, n_grid=200), bump(-0.6, 0.6, 0.25, n_grid=200)
    Z = goursat_from_boundary(np.zeros(201), q1, q2)
    assert np.all(Z.values == 0)
    K = solve_K12(q1, q2, GoursatConfig(tol=1e-13))
    G = goursat_from_boundary(K.boundary(), q1, q2, GoursatConfig(tol=1e-13))
    assert np.max(np.abs(G.values - K.values)) < 1e-6


def test_goursat_factorial_envelope():
    q1, q2 = bump(1.0, 0.4, 0.3, n_grid=200), bump(1.0, 0.6, 0.3, n_grid=200)
    Gp = -interaction(q1, q2)
    Q1 = max(norm_lp(q1, 1), norm_lp(q2, 1))
    n, h = 200, 1.0 / 200
    B = np.cos(3 * np.linspace(0, 1, n + 1))
    Psi = np.max(np.abs(B))
    term = np.triu(np.broadcast_to(B, (n + 1, n + 1)))
    v = np.linspace(0, 1, n + 1)
    for k in range(1, 8):
        term = goursat_term(term, Gp, h)
        env = (2 * Q1 * (1 - v)) ** k / math.factorial(k) * Psi
        assert np.all(np.abs(term) <= env[None, :] * (1 + 1e-9) + 1e-15)


def test_kernel_grid_json_roundtrip_and_call():
    K = solve_K0(bump(1.0, 0.5, 0.2, n_grid=50))
    R = KernelGrid.from_dict(K.to_dict())
    assert np.array_equal(R.values, K.values)
    assert K(0.0, 0.0) == pytest.approx(K.values[0, 0])
    assert K(0.2, 0.1) == 0.0
    with pytest.raises(ValueError):
        kernel_diagonal(K, 1.5)


def test_degenerate_grid_rejected():
    with pytest.raises(ValueError):
        solve_K0(zero(n_grid=3))


@given(st.integers(0, 2 ** 32 - 1))
def test_diagonal_identity_random_pairs(seed):
    q1, q2 = random_smooth_pair(np.random.default_rng(seed), n=100)
    cfg = GoursatConfig.default_for(q1, q2)
    K = solve_K12(q1, q2, cfg)
    assert diagonal_identity_defect(K, q1, q2) <= 10 * cfg.tol
    assert all(c.passed for c in verify_kernel_bounds(K, q1, q2))
