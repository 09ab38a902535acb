"""Transformation-operator kernels on the characteristic triangle.

Kernels are stored in the coordinates u = (t - x)/2, v = (t + x)/2, so that
K(x, t) = Kt(u, v) with Kt supported in {0 <= u <= v <= a}.  For a pair
q_from -> q_to the kernel solves

    Kt(u, v) = 1/2 int_v^a (q_to - q_from)
               + int_0^u dr int_v^a ds (q_to(s - r) - q_from(s + r)) Kt(r, s),

which covers K12 (q1 -> q2), K0j (0 -> qj) and Kj0 (qj -> 0).  All samples
s +- r fall on grid nodes, so no interpolation of q is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from artifact.potential import Potential, _require_same_grid, norm_lp


class ConvergenceError(RuntimeError):
    """Successive approximations did not reach the requested tolerance."""

    def __init__(self, msg: str, last_increment: float, iterations: int):
        super().__init__(f"{msg} (last increment {last_increment:.3e} after {iterations} iterations)")
        self.last_increment = last_increment
        self.iterations = iterations


@dataclass(frozen=True)
class GoursatConfig:
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @classmethod
    def default_for(cls, *potentials: Potential, max_iter: int = 200) -> "GoursatConfig":
        """tol = 1e-10 (1 + Q1 e^{2aQ1}) with Q1 the largest L1 norm, capped at 1e-8.

        Uncapped, the scale factor lets strong potentials stop after one sweep.
        """
        a = potentials[0].a
        Q1 = max(norm_lp(q, 1) for q in potentials)
        return cls(tol=min(1e-10 * (1.0 + Q1 * math.exp(2.0 * a * Q1)), 1e-8), max_iter=max_iter)


@dataclass(frozen=True)
class KernelGrid:
    """Kt(u_i, v_j) on the uniform grid; entries with i > j are zero."""

    a: float
    values: np.ndarray = field(repr=False)
    iterations: int = 0
    last_increment: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("kernel values must be a square array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_grid(self) -> int:
        return self.values.shape[0] - 1

    @property
    def h(self) -> float:
        return self.a / self.n_grid

    def diagonal(self) -> np.ndarray:
        """Kt(0, v_j) = K(v_j, v_j) on the grid."""
        return self.values[0].copy()

    def boundary(self) -> np.ndarray:
        """K(0, t_j) at t_j = 2 v_j, i.e. Kt(v_j, v_j)."""
        return np.diag(self.values).copy()

    def __call__(self, x, t) -> np.ndarray:
        """K(x, t) by bilinear interpolation in (u, v); zero off the support."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        u = (t - x) / 2.0
        v = (t + x) / 2.0
        n, h = self.n_grid, self.h
        inside = (u >= -1e-14 * self.a) & (u <= v + 1e-14 * self.a) & (v <= self.a * (1 + 1e-14))
        fu = np.clip(u / h, 0, n)
        fv = np.clip(v / h, 0, n)
        i0 = np.minimum(np.floor(fu).astype(int), n - 1)
        j0 = np.minimum(np.floor(fv).astype(int), n - 1)
        du, dv = fu - i0, fv - j0
        V = self.values
        out = ((1 - du) * (1 - dv) * V[i0, j0] + du * (1 - dv) * V[i0 + 1, j0]
               + (1 - du) * dv * V[i0, j0 + 1] + du * dv * V[i0 + 1, j0 + 1])
        return np.where(inside, out, 0.0)

    def to_dict(self) -> dict:
        tri = [[float(v) for v in self.values[: j + 1, j]] for j in range(self.n_grid + 1)]
        return {"a": self.a, "n_grid": self.n_grid, "triangle_values": tri}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelGrid":
        n = int(d["n_grid"])
        vals = np.zeros((n + 1, n + 1))
        for j, col in enumerate(d["triangle_values"]):
            vals[: j + 1, j] = col
        return cls(float(d["a"]), vals)


def rev_cumtrapz(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Integral from each node to the last node along axis."""
    g = np.flip(f, axis)
    return np.flip(cumulative_trapezoid(g, dx=h, axis=axis, initial=0), axis)


def _index_grids(n: int):
    idx = np.arange(n + 1)
    return np.meshgrid(idx, idx, indexing="ij")


def _padded(q: Potential) -> np.ndarray:
    return np.concatenate([q.values, np.zeros(q.n_grid + 1)])


def interaction(q_from: Potential, q_to: Potential) -> np.ndarray:
    """G[i, j] = q_to(v_j - u_i) - q_from(v_j + u_i), zero below the diagonal."""
    n = q_to.n_grid
    I, J = _index_grids(n)
    qt, qf = _padded(q_to), _padded(q_from)
    G = qt[np.clip(J - I, 0, None)] - qf[I + J]
    G[I > J] = 0.0
    return G


def free_term(q_from: Potential, q_to: Potential) -> np.ndarray:
    """1/2 int_v^a (q_to - q_from) on the v-grid."""
    return 0.5 * rev_cumtrapz(q_to.values - q_from.values, q_to.h, 0)


def apply_H(K: np.ndarray, G: np.ndarray, h: float) -> np.ndarray:
    """H[K](u, v) = int_0^u dr int_v^a ds G(r, s) K(r, s) on the triangle."""
    S = rev_cumtrapz(G * K, h, 1)
    H = cumulative_trapezoid(S, dx=h, axis=0, initial=0)
    return np.triu(H)


def _check_grid(q: Potential):
    if q.n_grid < 4:
        raise ValueError(f"degenerate grid: n_grid = {q.n_grid} < 4")


def solve_kernel(q_from: Potential, q_to: Potential, cfg: GoursatConfig | None = None) -> KernelGrid:
    """Picard iteration for the kernel mapping the Jost solution of q_from to q_to."""
    _require_same_grid(q_from, q_to)
    _check_grid(q_to)
    cfg = cfg or GoursatConfig.default_for(q_from, q_to)
    h = q_to.h
    G = interaction(q_from, q_to)
    F = np.triu(np.broadcast_to(free_term(q_from, q_to), G.shape))
    K = F.copy()
    inc = 0.0
    for it in range(1, cfg.max_iter + 1):
        Kn = F + apply_H(K, G, h)
        inc = float(np.max(np.abs(Kn - K)))
        K = Kn
        if inc < cfg.tol:
            return KernelGrid(q_to.a, K, iterations=it, last_increment=inc)
    raise ConvergenceError("kernel iteration did not converge", inc, cfg.max_iter)


def solve_K12(q1: Potential, q2: Potential, cfg: GoursatConfig | None = None) -> KernelGrid:
    return solve_kernel(q1, q2, cfg)


def solve_K0(q: Potential, cfg: GoursatConfig | None = None) -> KernelGrid:
    return solve_kernel(Potential(q.a, np.zeros_like(q.values)), q, cfg)


def inverse_kernel_K10(q: Potential, cfg: GoursatConfig | None = None) -> KernelGrid:
    return solve_kernel(q, Potential(q.a, np.zeros_like(q.values)), cfg)


def fixed_point_residual(K: KernelGrid, q_from: Potential, q_to: Potential) -> float:
    G = interaction(q_from, q_to)
    F = np.triu(np.broadcast_to(free_term(q_from, q_to), G.shape))
    return float(np.max(np.abs(F + apply_H(K.values, G, K.h) - K.values)))


def kernel_diagonal(K: KernelGrid, x: float) -> float:
    """Kt(0, x) = K(x, x), linearly interpolated."""
    if not 0.0 <= x <= K.a:
        raise ValueError(f"x = {x} outside [0, {K.a}]")
    v = np.linspace(0.0, K.a, K.n_grid + 1)
    return float(np.interp(x, v, K.values[0]))


def diagonal_identity_defect(K: KernelGrid, q_from: Potential, q_to: Potential) -> float:
    """max_x |2 Kt(0, x) - int_x^a (q_to - q_from)|."""
    rhs = rev_cumtrapz(q_to.values - q_from.values, q_to.h, 0)
    return float(np.max(np.abs(2.0 * K.values[0] - rhs)))


def mixed_derivative_residual(K: KernelGrid, q_from: Potential, q_to: Potential) -> float:
    """max |d2Kt/dudv - (q_from(v+u) - q_to(v-u)) Kt| over interior nodes (i <= j - 2)."""
    V = K.values
    h = K.h
    n = K.n_grid
    G = interaction(q_from, q_to)
    D = (V[2:, 2:] - V[2:, :-2] - V[:-2, 2:] + V[:-2, :-2]) / (4 * h * h)
    I, J = _index_grids(n)
    I, J = I[1:-1, 1:-1], J[1:-1, 1:-1]
    mask = I <= J - 2
    return float(np.max(np.abs(D + G[1:-1, 1:-1] * V[1:-1, 1:-1])[mask])) if mask.any() else 0.0


def goursat_from_boundary(boundary: np.ndarray, q1: Potential, q2_guess: Potential,
                          cfg: GoursatConfig | None = None) -> KernelGrid:
    """Series solution of Kt(u,v) = B(v) + int_u^v dr int_v^a ds (q1(s+r) - q2(s-r)) Kt(r,s).

    B(v_j) = K12(0, 2 v_j) is given on the v-grid.  Terms are summed until the
    sup norm of the latest one drops below tol.
    """
    _require_same_grid(q1, q2_guess)
    _check_grid(q1)
    B = np.asarray(boundary, dtype=float)
    n, h = q1.n_grid, q1.h
    if B.shape != (n + 1,):
        raise ValueError(f"boundary must have {n + 1} samples, got {B.shape}")
    cfg = cfg or GoursatConfig.default_for(q1, q2_guess)
    Gp = -interaction(q1, q2_guess)
    term = np.triu(np.broadcast_to(B, (n + 1, n + 1)))
    total = term.copy()
    size = float(np.max(np.abs(term)))
    for it in range(1, cfg.max_iter + 1):
        if size < cfg.tol:
            return KernelGrid(q1.a, total, iterations=it, last_increment=size)
        term = goursat_term(term, Gp, h)
        size = float(np.max(np.abs(term)))
        total += term
    if size < cfg.tol:
        return KernelGrid(q1.a, total, iterations=cfg.max_iter, last_increment=size)
    raise ConvergenceError("Goursat series did not converge", size, cfg.max_iter)


def goursat_term(K: np.ndarray, Gp: np.ndarray, h: float) -> np.ndarray:
    """T[K](u, v) = int_u^v dr int_v^a ds Gp(r, s) K(r, s)."""
    S = rev_cumtrapz(Gp * K, h, 1)          # S[i, j] = int_{v_j}^a Gp(u_i, s) K(u_i, s) ds
    C = cumulative_trapezoid(S, dx=h, axis=0, initial=0)   # int_0^{u_i} S(r, v_j) dr
    T = np.diag(C)[None, :] - C
    return np.triu(T)


# -- derivatives and bounds -------------------------------------------------------

def h_derivatives(K: KernelGrid, q_from: Potential, q_to: Potential):
    """Finite-difference dH/dx and dH/dt at interior nodes 1 <= i <= j - 1, j <= n - 1.

    Returns (dHdx, dHdt, mask) as full square arrays.
    """
    n, h = K.n_grid, K.h
    F = np.triu(np.broadcast_to(free_term(q_from, q_to), (n + 1, n + 1)))
    H = K.values - F
    Hu = np.zeros_like(H)
    Hv = np.zeros_like(H)
    Hu[1:-1, :] = (H[2:, :] - H[:-2, :]) / (2 * h)
    Hv[:, 1:-1] = (H[:, 2:] - H[:, :-2]) / (2 * h)
    I, J = _index_grids(n)
    mask = (I >= 1) & (I <= J - 1) & (J <= n - 1)
    # x = v - u, t = v + u
    return 0.5 * (Hv - Hu), 0.5 * (Hv + Hu), mask


@dataclass
class BoundCheck:
    name: str
    n_samples: int
    violations: int
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _count(values: np.ndarray, bound: np.ndarray, name: str, rtol: float = 1e-9) -> BoundCheck:
    values = np.abs(np.asarray(values)).ravel()
    bound = np.broadcast_to(bound, values.shape).ravel()
    viol = int(np.sum(values > bound * (1 + rtol) + 1e-13))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, values / bound, np.where(values > 0, np.inf, 0.0))
    return BoundCheck(name, values.size, viol, float(np.max(ratio)) if ratio.size else 0.0)


def _uv(n: int, h: float):
    I, J = _index_grids(n)
    return I * h, J * h, I <= J


def _is_zero(q: Potential) -> bool:
    return not np.any(q.values)


def verify_kernel_bounds(K: KernelGrid, q_from: Potential, q_to: Potential,
                         Q1: float | None = None) -> list[BoundCheck]:
    """Compact-support K-bound plus the general sigma/M form at every node.

    A pair with one zero potential is checked against the K0j/Kj0 form
    (Q1/2) exp((t-x) Q1/2); otherwise against Q1 exp((t-x) Q1).
    """
    n, h = K.n_grid, K.h
    U, V, tri = _uv(n, h)
    vals = K.values[tri]
    tmx = 2 * U[tri]                       # t - x
    if Q1 is None:
        Q1 = max(norm_lp(q_from, 1), norm_lp(q_to, 1))
    if _is_zero(q_from) or _is_zero(q_to):
        name = "K0j" if _is_zero(q_from) else "Kj0"
        compact = _count(vals, 0.5 * Q1 * np.exp(0.5 * tmx * Q1), f"{name}_compact")
    else:
        compact = _count(vals, Q1 * np.exp(tmx * Q1), "K12_compact")
    # the general bound is attained to first order near t = x, so the discrete
    # kernel can touch it up to quadrature error
    return [compact, _count(vals, general_K_bound(q_from, q_to)[tri], "K_general", rtol=1e-6)]


def _tail_arrays(q: Potential):
    """sigma and sigma_bar at nodes 0..2n (zero beyond a), exact for piecewise-linear |q|."""
    n, h = q.n_grid, q.h
    f = np.abs(q.values)
    x = q.x
    cell0 = 0.5 * h * (f[:-1] + f[1:])
    xm = 0.5 * (x[:-1] + x[1:])
    cell1 = h / 6.0 * (x[:-1] * f[:-1] + 4 * xm * 0.5 * (f[:-1] + f[1:]) + x[1:] * f[1:])
    s = np.concatenate([np.cumsum(cell0[::-1])[::-1], [0.0]])
    m1 = np.concatenate([np.cumsum(cell1[::-1])[::-1], [0.0]])
    sb = m1 - x * s
    pad = np.zeros(n)
    return np.concatenate([s, pad]), np.concatenate([sb, pad])


def general_K_bound(q_from: Potential, q_to: Potential) -> np.ndarray:
    """1/2 sigma_{q_to - q_from}((t+x)/2) M(x, t) on the (u, v) grid."""
    n = q_to.n_grid
    I, J = _index_grids(n)
    sd, _ = _tail_arrays(q_to - q_from)
    _, sb2 = _tail_arrays(q_to)
    _, sb1 = _tail_arrays(q_from)
    x, v, t = J - I, J, J + I
    M = np.exp(sb2[np.clip(x, 0, None)] - sb2[v] + sb1[v] - sb1[t])
    return np.where(I <= J, 0.5 * sd[v] * M, 0.0)


def verify_H_derivative_bounds(q1: Potential, q2: Potential, K: KernelGrid,
                               Q1: float | None = None) -> list[BoundCheck]:
    """Finite-difference H derivatives against the compact-support bounds.

    K is the kernel mapping q1 to q2; either potential may be zero, in which
    case the (Q1^2/2) exp((t-x) Q1/2) form applies, else (3/2) Q1^2 exp((t-x) Q1).
    """
    dx, dt, mask = h_derivatives(K, q1, q2)
    n, h = K.n_grid, K.h
    U, _, _ = _uv(n, h)
    tmx = 2 * U[mask]
    if Q1 is None:
        Q1 = max(norm_lp(q1, 1), norm_lp(q2, 1))
    if _is_zero(q1) or _is_zero(q2):
        bound = 0.5 * Q1 ** 2 * np.exp(0.5 * tmx * Q1)
        name = "H0j_derivative"
    else:
        bound = 1.5 * Q1 ** 2 * np.exp(tmx * Q1)
        name = "H12_derivative"
    both = np.maximum(np.abs(dx[mask]), np.abs(dt[mask]))
    return [_count(both, bound, name)]
