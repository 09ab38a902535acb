"""Jost solution and Jost function by two independent routes.

ode:    backward RK4 for -y'' + q y = z^2 y from x = a, where y = e^{izx}
        exactly; integrated for w = e^{-izx} y so that psi(z) = w(0, z).
kernel: psi(z) = 1 + int_0^{2a} K(0, t) e^{izt} dt with K the 0 -> q kernel,
        integrated exactly against the piecewise-linear interpolant of K(0, .)
        and Richardson-extrapolated over two kernel grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from artifact.kernels import BoundCheck, GoursatConfig, _count, solve_K0
from artifact.potential import Potential, norm_lp, sigma, sigma_bar


@dataclass(frozen=True)
class JostEvaluationConfig:
    ode_steps_per_unit: int = 128
    quad_points: int = 400

    def __post_init__(self):
        if self.ode_steps_per_unit < 16 or self.quad_points < 16:
            raise ValueError("ode_steps_per_unit and quad_points must be >= 16")


DEFAULT_CFG = JostEvaluationConfig()


def kernel_route_limit(a: float) -> float:
    """|Im z| above which the kernel route hands over to the ODE route."""
    return 25.0 / (2.0 * a)


# -- ODE route -------------------------------------------------------------------

# 2x2 matrices are 4-tuples of arrays (m00, m01, m10, m11); a "pair" (M, dM/dz)
# carries the z-derivative along through products.

def _mm(X, Y):
    a, b, c, d = X
    e, f, g, h = Y
    return (a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)


def _pmul(X, Y):
    if X[1] is None:
        return (_mm(X[0], Y[0]), None)
    return (_mm(X[0], Y[0]), tuple(u + v for u, v in zip(_mm(X[1], Y[0]), _mm(X[0], Y[1]))))


def _padd_id(X, s):
    """I + s X for a pair X (s scalar or array)."""
    M = (1 + s * X[0][0], s * X[0][1], s * X[0][2], 1 + s * X[0][3])
    if X[1] is None:
        return (M, None)
    return (M, tuple(s * v for v in X[1]))


def _rk4_propagators(qa, qb, qc, dh, z, with_dz):
    """One RK4 step matrix per row for w' = A w, A = [[0, 1], [q, -2iz]]."""
    c = -2j * z

    def amul(qv, X):
        M, Mz = X
        AM = (M[2], M[3], qv * M[0] + c * M[2], qv * M[1] + c * M[3])
        if not with_dz:
            return (AM, None)
        AMz = (Mz[2], Mz[3], qv * Mz[0] + c * Mz[2] - 2j * M[2], qv * Mz[1] + c * Mz[3] - 2j * M[3])
        return (AM, AMz)

    zero = np.zeros(np.broadcast(qa, z).shape, dtype=complex)
    A1 = ((zero, zero + 1, zero + qa, zero + c),
          (zero, zero, zero, zero - 2j) if with_dz else None)
    C2 = amul(qb, _padd_id(A1, dh / 2))
    C3 = amul(qb, _padd_id(C2, dh / 2))
    C4 = amul(qc, _padd_id(C3, dh))

    def comb(k):
        return tuple(a1 + 2 * c2 + 2 * c3 + c4 for a1, c2, c3, c4 in zip(A1[k], C2[k], C3[k], C4[k]))
    S = comb(0)
    P = (1 + dh / 6 * S[0], dh / 6 * S[1], dh / 6 * S[2], 1 + dh / 6 * S[3])
    Pz = tuple(dh / 6 * v for v in comb(1)) if with_dz else None
    return (P, Pz)


def _tree_product(P):
    """S_N ... S_1 for step matrices stored in row order S_1, ..., S_N."""
    while P[0][0].shape[0] > 1:
        n = P[0][0].shape[0]
        if n % 2:
            last = (tuple(v[-1:] for v in P[0]), tuple(v[-1:] for v in P[1]) if P[1] else None)
            head = (tuple(v[:-1] for v in P[0]), tuple(v[:-1] for v in P[1]) if P[1] else None)
        else:
            head, last = P, None
        odd = (tuple(v[0::2] for v in head[0]), tuple(v[0::2] for v in head[1]) if head[1] else None)
        even = (tuple(v[1::2] for v in head[0]), tuple(v[1::2] for v in head[1]) if head[1] else None)
        P = _pmul(even, odd)
        if last is not None:
            P = (tuple(np.concatenate([u, v]) for u, v in zip(P[0], last[0])),
                 tuple(np.concatenate([u, v]) for u, v in zip(P[1], last[1])) if P[1] else None)
    return P


def _rk4(q: Potential, z: np.ndarray, state: list, x0: float, x1: float, spu: int,
         with_dz: bool) -> list:
    """RK4 for (w, w'[, w_z, w_z']) from x0 to x1, where y = e^{izx} w.

    w'' = q w - 2iz w' and w_z'' = q w_z - 2iz w_z' - 2i w'.  For q = 0 the
    state is constant, so roundoff is not amplified by the e^{2a|Im z|}
    growth of the complementary mode.  The ODE is linear, so each RK4 step is
    a fixed 2x2 matrix; all step matrices are formed at once and multiplied
    by a pairwise tree product.
    """
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    m = max(1, math.ceil(spu * (1.0 + zmax) * q.h))
    h = q.h / m
    nodes = np.arange(math.ceil(min(x0, x1) / h - 1e-9), math.floor(max(x0, x1) / h + 1e-9) + 1) * h
    xs = np.unique(np.concatenate([[x0, x1], nodes]))
    xs = xs[(xs >= min(x0, x1)) & (xs <= max(x0, x1))]
    if x1 < x0:
        xs = xs[::-1]
    dh = np.diff(xs)[:, None]
    qa = q(xs[:-1])[:, None]
    qb = q(0.5 * (xs[:-1] + xs[1:]))[:, None]
    qc = q(xs[1:])[:, None]
    nsteps = len(dh)
    if nsteps == 0:
        return list(state)
    out = [np.empty(z.shape, dtype=complex) for _ in state]
    chunk = max(1, 60000 // max(nsteps, 1))
    for lo in range(0, z.size, chunk):
        zc = z[None, lo:lo + chunk]
        P, Pz = _tree_product(_rk4_propagators(qa, qb, qc, dh, zc, with_dz))
        P = tuple(v[0] for v in P)
        s0, s1 = state[0][lo:lo + chunk], state[1][lo:lo + chunk]
        out[0][lo:lo + chunk] = P[0] * s0 + P[1] * s1
        out[1][lo:lo + chunk] = P[2] * s0 + P[3] * s1
        if with_dz:
            Pz = tuple(v[0] for v in Pz)
            d0, d1 = state[2][lo:lo + chunk], state[3][lo:lo + chunk]
            out[2][lo:lo + chunk] = Pz[0] * s0 + Pz[1] * s1 + P[0] * d0 + P[1] * d1
            out[3][lo:lo + chunk] = Pz[2] * s0 + Pz[3] * s1 + P[2] * d0 + P[3] * d1
    return out


def _support(q: Potential) -> tuple[float, float]:
    """Interval outside which the interpolant of q vanishes."""
    nz = np.flatnonzero(q.values)
    if nz.size == 0:
        return q.a, q.a
    return max(nz[0] - 1, 0) * q.h, min(nz[-1] + 1, q.n_grid) * q.h


def _free_propagate(state: list, z: np.ndarray, d: float, with_dz: bool) -> list:
    """Exact solution of w'' = -2iz w' over a step d (q = 0 there)."""
    u = 2j * z * d
    E = np.exp(-u)
    small = np.abs(u) < 1e-3
    us = np.where(small, 1.0, u)
    phi = np.where(small, 1 - u / 2 + u * u / 6, -np.expm1(-us) / us)     # (1 - e^{-u})/u
    w, wp = state[0], state[1]
    out = [w + wp * d * phi, wp * E]
    if with_dz:
        dphi = np.where(small, -0.5 + u / 3 - u * u / 8, (E * (1 + us) - 1) / us ** 2)
        wz, wzp = state[2], state[3]
        out += [wz + wzp * d * phi + wp * d * dphi * 2j * d, wzp * E - 2j * d * wp * E]
    return out


def _backward_state(q: Potential, z: np.ndarray, x: float, spu: int, with_dz: bool):
    one, nil = np.ones_like(z), np.zeros_like(z)
    state = [one, nil] + ([nil, nil] if with_dz else [])
    lo, hi = _support(q)
    # w = 1 identically on [hi, a]
    top = min(hi, q.a)
    if x < top:
        start = max(lo, x)
        state = _rk4(q, z, state, top, start, spu, with_dz)
        if x < start:
            state = _free_propagate(state, z, x - start, with_dz)
    return state


def jost_solution(q: Potential, z, x: float = 0.0, cfg: JostEvaluationConfig = DEFAULT_CFG):
    """(y(x, z), y'(x, z)) for scalar or array z, by backward integration from x = a."""
    if not 0.0 <= x <= q.a:
        raise ValueError(f"x = {x} outside [0, {q.a}]")
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    flat = zz.ravel()
    w, wp = _backward_state(q, flat, x, cfg.ode_steps_per_unit, False)
    e = np.exp(1j * flat * x)
    y, yp = (e * w).reshape(zz.shape), (e * (wp + 1j * flat * w)).reshape(zz.shape)
    if np.ndim(z) == 0:
        return complex(y[0]), complex(yp[0])
    return y, yp


def _ode_psi(q: Potential, z: np.ndarray, cfg: JostEvaluationConfig, with_dz: bool):
    # batches share a step size, so group points of similar modulus
    psi = np.empty(z.shape, dtype=complex)
    dpsi = np.empty(z.shape, dtype=complex) if with_dz else None
    band = np.floor(2 * np.log2(1 + np.abs(z))).astype(int)
    for b in np.unique(band):
        sel = band == b
        s = _backward_state(q, z[sel], 0.0, cfg.ode_steps_per_unit, with_dz)
        psi[sel] = s[0]
        if with_dz:
            dpsi[sel] = s[2]
    return psi, dpsi


# -- kernel route ----------------------------------------------------------------

def _filon_weights(th: np.ndarray):
    """I0 = int_0^1 e^{i th s} ds and I1 = int_0^1 s e^{i th s} ds."""
    small = np.abs(th) < 1e-3
    ths = np.where(small, 1.0, th)
    E = np.exp(1j * ths)
    I0 = np.where(small, 1 + 0.5j * th - th ** 2 / 6 - 1j * th ** 3 / 24, (E - 1) / (1j * ths))
    I1 = np.where(small, 0.5 + 1j * th / 3 - th ** 2 / 8 - 1j * th ** 3 / 30,
                  E / (1j * ths) + (E - 1) / ths ** 2)
    return I0, I1


def _polyval_blocked(C: np.ndarray, r: np.ndarray, L: int = 32) -> np.ndarray:
    """sum_k C[:, k] r^k for each row of C, Horner within blocks of length L."""
    p, N = C.shape
    B = -(-N // L)
    Cb = np.zeros((p, B * L), dtype=C.dtype)
    Cb[:, :N] = C
    Cb = Cb.reshape(p, B, L)
    acc = np.zeros((p, B, r.size), dtype=complex)
    for j in range(L - 1, -1, -1):
        acc *= r
        acc += Cb[:, :, j, None]
    rL = r ** L
    out = np.zeros((p, r.size), dtype=complex)
    for b in range(B - 1, -1, -1):
        out *= rL
        out += acc[:, b, :]
    return out


def filon_linear(f: np.ndarray, h: float, z) -> np.ndarray:
    """int_0^{Nh} f(t) e^{izt} dt for the piecewise-linear interpolant of f at t_k = k h.

    On each cell the integral is exact; the sum over cells is a polynomial in
    r = e^{izh} evaluated by Horner's rule.
    """
    return _filon_many(np.asarray(f, dtype=float)[None, :], h, z)[0]


def _filon_many(F: np.ndarray, h: float, z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    I0, I1 = _filon_weights(z * h)
    C = np.concatenate([F[:, :-1], F[:, 1:]], axis=0)
    P = _polyval_blocked(C, np.exp(1j * z * h))
    m = F.shape[0]
    return h * ((I0 - I1) * P[:m] + I1 * P[m:])


@dataclass(frozen=True)
class _KernelBoundary:
    h: float            # t-step of the boundary samples
    k: np.ndarray       # K(0, t_k)
    tk: np.ndarray      # t_k K(0, t_k)


@lru_cache(maxsize=64)
def _kernel_boundaries(q: Potential, quad_points: int) -> tuple[_KernelBoundary, _KernelBoundary]:
    """K(0, .) for the 0 -> q kernel on a base grid and on its 2x refinement."""
    m = max(1, math.ceil(quad_points / q.n_grid))
    out = []
    for mult in (m, 2 * m):
        qr = q.refine(mult)
        K = solve_K0(qr, GoursatConfig.default_for(qr))
        b = K.boundary()
        ht = 2 * qr.h
        out.append(_KernelBoundary(ht, b, ht * np.arange(len(b)) * b))
    return out[0], out[1]


def _kernel_psi(q: Potential, z: np.ndarray, cfg: JostEvaluationConfig, with_dz: bool):
    c, f = _kernel_boundaries(q, cfg.quad_points)
    if not with_dz:
        vc = filon_linear(c.k, c.h, z)
        vf = filon_linear(f.k, f.h, z)
        return 1 + (4 * vf - vc) / 3, None
    vc = _filon_many(np.stack([c.k, c.tk]), c.h, z)
    vf = _filon_many(np.stack([f.k, f.tk]), f.h, z)
    ext = (4 * vf - vc) / 3
    return 1 + ext[0], 1j * ext[1]


# -- public API ---------------------------------------------------------------------

def _evaluate(q, z, route, cfg, with_dz):
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    flat = zz.ravel()
    psi = np.empty(flat.shape, dtype=complex)
    dpsi = np.empty(flat.shape, dtype=complex) if with_dz else None
    if route == "ode":
        use_kernel = np.zeros(flat.shape, dtype=bool)
    elif route == "kernel":
        use_kernel = np.ones(flat.shape, dtype=bool)
    elif route == "auto":
        use_kernel = np.abs(flat.imag) <= kernel_route_limit(q.a)
    else:
        raise ValueError(f"unknown route {route!r}")
    for sel, fn in ((use_kernel, _kernel_psi), (~use_kernel, _ode_psi)):
        if np.any(sel):
            p, d = fn(q, flat[sel], cfg, with_dz)
            psi[sel] = p
            if with_dz:
                dpsi[sel] = d
    psi = psi.reshape(zz.shape)
    if with_dz:
        dpsi = dpsi.reshape(zz.shape)
    if np.ndim(z) == 0:
        return (complex(psi[0]), complex(dpsi[0])) if with_dz else complex(psi[0])
    return (psi, dpsi) if with_dz else psi


def jost_function(q: Potential, z, route: str = "ode", cfg: JostEvaluationConfig = DEFAULT_CFG):
    """psi_q(z) = y_q(0, z); route is 'ode', 'kernel' or 'auto'."""
    return _evaluate(q, z, route, cfg, False)


def jost_derivative(q: Potential, z, cfg: JostEvaluationConfig = DEFAULT_CFG, route: str = "kernel"):
    """d psi / dz; kernel route by default, ODE route via the variational equation."""
    return _evaluate(q, z, route, cfg, True)[1]


def jost_value_and_derivative(q: Potential, z, route: str = "auto",
                              cfg: JostEvaluationConfig = DEFAULT_CFG):
    return _evaluate(q, z, route, cfg, True)


# -- bounds -------------------------------------------------------------------

def verify_halfplane_bounds(q: Potential, samples, Q1: float | None = None,
                            cfg: JostEvaluationConfig = DEFAULT_CFG) -> list[BoundCheck]:
    """Upper half-plane bounds on |psi - 1| and |psi|, plus the imaginary-axis form."""
    z = np.atleast_1d(np.asarray(samples, dtype=complex))
    if np.any(z.imag < 0):
        raise ValueError("samples must lie in the closed upper half-plane")
    psi = jost_function(q, z, route="ode", cfg=cfg)
    s0, sb0 = sigma(q, 0.0), sigma_bar(q, 0.0)
    if Q1 is None:
        Q1 = norm_lp(q, 1)
    nz = np.abs(z) > 0
    checks = [
        _count(np.abs(psi - 1)[nz], s0 * math.exp(sb0) / np.abs(z[nz]), "halfplane_psi_minus_one"),
        _count(np.abs(psi), math.exp(sb0), "halfplane_psi_modulus"),
    ]
    im = nz & (np.abs(z.real) == 0)
    checks.append(_count(np.abs(psi - 1)[im], 0.5 * Q1 * math.exp(q.a * Q1) / z[im].imag,
                         "imaginary_axis"))
    return checks


def verify_growth_bound(q: Potential, samples, Q1: float | None = None,
                        cfg: JostEvaluationConfig = DEFAULT_CFG) -> BoundCheck:
    """|psi(z)| <= (1 + a Q1 e^{aQ1}) e^{2a|z|} anywhere in the plane."""
    z = np.atleast_1d(np.asarray(samples, dtype=complex))
    psi = jost_function(q, z, route="ode", cfg=cfg)
    if Q1 is None:
        Q1 = norm_lp(q, 1)
    a = q.a
    return _count(np.abs(psi), (1 + a * Q1 * math.exp(a * Q1)) * np.exp(2 * a * np.abs(z)),
                  "entire_growth")
