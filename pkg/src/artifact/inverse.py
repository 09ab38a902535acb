"""Reconstruction of q2 - q1 from a reference potential and the resonances of q2.

Pipeline: resonances of q1 -> pairing -> psi2_hat - psi1 = psi1 (W - 1) on a
truncated contour -> Fourier inversion for K02 - K01 on [0, 2a] -> Volterra
correction for K12(0, .) -> Goursat solve for Kt12 -> primitive 2 Kt12(0, x)
and the pointwise difference -2 d/dx Kt12(0, x).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from artifact.bounds import alpha_star, theorem2_bound, theorem3_bound
from artifact.jost import _filon_many, jost_function
from artifact.kernels import (GoursatConfig, KernelGrid, goursat_from_boundary,
                              interaction, inverse_kernel_K10, rev_cumtrapz)
from artifact.potential import AprioriParams, Potential
from artifact.resonances import (PairingResult, ResonanceSearchConfig, ResonanceSet,
                                 find_resonances, pair_resonances)

log = logging.getLogger(__name__)


class PoleError(ZeroDivisionError):
    """z coincides with a zero of the reference Jost function."""


class UndersampledError(ValueError):
    pass


class OuterLoopDivergence(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class ReconstructionConfig:
    R: float
    alpha: float | None = None          # None: alpha* of the a priori parameters
    cutoff_A: float | None = None       # None: R^alpha
    quad_points: int = 2001             # z-samples on [-A, A]
    outer_iters: int = 20
    outer_damping: float = 0.7
    outer_tol: float = 1e-8
    path: str = "real"                  # "real" or "contour"
    search: ResonanceSearchConfig = field(default_factory=ResonanceSearchConfig)

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.quad_points < 16:
            raise ValueError("quad_points must be >= 16")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be positive")
        if not 0 < self.outer_damping <= 1:
            raise ValueError("outer_damping must lie in (0, 1]")
        if self.path not in ("real", "contour"):
            raise ValueError(f"unknown path {self.path!r}")

    def resolved(self, params: AprioriParams) -> tuple[float, float]:
        """(alpha, A) after defaults, validated against delta."""
        al = alpha_star(params) if self.alpha is None else self.alpha
        if not al < 1 - params.delta:
            raise ValueError(f"alpha = {al} must be below 1 - delta = {1 - params.delta}")
        A = self.R ** al if self.cutoff_A is None else self.cutoff_A
        if A < self.R ** al * (1 - 1e-12):
            raise ValueError("cutoff_A must be at least R^alpha")
        return al, A


@dataclass
class ReconstructionResult:
    x: np.ndarray
    primitive_estimate: np.ndarray
    pointwise_estimate: np.ndarray | None
    diagnostics: dict

    def q2_estimate(self, q1: Potential) -> Potential:
        if self.pointwise_estimate is None:
            raise ValueError("no pointwise estimate")
        return Potential(q1.a, q1.values + self.pointwise_estimate)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "primitive_estimate": self.primitive_estimate.tolist(),
            "pointwise_estimate": None if self.pointwise_estimate is None
            else self.pointwise_estimate.tolist(),
            "diagnostics": self.diagnostics,
        }

    def table(self, primitive_true=None, pointwise_true=None) -> list[dict]:
        """Rows for CSV output; true columns only when supplied."""
        rows = []
        for i, x in enumerate(self.x):
            row = {"x": x}
            if primitive_true is not None:
                row["primitive_true"] = primitive_true[i]
            row["primitive_est"] = self.primitive_estimate[i]
            if pointwise_true is not None:
                row["pointwise_true"] = pointwise_true[i]
            if self.pointwise_estimate is not None:
                row["pointwise_est"] = self.pointwise_estimate[i]
            rows.append(row)
        return rows


# -- Hadamard ratio --------------------------------------------------------------------

def weierstrass_factor(w):
    """E(w) = (1 - w) e^w."""
    w = np.asarray(w, dtype=complex)
    out = (1 - w) * np.exp(w)
    return complex(out) if out.ndim == 0 else out


def _log_ratio_terms(pairing: PairingResult, z: np.ndarray) -> np.ndarray:
    total = np.zeros(z.shape, dtype=complex)
    for z1, z2 in pairing.pairs:
        den = 1 - z / z1
        if np.any(den == 0):
            raise PoleError(f"z hits the zero {z1} of the reference Jost function")
        d = 1 / z1 - 1 / z2
        # log E(z/z2) - log E(z/z1), accumulated per pair
        with np.errstate(divide="ignore"):
            total += np.log1p(z * d / den) - z * d
    return total


def hadamard_ratio_W(pairing: PairingResult, z):
    """prod_n E(z/z2_n) / E(z/z1_n) as exp of the summed pairwise log differences."""
    zz = np.asarray(z, dtype=complex)
    out = np.exp(_log_ratio_terms(pairing, np.atleast_1d(zz)))
    return complex(out[0]) if zz.ndim == 0 else out.reshape(zz.shape)


def psi2_estimate(q1: Potential, pairing: PairingResult, z, R: float | None = None,
                  delta: float | None = None, diagnostics: dict | None = None):
    """psi2_hat(z) = psi1(z) W(z).

    When R and delta are given, the largest |z| / R^{1-delta} is recorded in
    diagnostics["trust_ratio"]; values above 1 leave the region where the
    dropped remainder is controlled.
    """
    zz = np.asarray(z, dtype=complex)
    W = hadamard_ratio_W(pairing, zz)
    psi1 = jost_function(q1, zz, route="auto")
    if diagnostics is not None and R is not None and delta is not None:
        ratio = float(np.max(np.abs(zz))) / R ** (1 - delta) if zz.size else 0.0
        diagnostics["trust_ratio"] = max(ratio, diagnostics.get("trust_ratio", 0.0))
        if ratio > 1:
            log.warning("psi2 estimate requested outside the trust region (ratio %.3g)", ratio)
    return psi1 * W


# -- Fourier inversion -----------------------------------------------------------------

@dataclass(frozen=True)
class SampledSpectrum:
    """Samples f(z_k) on the uniform grid z_k = -A + k dz, k = 0..N."""

    A: float
    values: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.linspace(-self.A, self.A, len(self.values))

    @property
    def dz(self) -> float:
        return 2 * self.A / (len(self.values) - 1)

    @classmethod
    def from_function(cls, f, A: float, n: int) -> "SampledSpectrum":
        return cls(A, np.asarray(f(np.linspace(-A, A, n)), dtype=complex))


def required_samples(A: float, t_max: float) -> int:
    """Smallest sample count with at least 8 points per period of e^{-izt} for t <= t_max."""
    return int(math.ceil(2 * A * 8 * t_max / (2 * math.pi))) + 1


def _invert(spec: SampledSpectrum, t: np.ndarray) -> np.ndarray:
    """(1/2pi) int_{-A}^{A} f(z) e^{-izt} dz, f piecewise linear in z (complex result)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size and spec.dz > 2 * math.pi / (8 * max(float(np.max(np.abs(t))), 1e-300)):
        raise UndersampledError(
            f"dz = {spec.dz:.4g} resolves e^(-izt) with fewer than 8 points per period "
            f"at t = {np.max(np.abs(t)):.4g}")
    # int_{-A}^{A} f e^{-izt} dz = e^{iAt} int_0^{2A} f(-A + s) e^{-ist} ds
    F = np.stack([spec.values.real, spec.values.imag])
    I = _filon_many(F, spec.dz, -t)
    return np.exp(1j * spec.A * t) * (I[0] + 1j * I[1]) / (2 * math.pi)


def fourier_invert_diff(psi_diff: SampledSpectrum, t, return_imag: bool = False):
    """Truncated inversion (1/2pi) int_{-A}^{A} psi_diff(z) e^{-izt} dz, real part.

    Exact for the piecewise-linear interpolant of the samples; raises
    UndersampledError below 8 samples per period of e^{-izt}.
    """
    out = _invert(psi_diff, t)
    scalar = np.ndim(t) == 0
    re = float(out.real[0]) if scalar else out.real
    if return_imag:
        return re, (float(out.imag[0]) if scalar else out.imag)
    return re


def _gl_panels(a: complex, b: complex, n_panels: int, order: int = 16):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0, 1, n_panels + 1)
    s = (edges[:-1, None] + (x[None, :] + 1) / 2 * np.diff(edges)[:, None]).ravel()
    ws = (w[None, :] / 2 * np.diff(edges)[:, None]).ravel()
    return a + (b - a) * s, (b - a) * ws


def contour_nodes(rho: float, height: float, t_max: float, order: int = 16):
    """Nodes and weights of Gamma: -rho -> -rho + i h -> rho + i h -> rho."""
    per = max(1.0, t_max / math.pi)           # panels per unit length
    segs = [(-rho, -rho + 1j * height), (-rho + 1j * height, rho + 1j * height),
            (rho + 1j * height, rho)]
    zs, ws = [], []
    for a0, b0 in segs:
        z, w = _gl_panels(a0, b0, max(2, int(math.ceil(abs(b0 - a0) * per))), order)
        zs.append(z)
        ws.append(w)
    return np.concatenate(zs), np.concatenate(ws)


def _invert_contour(f_vals: np.ndarray, z: np.ndarray, w: np.ndarray, t: np.ndarray):
    E = np.exp(-1j * np.outer(t, z))
    return (E * (w * f_vals)[None, :]).sum(axis=1) / (2 * math.pi)


# -- Volterra correction and Goursat stage -----------------------------------------------

def _k10_on_t_grid(K10: KernelGrid) -> np.ndarray:
    """M[m, k] = K10(2mh, 2kh) for m <= k, zero off the support."""
    n = K10.n_grid
    m = np.arange(n + 1)[:, None]
    k = np.arange(n + 1)[None, :]
    u, v = k - m, k + m
    ok = (u >= 0) & (v <= n)
    return np.where(ok, K10.values[np.clip(u, 0, n), np.clip(v, 0, n)], 0.0)


def k12_boundary(Kdiff: np.ndarray, q1: Potential, K10: KernelGrid | None = None,
                 cfg: GoursatConfig | None = None) -> np.ndarray:
    """K12(0, t_k) = Kd(t_k) + int_0^{t_k} Kd(s) K10(s, t_k) ds on t_k = 2 k h."""
    Kd = np.asarray(Kdiff, dtype=float)
    n = q1.n_grid
    if Kd.shape != (n + 1,):
        raise ValueError(f"Kdiff must have {n + 1} samples on t_k = 2kh")
    if not np.any(q1.values):
        return Kd.copy()
    K10 = K10 or inverse_kernel_K10(q1, cfg)
    M = _k10_on_t_grid(K10)
    ht = 2 * q1.h
    f = Kd[:, None] * M                            # integrand over s (rows) for each t_k
    C = cumulative_trapezoid(f, dx=ht, axis=0, initial=0)
    return Kd + C[np.arange(n + 1), np.arange(n + 1)]


def _dt_k10(K10: KernelGrid, q1: Potential) -> np.ndarray:
    """dK10/dt (s_m, t_k) on the t-grid via the kernel equation."""
    n, h = K10.n_grid, K10.h
    G = interaction(q1, Potential(q1.a, np.zeros_like(q1.values)))
    GK = G * K10.values
    Hu = rev_cumtrapz(GK, h, 1)                              # int_v^a G(u, s) K(u, s) ds
    Hv = -cumulative_trapezoid(GK, dx=h, axis=0, initial=0)  # -int_0^u G(r, v) K(r, v) dr
    qv = np.broadcast_to(q1.values[None, :], G.shape)
    dt_tilde = np.triu(0.25 * qv + 0.5 * (Hu + Hv))
    m = np.arange(n + 1)[:, None]
    k = np.arange(n + 1)[None, :]
    u, v = k - m, k + m
    ok = (u >= 0) & (v <= n)
    return np.where(ok, dt_tilde[np.clip(u, 0, n), np.clip(v, 0, n)], 0.0)


def dt_k12_boundary(Kd: np.ndarray, dKd: np.ndarray, q1: Potential,
                    K10: KernelGrid | None = None) -> np.ndarray:
    """d/dt K12(0, t) at t_k = 2kh from the Volterra relation.

    d/dt [Kd(t) + int_0^t Kd(s) K10(s, t) ds]
        = Kd'(t) + Kd(t) K10(t, t) + int_0^t Kd(s) dK10/dt(s, t) ds.
    """
    n = q1.n_grid
    if not np.any(q1.values):
        return np.asarray(dKd, dtype=float).copy()
    K10 = K10 or inverse_kernel_K10(q1)
    diag = np.zeros(n + 1)
    half = n // 2
    diag[:half + 1] = K10.values[0, 0:2 * half + 1:2]       # K10(t, t) = Kt(0, t), t = 2kh <= a
    D = _dt_k10(K10, q1)
    C = cumulative_trapezoid(np.asarray(Kd)[:, None] * D, dx=2 * q1.h, axis=0, initial=0)
    return np.asarray(dKd) + np.asarray(Kd) * diag + C[np.arange(n + 1), np.arange(n + 1)]


def diagonal_derivative(Kt: KernelGrid, q1: Potential, q2: Potential, dtB: np.ndarray) -> np.ndarray:
    """d/dx Kt12(0, x) at x_i from the exact identity

        int_x^a (q1(y+x) - q2(y-x)) Kt(x, y) dy - int_0^x (q1(x+y) - q2(x-y)) Kt(y, x) dy
        + 2 dK12/dt(0, 2x),

    where dtB[i] = dK12/dt(0, 2 x_i)."""
    n, h = Kt.n_grid, Kt.h
    GK = -interaction(q1, q2) * Kt.values
    row = rev_cumtrapz(GK, h, 1)
    col = cumulative_trapezoid(GK, dx=h, axis=0, initial=0)
    i = np.arange(n + 1)
    return row[i, i] - col[i, i] + 2 * np.asarray(dtB)


# -- pipeline ---------------------------------------------------------------------------------

def _t_grid_values(q1: Potential) -> np.ndarray:
    """t_k = 2 k h, k = 0..n (K12(0, t) at t = 2 v_k)."""
    return 2 * q1.h * np.arange(q1.n_grid + 1)


def estimate_kernel_difference(q1: Potential, pairing: PairingResult, R: float, alpha: float,
                               A: float, cfg: ReconstructionConfig, delta: float,
                               diagnostics: dict) -> tuple[np.ndarray, np.ndarray]:
    """Kd(t_k) and Kd'(t_k) from psi1 (W - 1) on the chosen path."""
    t = _t_grid_values(q1)
    tmax = 2 * q1.a
    if cfg.path == "real":
        n = max(cfg.quad_points, required_samples(A, tmax))
        spec_z = np.linspace(-A, A, n)
        psi_hat = psi2_estimate(q1, pairing, spec_z, R, delta, diagnostics)
        diff = psi_hat - jost_function(q1, spec_z, route="auto")
        s0 = SampledSpectrum(A, diff)
        s1 = SampledSpectrum(A, -1j * spec_z * diff)
        Kd, Kd_im = fourier_invert_diff(s0, t, return_imag=True)
        dKd = fourier_invert_diff(s1, t)
        diagnostics["n_samples"] = n
    else:
        height = diagnostics["A_contour"]
        z, w = contour_nodes(A, height, tmax)
        psi_hat = psi2_estimate(q1, pairing, z, R, delta, diagnostics)
        diff = psi_hat - jost_function(q1, z, route="auto")
        out = _invert_contour(diff, z, w, t)
        dout = _invert_contour(-1j * z * diff, z, w, t)
        Kd, Kd_im, dKd = out.real, out.imag, dout.real
        diagnostics["n_samples"] = int(z.size)
    diagnostics["fourier_imag_max"] = float(np.max(np.abs(Kd_im)))
    return np.asarray(Kd), np.asarray(dKd)


def reconstruct(q1: Potential, resonances2: ResonanceSet, params: AprioriParams,
                cfg: ReconstructionConfig, resonances1: ResonanceSet | None = None) -> ReconstructionResult:
    """Estimate int_x^a (q2 - q1) and (q2 - q1)(x) on q1's grid.

    resonances1 may be passed to skip the internal zero search for q1.
    """
    t0 = time.perf_counter()
    alpha, A = cfg.resolved(params)
    diag: dict = {"R": cfg.R, "alpha": alpha, "cutoff_A": A, "path": cfg.path,
                  "A_contour": params.A_contour}
    s1 = resonances1 if resonances1 is not None else find_resonances(q1, cfg.R, cfg=cfg.search)
    pairing = pair_resonances(s1, resonances2)
    diag["n_pairs"] = len(pairing.pairs)
    diag["epsilon"] = pairing.epsilon

    Kd, dKd = estimate_kernel_difference(q1, pairing, cfg.R, alpha, A, cfg, params.delta, diag)
    K10 = inverse_kernel_K10(q1) if np.any(q1.values) else None
    B = k12_boundary(Kd, q1, K10)
    diag["boundary_tail"] = float(B[-1])
    B[-1] = 0.0                               # K12(0, 2a) = 0 for potentials supported in [0, a]
    dtB = dt_k12_boundary(Kd, dKd, q1, K10)
    # dtB is indexed by t_k = 2 x_k, which is what the identity needs
    q2 = q1
    history: list[float] = []
    increases = 0
    Kt = None
    delta_q = np.zeros_like(q1.values)
    gcfg = GoursatConfig.default_for(q1)
    converged = False
    for it in range(cfg.outer_iters):
        Kt = goursat_from_boundary(B, q1, q2, gcfg)
        delta_q = -2 * diagonal_derivative(Kt, q1, q2, dtB)
        new = (1 - cfg.outer_damping) * q2.values + cfg.outer_damping * (q1.values + delta_q)
        change = float(np.max(np.abs(new - q2.values)))
        history.append(change)
        if len(history) > 1 and change > history[-2]:
            increases += 1
            if increases >= 3:
                raise OuterLoopDivergence("outer self-consistency loop diverges", history)
        else:
            increases = 0
        q2 = Potential(q1.a, new)
        if change < cfg.outer_tol:
            converged = True
            break
    Kt = goursat_from_boundary(B, q1, q2, gcfg)
    primitive = 2 * Kt.diagonal()
    primitive[-1] = 0.0
    delta_q = -2 * diagonal_derivative(Kt, q1, q2, dtB)

    diag["outer_history"] = history
    diag["outer_converged"] = converged
    diag["goursat_iterations"] = Kt.iterations
    diag["goursat_increment"] = Kt.last_increment
    eps = pairing.epsilon
    diag["bounds_theorem2"] = theorem2_bound(cfg.R, eps, params).to_dict()
    pointwise = None
    if params.has_smoothness:
        pointwise = delta_q
        diag["bounds_theorem3"] = theorem3_bound(cfg.R, eps, params).to_dict()
    diag["seconds"] = time.perf_counter() - t0
    return ReconstructionResult(q1.x.copy(), primitive, pointwise, diag)


def primitive_of(q1: Potential, q2: Potential) -> np.ndarray:
    """int_x^a (q2 - q1) on the grid (ground truth for experiments)."""
    return rev_cumtrapz(q2.values - q1.values, q1.h, 0)
