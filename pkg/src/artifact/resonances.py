"""Zeros of the Jost function in a disk and pairing of two zero sets.

Counting uses the argument principle on psi'/psi: the periodic trapezoid rule
on circles and composite Gauss-Legendre panels on rectangle edges.  Zeros are
isolated by recursive box subdivision and polished by Newton's method.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from artifact.jost import DEFAULT_CFG, JostEvaluationConfig, jost_value_and_derivative
from artifact.potential import Potential, norm_lp

log = logging.getLogger(__name__)


class ZeroOnContour(RuntimeError):
    pass


class SubdivisionBudgetExceeded(RuntimeError):
    def __init__(self, msg: str, unresolved: list):
        super().__init__(f"{msg}; unresolved boxes: {unresolved}")
        self.unresolved = unresolved


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class ResonanceSet:
    """Zeros of psi in the closed disk |z| <= R, origin excluded and counted separately."""

    R: float
    zeros: tuple[tuple[complex, int], ...] = ()
    n_origin: int = 0
    flagged: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        zs = tuple(sorted(((complex(z), int(m)) for z, m in self.zeros),
                          key=lambda e: (e[0].real, e[0].imag)))
        for z, m in zs:
            if m < 1:
                raise ValueError("multiplicities must be positive")
            if z == 0:
                raise ValueError("origin zeros belong in n_origin")
        object.__setattr__(self, "zeros", zs)

    @property
    def total(self) -> int:
        return self.n_origin + sum(m for _, m in self.zeros)

    def locations(self) -> np.ndarray:
        """Zero locations repeated by multiplicity."""
        return np.array([z for z, m in self.zeros for _ in range(m)], dtype=complex)

    def to_dict(self) -> dict:
        return {"R": self.R, "n_origin": self.n_origin,
                "zeros": [{"re": z.real, "im": z.imag, "mult": m} for z, m in self.zeros]}

    @classmethod
    def from_dict(cls, d: dict) -> "ResonanceSet":
        return cls(float(d["R"]),
                   tuple((complex(e["re"], e["im"]), int(e.get("mult", 1))) for e in d["zeros"]),
                   int(d.get("n_origin", 0)))


@dataclass(frozen=True)
class ResonanceSearchConfig:
    tol: float = 1e-8
    multiplicity_cap: int = 3
    max_boxes: int = 4000
    jitter_steps: int = 5
    jost: JostEvaluationConfig = DEFAULT_CFG
    # RK4 density for contour moments; Newton polishing uses `jost`
    count_steps_per_unit: int = 32

    def counting_cfg(self) -> JostEvaluationConfig:
        spu = min(self.count_steps_per_unit, self.jost.ode_steps_per_unit)
        return JostEvaluationConfig(spu, self.jost.quad_points)


# -- argument principle ----------------------------------------------------------

def _logderiv(q: Potential, z: np.ndarray, jcfg: JostEvaluationConfig):
    psi, dpsi = jost_value_and_derivative(q, z, route="auto", cfg=jcfg)
    return psi, dpsi / psi


def _circle_integrals(q, center, radius, M, jcfg):
    th = 2 * np.pi * np.arange(M) / M
    w = radius * np.exp(1j * th)
    z = center + w
    psi, ld = _logderiv(q, z, jcfg)
    i0 = np.mean(ld * w)                    # (1/2 pi i) contour integral of psi'/psi
    return i0, np.abs(psi)


def winding_on_circle(q: Potential, center: complex, radius: float,
                      jcfg: JostEvaluationConfig = DEFAULT_CFG, m_min: int = 64,
                      m_max: int = 1 << 14) -> float:
    """Raw (unrounded) argument-principle value on a circle."""
    M = m_min
    prev, mod = _circle_integrals(q, center, radius, M, jcfg)
    while M < m_max:
        M *= 2
        cur, mod = _circle_integrals(q, center, radius, M, jcfg)
        if abs(cur - prev) < 1e-6 * max(1.0, abs(cur)) and abs(cur.imag) < 0.05:
            return cur.real
        prev = cur
    raise ZeroOnContour(
        f"circle |z - {center}| = {radius}: quadrature not converged "
        f"(min |psi| = {mod.min():.3e})")


def count_zeros(q: Potential, center: complex = 0.0, radius: float = 1.0,
                jcfg: JostEvaluationConfig = DEFAULT_CFG, threshold: float = 1e-10) -> int:
    """Number of zeros of psi in |z - center| < radius, with multiplicity."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    raw = winding_on_circle(q, center, radius, jcfg)
    n = round(raw)
    if abs(raw - n) > 0.25:
        raise ZeroOnContour(f"winding {raw:.4f} is not near an integer")
    # coarse check of |psi| along the contour relative to its typical size
    _, mod = _circle_integrals(q, center, radius, 512, jcfg)
    if mod.min() < threshold * np.median(mod):
        raise ZeroOnContour(f"|psi| drops to {mod.min():.3e} on the contour")
    return int(n)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    y0: float
    y1: float

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def diameter(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    def contains(self, z: complex) -> bool:
        return self.x0 <= z.real <= self.x1 and self.y0 <= z.imag <= self.y1

    def split(self, frac: float) -> tuple["Box", "Box"]:
        if self.x1 - self.x0 >= self.y1 - self.y0:
            xm = self.x0 + frac * (self.x1 - self.x0)
            return Box(self.x0, xm, self.y0, self.y1), Box(xm, self.x1, self.y0, self.y1)
        ym = self.y0 + frac * (self.y1 - self.y0)
        return Box(self.x0, self.x1, self.y0, ym), Box(self.x0, self.x1, ym, self.y1)

    def min_abs(self) -> float:
        """Smallest |z| over the box."""
        cx = min(max(0.0, self.x0), self.x1)
        cy = min(max(0.0, self.y0), self.y1)
        return math.hypot(cx, cy)


def _edge_nodes(box: Box, panels: int):
    corners = [complex(box.x0, box.y0), complex(box.x1, box.y0),
               complex(box.x1, box.y1), complex(box.x0, box.y1)]
    zs, ws = [], []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        edges = np.linspace(0, 1, panels + 1)
        for p in range(panels):
            lo, hi = edges[p], edges[p + 1]
            s = lo + (hi - lo) * (_GL_X + 1) / 2
            zs.append(a + (b - a) * s)
            ws.append((b - a) * (hi - lo) / 2 * _GL_W)
    return np.concatenate(zs), np.concatenate(ws)


def box_moments(q: Potential, box: Box, jcfg: JostEvaluationConfig, max_panels: int = 256):
    """(N, s1, s2): zero count and sums of z, z^2 over zeros in the box."""
    panels = 2
    prev = None
    while panels <= max_panels:
        z, w = _edge_nodes(box, panels)
        psi, ld = _logderiv(q, z, jcfg)
        if not np.all(np.isfinite(ld)):
            raise ZeroOnContour(f"psi vanishes on the edge of {box}")
        f = ld * w / (2j * np.pi)
        c = z - box.center
        mom = np.array([np.sum(f), np.sum(f * c), np.sum(f * c * c)])
        if prev is not None and abs(mom[0] - prev[0]) < 1e-6 and np.all(
                np.abs(mom - prev) < 1e-8 * (1 + box.diameter ** 2)):
            n = round(mom[0].real)
            if abs(mom[0] - n) > 0.25:
                raise ZeroOnContour(f"box {box}: winding {mom[0]:.4f} not integral")
            # moments are taken about the box centre
            cz = box.center
            s1 = mom[1] + n * cz
            s2 = mom[2] + 2 * cz * mom[1] + n * cz * cz
            return int(n), complex(s1), complex(s2)
        prev = mom
        panels *= 2
    raise ZeroOnContour(f"box {box}: edge quadrature not converged")


# -- Newton refinement ---------------------------------------------------------------

def newton_polish(q: Potential, z0: complex, mult: int = 1,
                  jcfg: JostEvaluationConfig = DEFAULT_CFG, max_iter: int = 40):
    """Modified Newton z <- z - m psi/psi' with the ODE route (reference evaluator)."""
    z = complex(z0)
    for _ in range(max_iter):
        psi, dpsi = jost_value_and_derivative(q, z, route="ode", cfg=jcfg)
        if dpsi == 0:
            break
        step = mult * psi / dpsi
        z -= step
        if abs(step) < 1e-13 * (1 + abs(z)):
            break
    psi, dpsi = jost_value_and_derivative(q, z, route="ode", cfg=jcfg)
    return z, psi, dpsi


_SPLITS = (0.5 + 0.0137, 0.5 - 0.0291, 0.5 + 0.0457, 0.5 - 0.0613, 0.5 + 0.0771)


def _locate_in_box(q, box, n, s1, s2, rcfg, local_scale):
    """Try to resolve a box holding n zeros as one zero of multiplicity n."""
    zc = s1 / n
    spread = abs(s2 / n - zc * zc) if n > 1 else 0.0
    if n > 1 and spread > (1e-4 * box.diameter) ** 2:
        return None
    z, psi, dpsi = newton_polish(q, zc, n, rcfg.jost)
    if not box.contains(z) and abs(z - zc) > 0.25 * box.diameter:
        return None
    ok = abs(psi) < rcfg.tol * local_scale
    return z, ok


def find_resonances(q: Potential, R: float, tol: float | None = None,
                    cfg: ResonanceSearchConfig = ResonanceSearchConfig()) -> ResonanceSet:
    """All zeros of psi in |z| <= R with multiplicities.

    The search region is the disk's bounding square, cut off above the
    imaginary level Q1 e^{aQ1}: for real q no zero of psi in the closed upper
    half-plane lies outside that disk.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if tol is not None:
        cfg = replace(cfg, tol=tol)
    if not np.any(q.values):
        return ResonanceSet(R, (), 0)
    jcfg = cfg.counting_cfg()
    R_eff = None
    total = None
    for k in [0] + [s * j for j in range(1, cfg.jitter_steps + 1) for s in (1, -1)]:
        Rk = R * (1 + 1e-3 * k)
        try:
            total = count_zeros(q, 0.0, Rk, jcfg)
            R_eff = Rk
            break
        except ZeroOnContour as exc:
            log.info("radius %.6g rejected: %s", Rk, exc)
    if R_eff is None:
        raise ZeroOnContour(f"no clean radius near R = {R}")

    n_origin = _origin_multiplicity(q, cfg)
    Q1 = norm_lp(q, 1)
    y_top = min(R_eff, Q1 * math.exp(q.a * Q1) * 1.01 + 0.0173)
    root = Box(-R_eff * 1.0011, R_eff * 1.0013, -R_eff * 1.0007, y_top)
    found: list[tuple[complex, int, bool]] = []
    n_root, _, _ = box_moments(q, root, jcfg)
    stack = [(root, n_root)]
    boxes = 1
    unresolved = []
    while stack:
        box, n = stack.pop()
        if n == 0 or box.min_abs() > R_eff:
            continue
        if n <= cfg.multiplicity_cap and box.diameter < 4.0:
            _, s1, s2 = box_moments(q, box, jcfg)
            scale = _local_scale(q, box, jcfg)
            res = _locate_in_box(q, box, n, s1, s2, cfg, scale)
            if res is not None:
                found.append((res[0], n, res[1]))
                continue
        if box.diameter < 1e-9 * (1 + abs(box.center)):
            unresolved.append(box)
            continue
        children = None
        for frac in _SPLITS:
            b1, b2 = box.split(frac)
            try:
                n1 = box_moments(q, b1, jcfg)[0]
                n2 = box_moments(q, b2, jcfg)[0]
            except ZeroOnContour:
                continue
            if n1 + n2 == n:
                children = ((b1, n1), (b2, n2))
                break
        boxes += 2
        if children is None or boxes > cfg.max_boxes:
            unresolved.append(box)
            continue
        stack.extend(children)
    if unresolved:
        raise SubdivisionBudgetExceeded("zero search incomplete", unresolved)

    zeros = []
    origin_seen = 0
    for z, m, ok in found:
        if abs(z) < 1e-7:
            origin_seen += m
            continue
        if not ok:
            log.warning("zero near %s did not reach the residual tolerance", z)
        if abs(z) <= R_eff:
            zeros.append((z, m))
    out = ResonanceSet(R_eff, tuple(zeros), n_origin)
    if out.total != total:
        raise RuntimeError(
            f"located {out.total} zeros (origin {n_origin}) but the disk count is {total}")
    return out


def _local_scale(q, box, jcfg) -> float:
    z, _ = _edge_nodes(box, 1)
    psi, _ = jost_value_and_derivative(q, z, route="auto", cfg=jcfg)
    return float(max(1.0, np.median(np.abs(psi))))


def _origin_multiplicity(q: Potential, cfg: ResonanceSearchConfig) -> int:
    psi0, _ = jost_value_and_derivative(q, 0.0, route="ode", cfg=cfg.jost)
    if abs(psi0) >= cfg.tol:
        return 0
    return count_zeros(q, 0.0, 1e-3, cfg.jost)


# -- pairing ----------------------------------------------------------------------

@dataclass(frozen=True)
class PairingResult:
    pairs: tuple[tuple[complex, complex], ...]
    epsilon: float
    n_origin: int = 0


def _perfect_matching(adj: np.ndarray):
    m = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
    return m if np.all(m >= 0) else None


def pair_resonances(s1: ResonanceSet, s2: ResonanceSet) -> PairingResult:
    """Bijection between the zero multisets minimizing max |1/z2 - 1/z1|."""
    if s1.n_origin != s2.n_origin:
        raise PairingError(f"origin multiplicities differ: {s1.n_origin} vs {s2.n_origin}")
    z1, z2 = s1.locations(), s2.locations()
    if len(z1) != len(z2):
        raise PairingError(f"zero counts differ: {len(z1)} vs {len(z2)}")
    if len(z1) == 0:
        return PairingResult((), 0.0, s1.n_origin)
    cost = np.abs(1 / z2[None, :] - 1 / z1[:, None])
    levels = np.unique(cost)
    lo, hi = 0, len(levels) - 1
    best = _perfect_matching(cost <= levels[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        m = _perfect_matching(cost <= levels[mid])
        if m is None:
            lo = mid + 1
        else:
            hi, best = mid, m
    pairs = tuple((complex(z1[i]), complex(z2[best[i]])) for i in range(len(z1)))
    eps = float(max(cost[i, best[i]] for i in range(len(z1))))
    return PairingResult(pairs, eps, s1.n_origin)


def perturb_resonances(s: ResonanceSet, eps: float, seed: int) -> ResonanceSet:
    """Move every zero so that 1/z shifts by less than eps, uniformly in that disk.

    Zeros are processed in conjugate pairs (z, -conj z) with mirrored shifts,
    zeros on the imaginary axis get purely imaginary shifts, so symmetric
    sets stay symmetric.  Zeros whose half-plane could flip are flagged.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return s
    rng = np.random.default_rng(seed)
    zs = list(s.zeros)
    out: list[tuple[complex, int] | None] = [None] * len(zs)
    flagged = []
    used = [False] * len(zs)
    for i, (z, m) in enumerate(zs):
        if used[i]:
            continue
        used[i] = True
        if 2 * eps * abs(z) ** 2 >= abs(z):
            raise ValueError(f"eps = {eps} too large for the zero at {z}")
        w = 1 / z
        mirror = None
        if abs(z.real) > 1e-12 * abs(z):
            target = -z.conjugate()
            for j in range(i + 1, len(zs)):
                if not used[j] and zs[j][1] == m and abs(zs[j][0] - target) <= 1e-6 * (1 + abs(z)):
                    mirror = j
                    break
        if abs(z.real) <= 1e-12 * abs(z):
            xi = 1j * eps * (2 * rng.random() - 1)
        else:
            r = eps * math.sqrt(rng.random())
            th = 2 * math.pi * rng.random()
            xi = r * complex(math.cos(th), math.sin(th))
        if eps >= abs(w.imag) and w.imag != 0:
            flagged.append(i)
        out[i] = (1 / (w + xi), m)
        if mirror is not None:
            used[mirror] = True
            wm = 1 / zs[mirror][0]
            out[mirror] = (1 / (wm - xi.conjugate()), m)
            if eps >= abs(wm.imag) and wm.imag != 0:
                flagged.append(mirror)
    if flagged:
        log.warning("perturbation of size %g may move %d zero(s) across the real axis", eps, len(flagged))
    return ResonanceSet(s.R, tuple(out), s.n_origin, tuple(sorted(flagged)))
