"""Explicit constants, thresholds and envelopes of the stability estimates.

Every exponent involving p (or r) is written through s = 1/p, so p = INF is
the exact limit s = 0 rather than a large-number substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from artifact.potential import INF, AprioriParams

E = math.e
PI = math.pi


def _inv(p) -> float:
    return 0.0 if p is INF else 1.0 / float(p)


def _exp(x: float) -> float:
    """exp that saturates to +inf instead of raising."""
    return math.exp(x) if x < 709.0 else math.inf


def _pow(base: float, expo: float) -> float:
    if base == 0.0:
        return 0.0 if expo > 0 else math.inf
    return _exp(expo * math.log(base))


@dataclass(frozen=True)
class BoundBreakdown:
    """Named constants of one bound evaluation plus provenance flags."""

    values: dict[str, float]
    in_force: bool
    flags: tuple[str, ...] = ()
    kind: str = "theorem2"

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def __contains__(self, key: str) -> bool:
        return key in self.values

    @property
    def total(self) -> float:
        return self.values["total"]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_force": self.in_force, "flags": list(self.flags),
                "values": dict(sorted(self.values.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundBreakdown":
        return cls({k: float(v) for k, v in d["values"].items()}, bool(d["in_force"]),
                   tuple(d.get("flags", ())), d.get("kind", "theorem2"))

    def format_text(self) -> str:
        width = max(len(k) for k in self.values)
        lines = [f"# {self.kind}  in_force={self.in_force}"]
        lines += [f"# flag: {f}" for f in self.flags]
        lines += [f"{k.ljust(width)}  {v:.10g}" for k, v in sorted(self.values.items())]
        return "\n".join(lines)


# -- elementary envelopes -------------------------------------------------------------

def sinc_tail_bound(rho: float, u: float, truncated: bool = True) -> float:
    """Envelope of |int_{rho<|x|<A} e^{-ixu}/x dx|: truncated (any A > rho) or A -> inf."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    c, scale = (3.0 / PI, 2 * PI) if truncated else (4.0 / PI, PI)
    if u == 0:
        return scale
    return scale * min(1.0, c / (rho * abs(u)))


def phi_alpha(R: float, eps: float, alpha: float, a: float) -> float:
    """((1+y)^N - 1 + s) e^s with y = 2R^{1+alpha} eps, s = 6aeR^{1+alpha} eps, N = ceil(3aeR).

    Equals the binomial sum over n = 1..N by the binomial theorem. Returns
    math.inf when the value leaves the float range.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if R <= 0 or eps < 0 or a <= 0:
        raise ValueError("need R > 0, eps >= 0, a > 0")
    if eps == 0:
        return 0.0
    N = math.ceil(3 * a * E * R)
    y = 2 * R ** (1 + alpha) * eps
    s = 6 * a * E * R ** (1 + alpha) * eps
    t = N * math.log1p(y)                   # log (1+y)^N
    if t < 700:
        return (math.expm1(t) + s) * _exp(s)
    # expm1(t) + s = e^t (1 + (s - 1) e^{-t})
    logv = t + math.log1p((s - 1) * math.exp(-t)) + s
    return _exp(logv)


def double_int_bound(norm_f_s: float, s, rho: float, a: float) -> float:
    """12 ||f||_s rho^{-(s-1)/s} ln(pi a e rho / 3)^{(s-1)/s}, for rho > 3/(pi a)."""
    if rho <= 3.0 / (PI * a):
        raise ValueError("rho must exceed 3/(pi a)")
    if s is not INF and s <= 1:
        raise ValueError("s must exceed 1")
    k = 1.0 - _inv(s)
    return 12.0 * norm_f_s * rho ** (-k) * math.log(PI * a * E * rho / 3.0) ** k


# -- thresholds ---------------------------------------------------------------------------

def R3(a: float, Q1: float) -> float:
    return (a * Q1 * (1 + 2 * math.exp(a * Q1) * (E + 1)) + math.log(2 * (a * Q1 + 1))) / (a * E)


def _R0(params: AprioriParams, alpha: float, R4: float) -> float:
    a, Q, Dp = params.a, params.Q1, params.Dp
    s = _inv(params.p)
    g = 2 * Q * math.exp(a * Q) / (PI * Dp)
    t2 = _exp((math.log(g) - math.log(1 - s) - (2 - s) * math.log(a)) / alpha)
    t3 = _exp((math.log(1 - s) + (2 - s) * math.log(2 / PI) - math.log(g)) / (alpha * (1 - s)))
    return max(R4, t2, t3)


def thresholds(params: AprioriParams, alpha: float, R1: float | None = None,
               R2: float | None = None, beta: float | None = None) -> dict[str, float]:
    """R1..R4, R0 (and R5 when beta is given) for split exponent alpha.

    R1, R2 come from an external theorem and default to max(R3, 10).
    """
    a, Q, d = params.a, params.Q1, params.delta
    if not 0 < alpha < 1 - d:
        raise ValueError(f"alpha must lie in (0, 1 - delta) = (0, {1 - d}), got {alpha}")
    r3 = R3(a, Q)
    r1 = max(r3, 10.0) if R1 is None else float(R1)
    r2 = max(r3, 10.0) if R2 is None else float(R2)
    r4 = max(r1, r3, params.A_contour ** (1 / alpha), (3 / (PI * a)) ** (1 / alpha),
             _exp(math.log(2) / (1 - d - alpha)))
    out = {"R1": r1, "R2": r2, "R3": r3, "R4": r4, "R0": _R0(params, alpha, r4)}
    if beta is not None:
        out["R5"] = max(a ** (-1 / beta), out["R0"], r2)
    return out


# -- section-5 envelopes ------------------------------------------------------------------

def _log_pos(x: float, flags: list) -> float:
    v = math.log(x)
    if v < 0:
        flags.append("log_clamped")
        return 0.0
    return v


def _phi_terms(R: float, eps: float, alpha: float, params: AprioriParams, flags: list) -> dict:
    a, Q, Dp = params.a, params.Q1, params.Dp
    s = _inv(params.p)
    k = 1 - s
    eQ = math.exp(a * Q)
    A = params.A_contour
    Ra = R ** alpha
    L3 = _log_pos(PI * a * E * Ra / 3, flags)
    L2 = _log_pos(PI * a * E * Ra / 2, flags)
    Phi = (3 / PI * (Dp + 4 * a ** s * Q * Q * eQ) * Ra ** (-k) * L3 ** k
           + R ** (alpha - 1 + params.delta)
           + 2 * A * Q / PI * math.exp(a * (Q + 2 * A)) / Ra)
    phi = phi_alpha(R, eps, alpha, a)
    Phi_eps = 2 / PI * math.exp(2 * a * A) * Ra * phi if phi else 0.0
    Psi = Q * Q * eQ * eQ / (PI * Ra) * L2 + (1 + a * Q * eQ) * Phi
    Psi_eps = (1 + a * Q * eQ) * Phi_eps
    Omega = eQ * eQ * (Psi + 2 * Q * Q * eQ / (PI * Ra) * L2)
    Omega_eps = eQ * eQ * Psi_eps
    return {"Phi": Phi, "Phi_eps": Phi_eps, "Psi": Psi, "Psi_eps": Psi_eps,
            "Omega": Omega, "Omega_eps": Omega_eps, "phi_alpha": phi}


def lemma11_envelope(t: float, R: float, eps: float, alpha: float, params: AprioriParams) -> float:
    """Pointwise envelope for |K02(0,t) - K01(0,t)|, t in (0, 2a)."""
    if not 0 < t < 2 * params.a:
        raise ValueError("t must lie in (0, 2a)")
    if not 0 < alpha < 1 - params.delta:
        raise ValueError("alpha must lie in (0, 1 - delta)")
    T = _phi_terms(R, eps, alpha, params, [])
    Q, a = params.Q1, params.a
    return (0.5 * Q * math.exp(a * Q) * min(1.0, 4 / (PI * R ** alpha * t))
            + T["Phi"] + T["Phi_eps"])


# -- main theorem ----------------------------------------------------------------------------

def alpha_star(params: AprioriParams) -> float:
    s = _inv(params.p)
    return (1 - params.delta) * (2 - s) / (3 - 2 * s)


def theorem2_bound(R: float, eps: float, params: AprioriParams, R1: float | None = None,
                   R2: float | None = None) -> BoundBreakdown:
    """Bound on max_x |int_x^a (q2 - q1)| at the optimal split alpha*."""
    if R <= 0 or eps < 0:
        raise ValueError("need R > 0 and eps >= 0")
    a, Q, Dp, d = params.a, params.Q1, params.Dp, params.delta
    s = _inv(params.p)
    k = 1 - s
    eQ = math.exp(a * Q)
    A = params.A_contour
    al = alpha_star(params)
    kappa = (1 - d) * k / (3 - 2 * s)
    flags: list[str] = []
    th = thresholds(params, al, R1, R2)
    if R1 is None or R2 is None:
        flags.append("R1_R2_default")
    T = _phi_terms(R, eps, al, params, flags)

    C0 = 2 * (Dp ** (1 / (2 - s)) * (2 * Q * eQ / PI) ** (k / (2 - s)) + eQ * eQ * (1 + a * Q * eQ))
    Ra = R ** al
    L3 = _log_pos(PI * a * E * Ra / 3, flags)
    L2 = _log_pos(PI * a * E * Ra / 2, flags)
    tail = R ** (-(1 - d) / (3 - 2 * s))                   # R^{-(1-delta) p/(3p-2)}
    C0chi = (6 / PI * eQ * eQ * (1 + a * Q * eQ) * (Dp + 4 * a ** s * Q * Q * eQ)
             * R ** (-(1 - d) * k * k / (3 - 2 * s)) * L3 ** k
             + 4 / PI * math.exp(3 * a * Q + 2 * a * A) * Q * (1 + a * Q * eQ) * A * tail
             + 2 / PI * Q * Q * eQ ** 3 * (2 + eQ) * L2 * tail)
    chi = C0chi / C0
    psi = (4 * eQ * eQ * (1 + a * Q * eQ) / PI * math.exp(2 * a * A) * Ra * T["phi_alpha"]
           if T["phi_alpha"] else 0.0)
    leading = C0 * R ** (-kappa)
    D = 2 * Q * eQ / (PI * Ra)
    theta0 = _pow(1 / k, 1 / (2 - s)) * _pow(D / Dp, 1 / (2 - s))
    Ap = k ** (1 / (2 - s)) + (1 / k) ** (k / (2 - s))
    vals = {
        "A_contour": A, "R1": th["R1"], "R2": th["R2"], "R3": th["R3"], "R4": th["R4"],
        "R0": th["R0"], "alpha_star": al, "kappa": kappa, "C0": C0, "chi_R": chi,
        "C0_chi": C0chi, "leading": leading, "psi_R_eps": psi, "theta0": theta0,
        "D_theta": D, "A_p": Ap, **T,
        "total": psi + leading * (1 + chi),
    }
    in_force = R > th["R0"]
    return BoundBreakdown(vals, in_force, tuple(dict.fromkeys(flags)), "theorem2")


def beta_star(params: AprioriParams) -> float:
    s, sr = _inv(params.p), _inv(params.r)
    return (1 - params.delta) / (2 - sr) * (1 - s) / (3 - 2 * s)


def theorem3_bound(R: float, eps: float, params: AprioriParams, R1: float | None = None,
                   R2: float | None = None) -> BoundBreakdown:
    """Pointwise extension under the smoothness conditions (r, D'_r, A_inf).

    total = Theta + Theta_eps at beta*, the interior envelope of
    |d/dt (K02 - K01)(0, t)|; C0' collects the coefficients of the terms
    decaying at the leading rate R^{-beta*(r-1)/r}.
    """
    if not params.has_smoothness:
        raise ValueError("theorem3_bound needs r, Dr_prime and A_inf")
    base = theorem2_bound(R, eps, params, R1, R2)
    a, Q, Dp, d = params.a, params.Q1, params.Dp, params.delta
    sr = _inv(params.r)
    kr = 1 - sr
    eQ = math.exp(a * Q)
    A = params.A_contour
    Drp = params.Dr_prime
    flags = list(base.flags)
    be = beta_star(params)
    th = thresholds(params, base["alpha_star"], R1, R2, beta=be)

    D = params.A_inf * (Dp + Drp)
    F = 0.25 * (2 * D + 8 * Q * Q * eQ + a ** kr * Drp + 4 * Q * Q
                + 8 * a * (Q ** 3 * eQ + 0.625 * Q * D))
    E0 = (D + 4 * Q * Q * eQ) / 8
    E1 = 3 / (2 * PI) * Drp
    E2 = 6 / PI * (Q ** 3 * eQ + 3 * Q * D / 8)
    E3 = 5 * a / PI * Q * base["C0"]
    E4 = F * A * math.exp(2 * a * A) / PI
    Rb = R ** be
    L3 = _log_pos(PI * a * E * Rb / 3, flags)
    chi = base["chi_R"]
    kappa2 = base["kappa"]
    t1 = E1 * Rb ** (-kr) * L3 ** kr
    t3 = E3 * (1 + chi) * R ** (be - kappa2)
    Theta = (t1 + E2 / Rb * L3 + t3 + E4 / Rb + R ** (2 * be - 2 * (1 - d)))
    phib = phi_alpha(R, eps, be, a)
    Theta_eps = (2 / PI * math.exp(2 * a * A) * Rb * phib if phib else 0.0) \
        + 5 * a / PI * Q * Rb * base["psi_R_eps"]
    kappa_p = be * kr
    C0p = E1 + E3
    lead = C0p * R ** (-kappa_p)
    vals = dict(base.values)
    vals.update({
        "R5": th["R5"], "D": D, "F": F, "E0": E0, "E1": E1, "E2": E2, "E3": E3, "E4": E4,
        "beta_star": be, "kappa_prime": kappa_p, "phi_beta": phib,
        "Theta": Theta, "Theta_eps": Theta_eps, "C0_prime": C0p,
        "chi_prime": (Theta - lead) / lead, "psi_prime": Theta_eps,
        "theorem2_total": base.total, "total": Theta + Theta_eps,
    })
    return BoundBreakdown(vals, R > th["R5"], tuple(dict.fromkeys(flags)), "theorem3")
