"""Compactly supported potentials on [0, a], their tail integrals and a priori checks.

A potential is stored by its samples on the uniform grid x_k = k*a/n and is
read as the piecewise-linear interpolant of those samples, identically zero
outside [0, a].
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np


class Infinity(Enum):
    """Marker for an infinite Lebesgue exponent."""

    INF = "inf"

    def __repr__(self) -> str:
        return "INF"


INF = Infinity.INF
Exponent = Union[float, Infinity]


def parse_exponent(value) -> Exponent:
    """Accept a float, the INF marker, or the strings 'inf'/'infinity'."""
    if value is INF:
        return INF
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        value = float(value)
    value = float(value)
    if math.isinf(value):
        return INF
    return value


def exponent_to_json(p: Exponent | None):
    if p is None:
        return None
    return "inf" if p is INF else float(p)


def _trapz(y: np.ndarray, h: float) -> float:
    if len(y) < 2:
        return 0.0
    return float(h * (np.sum(y) - 0.5 * (y[0] + y[-1])))


@dataclass(frozen=True)
class Potential:
    """Real potential sampled at n_grid + 1 uniform nodes on [0, a]."""

    a: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError(f"support endpoint must be positive, got {self.a}")
        if len(vals) < 3:
            raise ValueError("need n_grid >= 2 (at least 3 samples)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "values", vals)

    @property
    def n_grid(self) -> int:
        return len(self.values) - 1

    @property
    def h(self) -> float:
        return self.a / self.n_grid

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.a, self.n_grid + 1)

    def __call__(self, x) -> np.ndarray:
        """Linear interpolant, zero outside [0, a]."""
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.x, self.values)
        return np.where((x < 0) | (x > self.a), 0.0, out)

    def same_grid(self, other: "Potential") -> bool:
        return self.n_grid == other.n_grid and math.isclose(self.a, other.a, rel_tol=1e-14)

    def refine(self, m: int) -> "Potential":
        """Resample the piecewise-linear interpolant on an m-times finer grid."""
        if m == 1:
            return self
        xf = np.linspace(0.0, self.a, m * self.n_grid + 1)
        return Potential(self.a, np.interp(xf, self.x, self.values))

    def __add__(self, other: "Potential") -> "Potential":
        _require_same_grid(self, other)
        return Potential(self.a, self.values + other.values)

    def __sub__(self, other: "Potential") -> "Potential":
        _require_same_grid(self, other)
        return Potential(self.a, self.values - other.values)

    def scaled(self, c: float) -> "Potential":
        return Potential(self.a, c * self.values)

    def integral(self) -> float:
        return _trapz(self.values, self.h)

    def to_dict(self) -> dict:
        return {"a": self.a, "n_grid": self.n_grid, "values": [float(v) for v in self.values]}

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        vals = np.asarray(d["values"], dtype=float)
        if "n_grid" in d and int(d["n_grid"]) != len(vals) - 1:
            raise ValueError("n_grid does not match the number of values")
        return cls(float(d["a"]), vals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Potential):
            return NotImplemented
        return self.a == other.a and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.a, self.values.tobytes()))


def _require_same_grid(q1: Potential, q2: Potential):
    if not q1.same_grid(q2):
        raise ValueError(
            f"grid mismatch: (a={q1.a}, n={q1.n_grid}) vs (a={q2.a}, n={q2.n_grid})"
        )


# -- built-in families -------------------------------------------------------

def zero(a: float = 1.0, n_grid: int = 400) -> Potential:
    return Potential(a, np.zeros(n_grid + 1))


def constant(c: float, a: float = 1.0, n_grid: int = 400) -> Potential:
    return Potential(a, np.full(n_grid + 1, float(c)))


def bump(c: float, center: float, width: float, a: float = 1.0, n_grid: int = 400) -> Potential:
    """Smooth bump c*exp(1 - 1/(1 - s^2)), s = (x - center)/width; peak value c."""
    x = np.linspace(0.0, a, n_grid + 1)
    s = (x - center) / width
    vals = np.zeros_like(x)
    m = np.abs(s) < 1
    vals[m] = c * np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return Potential(a, vals)


def sine(c: float, k: float, a: float = 1.0, n_grid: int = 400) -> Potential:
    """c*sin(2*pi*k*x/a); mean zero for integer k."""
    x = np.linspace(0.0, a, n_grid + 1)
    return Potential(a, c * np.sin(2.0 * np.pi * k * x / a))


FAMILIES = {"zero": (zero, 0), "constant": (constant, 1), "bump": (bump, 3), "sine": (sine, 2)}

_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _split_terms(spec: str) -> list[tuple[int, str]]:
    """Top-level '+'/'-' split, ignoring signs inside parentheses."""
    terms, depth, sign, start = [], 0, 1, 0
    for i, ch in enumerate(spec):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch in "+-" and depth == 0 and spec[start:i].strip():
            terms.append((sign, spec[start:i]))
            sign, start = (1 if ch == "+" else -1), i + 1
        elif ch in "+-" and depth == 0:
            sign, start = (sign if ch == "+" else -sign), i + 1
    terms.append((sign, spec[start:]))
    return terms


def _from_term(term: str, a: float, n_grid: int) -> Potential:
    m = _SPEC_RE.match(term)
    if not m or m.group(1) not in FAMILIES:
        raise ValueError(f"unknown potential family: {term.strip()!r}")
    fn, nargs = FAMILIES[m.group(1)]
    args = [float(s) for s in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    if len(args) != nargs:
        raise ValueError(f"{m.group(1)} takes {nargs} parameters, got {len(args)}")
    return fn(*args, a=a, n_grid=n_grid)


def from_spec(spec: str, a: float = 1.0, n_grid: int = 400) -> Potential:
    """Build a potential from strings like 'bump(0.5,0.5,0.3)', 'zero' or sums of them,
    e.g. 'bump(0.5,0.5,0.3) + bump(0.05,0.6,0.1) - bump(0.05,0.4,0.1)'."""
    out = None
    for sign, term in _split_terms(spec):
        q = _from_term(term, a, n_grid)
        q = q if sign > 0 else q.scaled(-1.0)
        out = q if out is None else out + q
    return out


# -- functionals ---------------------------------------------------------------

def _tail_nodes(q: Potential, x: float, f: np.ndarray):
    """Nodes [x, grid points > x] with the interpolated values of f."""
    xs = q.x
    k = np.searchsorted(xs, x, side="right")
    nodes = np.concatenate([[x], xs[k:]])
    vals = np.concatenate([[np.interp(x, xs, f)], f[k:]])
    return nodes, vals


def sigma(q: Potential, x: float) -> float:
    """Tail integral of |q| from x to a."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x >= q.a:
        return 0.0
    nodes, vals = _tail_nodes(q, x, np.abs(q.values))
    return float(np.trapezoid(vals, nodes)) if len(nodes) > 1 else 0.0


def sigma_bar(q: Potential, x: float) -> float:
    """Integral of (t - x)|q(t)| over [x, a], i.e. the tail integral of sigma.

    Simpson on each cell is exact because |q| is read as a piecewise-linear
    function of its sampled magnitudes.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x >= q.a:
        return 0.0
    t, f = _tail_nodes(q, x, np.abs(q.values))
    dt = np.diff(t)
    tm = 0.5 * (t[:-1] + t[1:])
    fm = 0.5 * (f[:-1] + f[1:])
    g0, gm, g1 = (t[:-1] - x) * f[:-1], (tm - x) * fm, (t[1:] - x) * f[1:]
    return float(np.sum(dt / 6.0 * (g0 + 4.0 * gm + g1)))


def sigma_bar_nested(q: Potential, x: float) -> float:
    """sigma_bar by integrating sigma itself (second form of the definition)."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x >= q.a:
        return 0.0
    t, f = _tail_nodes(q, x, np.abs(q.values))
    dt = np.diff(t)
    cell = 0.5 * dt * (f[:-1] + f[1:])
    sig = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    fm = 0.5 * (f[:-1] + f[1:])
    sig_m = sig[1:] + 0.25 * dt * (fm + f[1:])
    return float(np.sum(dt / 6.0 * (sig[:-1] + 4.0 * sig_m + sig[1:])))


def norm_lp(q: Potential, p: Exponent) -> float:
    p = parse_exponent(p)
    if p is INF:
        return float(np.max(np.abs(q.values)))
    if p < 1:
        raise ValueError(f"L_p norm needs p >= 1, got {p}")
    return _trapz(np.abs(q.values) ** p, q.h) ** (1.0 / p)


def derivative(q: Potential) -> np.ndarray:
    """Central differences inside, one-sided at the endpoints."""
    return np.gradient(q.values, q.h, edge_order=1)


def norm_lp_derivative(q: Potential, r: Exponent) -> float:
    d = Potential(q.a, derivative(q))
    return norm_lp(d, r)


# -- a priori parameters -----------------------------------------------------------

@dataclass(frozen=True)
class AprioriParams:
    """A priori bundle (a, Q1, p, Dp, delta) with the optional smoothness extension."""

    a: float
    Q1: float
    p: Exponent
    Dp: float
    delta: float
    r: Exponent | None = None
    Dr_prime: float | None = None
    A_inf: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "p", parse_exponent(self.p))
        if self.r is not None:
            object.__setattr__(self, "r", parse_exponent(self.r))
        if self.a <= 0 or self.Q1 <= 0 or self.Dp <= 0:
            raise ValueError("a, Q1 and Dp must be positive")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if self.p is not INF and self.p <= 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.r is not None and self.r is not INF and self.r <= 1:
            raise ValueError(f"r must exceed 1, got {self.r}")
        for name in ("Dr_prime", "A_inf"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def A_contour(self) -> float:
        return 1.0 + self.Q1 * math.exp(self.a * self.Q1)

    @property
    def has_smoothness(self) -> bool:
        return self.r is not None and self.Dr_prime is not None and self.A_inf is not None

    def to_dict(self) -> dict:
        return {
            "a": self.a, "Q1": self.Q1, "p": exponent_to_json(self.p), "Dp": self.Dp,
            "delta": self.delta, "r": exponent_to_json(self.r), "Dr_prime": self.Dr_prime,
            "A_inf": self.A_inf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AprioriParams":
        return cls(
            a=float(d["a"]), Q1=float(d["Q1"]), p=parse_exponent(d["p"]), Dp=float(d["Dp"]),
            delta=float(d["delta"]),
            r=None if d.get("r") is None else parse_exponent(d["r"]),
            Dr_prime=None if d.get("Dr_prime") is None else float(d["Dr_prime"]),
            A_inf=None if d.get("A_inf") is None else float(d["A_inf"]),
        )


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_apriori(q1: Potential, q2: Potential, params: AprioriParams,
                     mean_tol: float = 1e-8) -> ValidationReport:
    """Check the a priori conditions for the pair (q1, q2)."""
    _require_same_grid(q1, q2)
    checks = [
        Check("support", q1.a <= params.a * (1 + 1e-14), q1.a, params.a),
        Check("norm1_q1", norm_lp(q1, 1) <= params.Q1, norm_lp(q1, 1), params.Q1),
        Check("norm1_q2", norm_lp(q2, 1) <= params.Q1, norm_lp(q2, 1), params.Q1),
    ]
    dq = q2 - q1
    dp = norm_lp(dq, params.p)
    checks.append(Check("normp_diff", dp <= params.Dp, dp, params.Dp))
    if params.r is not None:
        dr = norm_lp_derivative(dq, params.r)
        lim = params.Dr_prime if params.Dr_prime is not None else math.inf
        checks.append(Check("normr_diff_derivative", dr <= lim, dr, lim))
        mean = abs(dq.integral())
        checks.append(Check("mean_equality", mean <= mean_tol, mean, mean_tol))
    return ValidationReport(checks)
