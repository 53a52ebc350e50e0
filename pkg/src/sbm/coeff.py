"""Interactive branching rates and the smoothing devices of the staged scheme.

The rate is piecewise constant in space.  On ``[a_i, a_{i+1})`` for ``i < n``
it equals ``g_i(f(a_{i+1}))**2`` and on ``[a_n, inf)`` it equals
``g_n(mass of f right of a_n)**2``.  Rate functions come from a small
catalogue so that they can be evaluated inside compiled kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError
from .grid import Field

__all__ = [
    "Rate",
    "RATE_KINDS",
    "BranchingSpec",
    "Field",
    "gamma",
    "interval_rates",
    "mollifier_rho",
    "rho_cdf",
    "RHO_NORMALIZER",
    "mollify_gamma",
    "mollification_weights",
    "g_m_surrogate",
    "g_m_exact",
    "g_m_table",
    "weight_j",
    "G_SUP_THRESHOLD",
    "J_TAIL_CONSTANT",
]

QUAD_TOL = 1e-10

# ---------------------------------------------------------------------------
# rate catalogue

RATE_KINDS = {
    "constant": (0, ("c",)),
    "clip-linear": (1, ("slope", "cap")),
    "sin-perturbed": (2, ("base", "amp")),
    "sqrt-cap": (3, ("cap",)),
}


@nb.njit(cache=True)
def rate_eval(kind, p1, p2, v):
    """Evaluate catalogue rate ``kind`` with parameters ``p1, p2`` at ``v``."""
    if v < 0.0:
        v = 0.0
    if kind == 0:
        return p1
    if kind == 1:
        return min(p1 * v, p2)
    if kind == 2:
        return p1 + p2 * math.sin(v)
    return min(math.sqrt(v), p1)


@dataclass(frozen=True)
class Rate:
    """One catalogue entry ``g: [0, inf) -> [0, K]``.

    ======================  ===================  ========  ======
    kind                    g(v)                 bound K   Hoelder
    ======================  ===================  ========  ======
    constant(c)             c                    c         1
    clip-linear(slope,cap)  min(slope v, cap)    cap       1
    sin-perturbed(base,amp) base + amp sin(v)    base+amp  1
    sqrt-cap(cap)           min(sqrt(v), cap)    cap       1/2
    ======================  ===================  ========  ======
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ConfigError(f"unknown rate kind {self.kind!r}", "rates")
        names = RATE_KINDS[self.kind][1]
        if len(self.params) != len(names):
            raise ConfigError(f"{self.kind} takes parameters {names}", "rates")
        p = self.params
        if any(not math.isfinite(v) for v in p):
            raise ConfigError(f"{self.kind} parameters must be finite", "rates")
        if self.kind == "constant" and p[0] < 0:
            raise ConfigError("constant rate must be nonnegative", "rates")
        if self.kind == "clip-linear" and (p[0] < 0 or p[1] < 0):
            raise ConfigError("clip-linear needs slope, cap >= 0", "rates")
        if self.kind == "sin-perturbed" and p[0] < abs(p[1]):
            raise ConfigError("sin-perturbed needs base >= |amp| to stay nonnegative", "rates")
        if self.kind == "sqrt-cap" and p[0] < 0:
            raise ConfigError("sqrt-cap needs cap >= 0", "rates")

    @classmethod
    def constant(cls, c: float) -> "Rate":
        return cls("constant", (float(c),))

    @classmethod
    def clip_linear(cls, slope: float, cap: float) -> "Rate":
        return cls("clip-linear", (float(slope), float(cap)))

    @classmethod
    def sin_perturbed(cls, base: float, amp: float) -> "Rate":
        return cls("sin-perturbed", (float(base), float(amp)))

    @classmethod
    def sqrt_cap(cls, cap: float) -> "Rate":
        return cls("sqrt-cap", (float(cap),))

    @classmethod
    def from_dict(cls, d: dict) -> "Rate":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in RATE_KINDS:
            raise ConfigError(f"unknown rate kind {kind!r}", "rates")
        names = RATE_KINDS[kind][1]
        try:
            params = tuple(float(d[name]) for name in names)
        except KeyError as exc:
            raise ConfigError(f"rate {kind} is missing parameter {exc.args[0]!r}", "rates") from None
        return cls(kind, params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(zip(RATE_KINDS[self.kind][1], self.params))}

    @property
    def code(self) -> tuple[int, float, float]:
        p = tuple(self.params) + (0.0,) * (2 - len(self.params))
        return RATE_KINDS[self.kind][0], float(p[0]), float(p[1])

    @property
    def bound(self) -> float:
        p = self.params
        if self.kind == "sin-perturbed":
            return p[0] + abs(p[1])
        if self.kind == "clip-linear":
            return p[1]
        return p[0]

    @property
    def hoelder_beta(self) -> float:
        return 0.5 if self.kind == "sqrt-cap" else 1.0

    def __call__(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        p = self.params
        if self.kind == "constant":
            out = np.full_like(v, p[0])
        elif self.kind == "clip-linear":
            out = np.minimum(p[0] * v, p[1])
        elif self.kind == "sin-perturbed":
            out = p[0] + p[1] * np.sin(v)
        else:
            out = np.minimum(np.sqrt(v), p[0])
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BranchingSpec:
    """Breakpoints ``a_1 < ... < a_n`` and rate functions ``g_0 ... g_n``."""

    breakpoints: tuple = ()
    rates: tuple = dc_field(default_factory=lambda: (Rate.constant(1.0),))

    def __post_init__(self):
        bps = tuple(float(a) for a in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "rates", tuple(self.rates))
        if len(self.rates) != len(bps) + 1:
            raise ConfigError(
                f"{len(bps)} breakpoints need {len(bps) + 1} rate functions, got {len(self.rates)}",
                "spec.rates",
            )
        if any(not math.isfinite(a) for a in bps) or any(b <= a for a, b in zip(bps, bps[1:])):
            raise ConfigError("breakpoints must be finite and strictly increasing", "spec.breakpoints")
        probe = np.linspace(0.0, 50.0, 2001)
        for g in self.rates:
            vals = g(probe)
            if np.any(vals < 0) or np.any(vals > g.bound + 1e-12):
                raise ConfigError(f"rate {g.kind} leaves [0, K] on the probe grid", "spec.rates")

    @classmethod
    def constant(cls, c: float = 1.0) -> "BranchingSpec":
        """Single interval with ``g_0 = c``: rate ``c**2`` everywhere."""
        return cls((), (Rate.constant(c),))

    @classmethod
    def from_dict(cls, d: dict) -> "BranchingSpec":
        try:
            rates = tuple(Rate.from_dict(r) for r in d["rates"])
        except (KeyError, TypeError):
            raise ConfigError("spec needs a list of rates", "spec.rates") from None
        return cls(tuple(d.get("breakpoints", ())), rates)

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints), "rates": [g.to_dict() for g in self.rates]}

    @property
    def n(self) -> int:
        return len(self.breakpoints)

    @property
    def bound(self) -> float:
        """``K`` with every ``g_i <= K``; rates are bounded by ``K**2``."""
        return max(g.bound for g in self.rates)

    @property
    def hoelder_beta(self) -> float:
        return self.rates[-1].hoelder_beta

    def codes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rate catalogue codes as arrays for compiled kernels."""
        c = np.array([g.code for g in self.rates], dtype=float)
        return c[:, 0].astype(np.int64), c[:, 1].copy(), c[:, 2].copy()

    def interval_of(self, x) -> np.ndarray:
        return np.searchsorted(np.asarray(self.breakpoints), np.asarray(x, dtype=float), side="right")


def interval_rates(spec: BranchingSpec, f: Field) -> np.ndarray:
    """The ``n + 1`` plateau values of ``gamma(f, .)``."""
    out = np.empty(spec.n + 1)
    for i in range(spec.n):
        out[i] = spec.rates[i](f.at(spec.breakpoints[i])) ** 2
    tail = f.mass_right_of(spec.breakpoints[-1]) if spec.n else f.mass
    out[spec.n] = spec.rates[spec.n](tail) ** 2
    return out


def gamma(spec: BranchingSpec, f: Field, x):
    """Branching rate ``gamma(f, x)`` at points ``x`` of the grid.

    The density at an interior breakpoint is interpolated linearly between
    cell centres; the tail mass right of ``a_n`` integrates the cell-average
    reconstruction (the total mass when there are no breakpoints).
    """
    x = np.asarray(x, dtype=float)
    if np.any(~f.grid.contains(x)):
        raise DomainError("gamma evaluated outside the grid")
    vals = interval_rates(spec, f)[spec.interval_of(x)]
    return float(vals) if vals.ndim == 0 else vals


# ---------------------------------------------------------------------------
# mollifier


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


RHO_NORMALIZER = 1.0 / integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1.0, 1.0,
                                      epsabs=1e-14, epsrel=1e-12)[0]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


def mollifier_rho(x):
    """Normalised bump ``C exp(-1/(1 - x^2))`` on ``(-1, 1)``, zero elsewhere."""
    out = RHO_NORMALIZER * _bump(x)
    return float(out) if out.ndim == 0 else out


def rho_prime(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = mollifier_rho(xi) * (-2.0 * xi / (1.0 - xi * xi) ** 2)
    return float(out) if out.ndim == 0 else out


def rho_cdf(s):
    """``int_{-1}^{s} rho``, by 96-point Gauss-Legendre on ``[-1, s]``."""
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    half = 0.5 * (s + 1.0)
    nodes = -1.0 + half[..., None] * (_GL_NODES + 1.0)
    out = half * np.sum(_GL_WEIGHTS * mollifier_rho(nodes), axis=-1)
    # full mass exactly, not 1 - ulp
    out = np.where(s >= 1.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def mollification_weights(x, breakpoints, m: int) -> np.ndarray:
    """Mass of ``rho_m(x - .)`` on each interval ``[a_i, a_{i+1})``; shape ``(len(x), n+1)``."""
    if m < 1:
        raise DomainError("mollification index m must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    edges = np.concatenate([[-np.inf], np.asarray(breakpoints, dtype=float), [np.inf]])
    cdf = np.empty((x.size, edges.size))
    for j, a in enumerate(edges):
        if np.isinf(a):
            cdf[:, j] = 1.0 if a < 0 else 0.0
        else:
            cdf[:, j] = rho_cdf(m * (x - a))
    return cdf[:, :-1] - cdf[:, 1:]


def mollify_gamma(spec: BranchingSpec, f: Field, x, m: int):
    """``gamma_m(f, x) = int rho_m(x - y) gamma(f, y) dy``.

    ``gamma(f, .)`` is piecewise constant, so the quadrature reduces to the
    mollifier mass on each interval.
    """
    rates = interval_rates(spec, f)
    x_arr = np.asarray(x, dtype=float)
    if np.all(rates == rates[0]):
        out = np.full(x_arr.shape, rates[0])
    else:
        w = mollification_weights(x_arr.ravel(), spec.breakpoints, m)
        out = np.clip(w @ rates, 0.0, spec.bound ** 2).reshape(x_arr.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Lipschitz surrogate of sqrt

_GL32_NODES, _GL32_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _gl(f, a: float, b: float, pieces: int = 8) -> float:
    if b <= a:
        return 0.0
    edges = np.linspace(a, b, pieces + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    nodes = mid + half * _GL32_NODES
    return float(np.sum(half * _GL32_WEIGHTS * f(nodes)))


def _smoothed_capped_sqrt(x: float, m: int) -> float:
    """``E[min(sqrt|x + Z/sqrt(m)|, m)]`` with ``Z`` standard normal."""
    sigma = 1.0 / math.sqrt(m)
    cap2 = float(m) * m
    lo, hi = x - 12.0 * sigma, x + 12.0 * sigma
    dens = lambda y: np.exp(-(y - x) ** 2 / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
    cuts = sorted({lo, hi, *[c for c in (-cap2, 0.0, cap2) if lo < c < hi]})
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b <= -cap2 or a >= cap2:
            total += m * _gl(dens, a, b)
        elif a == 0.0:
            # y = s^2 removes the square-root cusp at the origin
            total += _gl(lambda s: 2.0 * s * s * dens(s * s), 0.0, math.sqrt(b))
        elif b == 0.0:
            total += _gl(lambda s: 2.0 * s * s * dens(-s * s), 0.0, math.sqrt(-a))
        else:
            total += _gl(lambda y: np.sqrt(np.abs(y)) * dens(y), a, b)
    return total


def g_m_exact(x, m: int):
    """``G_m(x) = int [p_{1/m}(x - y) - p_{1/m}(y)] (sqrt|y| ^ m) dy`` by Gauss-Legendre panels."""
    if m < 1:
        raise DomainError("surrogate index m must be >= 1")
    x_arr = np.asarray(x, dtype=float)
    base = _smoothed_capped_sqrt(0.0, m)
    out = np.array([_smoothed_capped_sqrt(v, m) - base for v in x_arr.ravel()]).reshape(x_arr.shape)
    return float(out) if out.ndim == 0 else out


# sup over [0, 4] of |G_1000(x) - sqrt x| is 0.154486 by the 1F1 closed form
# (mpmath, 30 digits); the surrogate must land below this threshold.
G_SUP_THRESHOLD = 0.16

TABLE_SIZE = 4096
TABLE_MIN = 1e-12
TABLE_MAX = 1e4


@lru_cache(maxsize=None)
def g_m_table(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Abscissae ``{0} U logspace`` and ``G_m`` values for interpolation."""
    xs = np.concatenate([[0.0], np.geomspace(TABLE_MIN, TABLE_MAX, TABLE_SIZE - 1)])
    vals = g_m_exact(xs, m)
    vals[0] = 0.0
    xs.setflags(write=False)
    vals.setflags(write=False)
    return xs, vals


def g_m_surrogate(x, m: int):
    """``G_m`` interpolated from a cached 4096-point log-spaced table."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("G_m is evaluated on nonnegative arguments; clip first")
    xs, vals = g_m_table(int(m))
    out = np.interp(x_arr, xs, vals)
    big = x_arr > TABLE_MAX
    if np.any(big):
        out = np.where(big, g_m_exact(np.where(big, x_arr, 0.0), m), out)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# exponential weight


def _weight_j_scalar(x: float) -> float:
    f = lambda s: RHO_NORMALIZER * math.exp(-1.0 / (1.0 - s * s)) * math.exp(-abs(x - s))
    pts = [x] if -1.0 < x < 1.0 else None
    return integrate.quad(f, -1.0, 1.0, points=pts, epsabs=QUAD_TOL * 1e-3, epsrel=1e-12, limit=200)[0]


# J(x) e^{|x|} for |x| >= 1 equals int rho(u) e^u du; mpmath quadrature, 30 digits.
J_TAIL_CONSTANT = 1.0812967144356883


def weight_j(x):
    """``J(x) = int exp(-|y|) rho(x - y) dy``; comparable to ``exp(-|x|)``."""
    x_arr = np.asarray(x, dtype=float)
    out = np.array([_weight_j_scalar(v) for v in x_arr.ravel()]).reshape(x_arr.shape)
    return float(out) if out.ndim == 0 else out
