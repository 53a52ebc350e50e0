"""Test-function gadgets for boundary extraction and pathwise uniqueness.

``h_k`` isolates the boundary values of a function on ``[0, 1]``: as ``k``
grows, pairing with ``h_k'`` and ``h_k''`` returns ``f(0) - f(1)`` and
``f'(1) - f'(0)``.  ``phi_k`` is a smoothed absolute value whose second
derivative is a bump ``psi_k`` supported on ``(a_k, a_{k-1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .coeff import mollifier_rho, rho_cdf, rho_prime
from .errors import DomainError

__all__ = [
    "unit_bump",
    "h_k",
    "h_k_prime",
    "h_k_second",
    "h_k_pairing_limits",
    "YWFamily",
    "yw_family",
    "phi_k",
    "phi_k_prime",
    "phi_k_second",
]

TAPER = 0.05
PHI_TABLE_SIZE = 8192


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# h_k


def unit_bump(z):
    """The mollifier moved to ``(0, 1)``: ``2 rho(2z - 1)``, unit mass, at most 2."""
    return 2.0 * mollifier_rho(2.0 * np.asarray(z, dtype=float) - 1.0)


def _bump_cdf(z):
    return rho_cdf(2.0 * np.asarray(z, dtype=float) - 1.0)


def _bump_prime(z):
    return 4.0 * rho_prime(2.0 * np.asarray(z, dtype=float) - 1.0)


def _check_unit(x, k):
    if k < 1 or int(k) != k:
        raise DomainError(f"k must be a positive integer, got {k}")
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("h_k is defined on [0, 1]")
    return x


def h_k(x, k: int):
    """``int_0^{kx} Phi * int_{x^k}^1 Phi`` for the unit bump ``Phi``."""
    x = _check_unit(x, k)
    return _scalar(_bump_cdf(k * x) * (1.0 - _bump_cdf(x ** k)))


def h_k_prime(x, k: int):
    x = _check_unit(x, k)
    xk = x ** k
    dxk = k * x ** (k - 1)
    out = k * unit_bump(k * x) * (1.0 - _bump_cdf(xk)) - _bump_cdf(k * x) * unit_bump(xk) * dxk
    return _scalar(out)


def h_k_second(x, k: int):
    x = _check_unit(x, k)
    xk = x ** k
    dxk = k * x ** (k - 1)
    d2xk = k * (k - 1) * x ** (k - 2) if k >= 2 else np.zeros_like(x)
    a, da, d2a = _bump_cdf(k * x), k * unit_bump(k * x), k * k * _bump_prime(k * x)
    b, db = 1.0 - _bump_cdf(xk), -unit_bump(xk) * dxk
    d2b = -(_bump_prime(xk) * dxk * dxk + unit_bump(xk) * d2xk)
    return _scalar(d2a * b + 2.0 * da * db + a * d2b)


def _pair(f, g, k):
    # the mass of h_k', h_k'' sits in [0, 1/k] and in a layer of width ~1/k below 1
    cuts = sorted({0.0, 1.0 / k, max(1.0 - 8.0 / k, 1.0 / k), 1.0})
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        if hi > lo:
            total += integrate.quad(lambda x: f(x) * g(x, k), lo, hi, limit=400,
                                    epsabs=1e-10, epsrel=1e-9)[0]
    return total


def h_k_pairing_limits(f, k: int) -> tuple[float, float]:
    """``(<f, h_k'>, <f, h_k''>)`` by adaptive quadrature.

    The limits as ``k -> inf`` are ``(f(0) - f(1), f'(1) - f'(0))``.
    """
    if k < 1 or int(k) != k:
        raise DomainError(f"k must be a positive integer, got {k}")
    return _pair(f, h_k_prime, k), _pair(f, h_k_second, k)


# ---------------------------------------------------------------------------
# Yamada-Watanabe family


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def _smoothstep_integral(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 4 * (2.5 - 3.0 * s + s * s)


@dataclass(frozen=True)
class YWFamily:
    """``psi_k = c_k w(ln x) / x`` on ``(a_k, a_{k-1})``.

    ``w`` is one in the middle of the log-support and falls to zero over its
    outer 5% on each side along a quintic smoothstep, so ``psi_k`` is C^2.
    With ``c_k = 1 / (0.95 k)`` the total mass is exactly one and
    ``x psi_k(x) <= c_k < 2/k``.
    """

    k: int
    a_k: float = dc_field(init=False)
    a_prev: float = dc_field(init=False)
    c: float = dc_field(init=False)

    def __post_init__(self):
        if self.k < 1 or int(self.k) != self.k:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        k = int(self.k)
        object.__setattr__(self, "a_k", math.exp(-k * (k + 1) / 2.0))
        object.__setattr__(self, "a_prev", math.exp(-k * (k - 1) / 2.0))
        object.__setattr__(self, "c", 1.0 / ((1.0 - TAPER) * k))

    @property
    def _u(self):
        lo = -self.k * (self.k + 1) / 2.0
        return lo, lo + self.k, TAPER * self.k

    def _w(self, u):
        lo, hi, ramp = self._u
        return _smoothstep((u - lo) / ramp) * _smoothstep((hi - u) / ramp)

    def psi(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        inside = (x > self.a_k) & (x < self.a_prev)
        xi = x[inside]
        out[inside] = self.c * self._w(np.log(xi)) / xi
        return _scalar(out)

    def big_psi(self, x):
        """``int_0^x psi_k``: zero below ``a_k``, one above ``a_{k-1}``."""
        x = np.abs(np.asarray(x, dtype=float))
        lo, hi, ramp = self._u
        with np.errstate(divide="ignore"):
            u = np.clip(np.log(np.maximum(x, 1e-300)), lo, hi)
        s_up = (u - lo) / ramp
        mid = ramp * _smoothstep_integral(s_up) + np.maximum(u - lo - ramp, 0.0)
        return _scalar(np.clip(self.c * (mid - _fall(u, hi, ramp)), 0.0, 1.0))

    @property
    def table(self) -> tuple[np.ndarray, np.ndarray]:
        return _phi_table(self.k)


def _fall(u, hi, ramp):
    # integral over [hi - ramp, u] of (1 - smoothstep((hi - v)/ramp)) dv
    s = np.clip((hi - u) / ramp, 0.0, 1.0)
    width = ramp * (1.0 - s)
    return width - ramp * (0.5 - _smoothstep_integral(s))


@lru_cache(maxsize=None)
def yw_family(k: int) -> YWFamily:
    return YWFamily(int(k))


@lru_cache(maxsize=None)
def _phi_table(k: int) -> tuple[np.ndarray, np.ndarray]:
    fam = yw_family(k)
    ys = np.geomspace(fam.a_k, fam.a_prev, PHI_TABLE_SIZE)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    lo, hi = ys[:-1], ys[1:]
    half = 0.5 * (hi - lo)
    pts = 0.5 * (hi + lo)[:, None] + half[:, None] * nodes
    panel = half * np.sum(weights * fam.big_psi(pts), axis=1)
    vals = np.concatenate([[0.0], np.cumsum(panel)])
    ys.setflags(write=False)
    vals.setflags(write=False)
    return ys, vals


def phi_k(z, k: int):
    """Smoothed ``|z|``: ``int_0^{|z|} dy int_0^y psi_k``; equals ``|z| - const`` above ``a_{k-1}``."""
    fam = yw_family(k)
    ys, vals = _phi_table(fam.k)
    y = np.abs(np.asarray(z, dtype=float))
    out = np.where(y >= fam.a_prev, vals[-1] + (y - fam.a_prev),
                   np.interp(y, ys, vals, left=0.0))
    return _scalar(out)


def phi_k_prime(z, k: int):
    z = np.asarray(z, dtype=float)
    return _scalar(np.sign(z) * yw_family(k).big_psi(z))


def phi_k_second(z, k: int):
    return yw_family(k).psi(z)
