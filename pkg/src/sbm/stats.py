"""Estimators and two-sample tests that turn ensembles into verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

from .coeff import weight_j
from .errors import ConfigError

__all__ = [
    "StructureFunction",
    "structure_function",
    "hoelder_exponent",
    "weighted_moment",
    "ks_two_sample",
    "laplace_functional",
    "mean_se",
    "pairings",
]

MIN_LAGS = 4
MIN_KS = 100
DENSITY_FLOOR = 0.05


def mean_se(v) -> tuple[float, float]:
    """Mean and standard error; sums are exactly rounded so order never matters."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ConfigError("empty sample", "samples")
    m = math.fsum(v) / v.size
    if v.size < 2:
        return m, float("nan")
    var = math.fsum((v - m) ** 2) / (v.size - 1)
    return m, math.sqrt(var / v.size)


def pairings(ensemble, phi, snapshot: int = -1) -> np.ndarray:
    """``<X_t, phi>`` per path at one snapshot of a density ensemble."""
    if ensemble.fields is None:
        raise ConfigError("ensemble has no stored fields", "store_fields")
    g = ensemble.grid
    return g.dx * ensemble.fields[:, snapshot, :] @ np.asarray(phi(g.x), dtype=float)


@dataclass(frozen=True)
class StructureFunction:
    lags: np.ndarray
    moments: np.ndarray
    q: float
    counts: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.lags) <= 0):
            raise ConfigError("lags must be strictly increasing", "lags")
        if np.any(self.moments < 0):
            raise ConfigError("moments are absolute values and cannot be negative", "moments")

    def fit(self) -> tuple[float, float]:
        """OLS slope of ``log moment`` on ``log lag`` divided by ``q``, with its standard error."""
        ok = self.moments > 0
        if ok.sum() < MIN_LAGS:
            raise ConfigError(f"fewer than {MIN_LAGS} usable lags", "lags")
        X = np.log(self.lags[ok])
        Y = np.log(self.moments[ok])
        xc = X - X.mean()
        slope = float(xc @ (Y - Y.mean()) / (xc @ xc))
        resid = Y - Y.mean() - slope * xc
        dof = X.size - 2
        se = math.sqrt(float(resid @ resid) / dof / float(xc @ xc)) if dof > 0 else float("nan")
        return slope / self.q, se / self.q


def _lag_set(lo: int, decade: float = 10.0, count: int = 6) -> np.ndarray:
    return np.unique(np.round(np.geomspace(lo, lo * decade, count)).astype(int))


def structure_function(times, fields, x, axis: str, q: float = 2.0, window=None, band=None,
                       lags=None, floor: float = DENSITY_FLOOR) -> StructureFunction:
    """Pooled ``E|increment|^q`` at each lag.

    ``fields`` has shape ``(paths, snapshots, cells)``.  Only snapshots in
    ``window = (t0, t1)`` are used, and only cells in ``band = (x0, x1)``
    whose path- and window-averaged density is at least ``floor`` times its
    maximum.  Time lags count snapshots, space lags count cells.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    if axis not in ("time", "space"):
        raise ConfigError(f"axis must be time or space, got {axis!r}", "axis")
    t0, t1 = (times[0], times[-1]) if window is None else window
    if t0 <= 0 and axis == "time" and window is not None:
        raise ConfigError("the time window must start after zero", "window")
    ts = np.nonzero((times >= t0 - 1e-12) & (times <= t1 + 1e-12))[0]
    if ts.size < 2:
        raise ConfigError("window holds fewer than two snapshots", "window")
    sub = fields[:, ts, :]
    x0, x1 = (x[0], x[-1]) if band is None else band
    mean = sub.mean(axis=(0, 1))
    ok = (x >= x0) & (x <= x1) & (mean >= floor * mean.max())
    if axis == "time":
        dts = np.diff(times[ts])
        if not np.allclose(dts, dts[0], rtol=1e-6):
            raise ConfigError("time structure functions need evenly spaced snapshots", "snapshots")
        lags = _lag_set(1, count=6) if lags is None else np.asarray(lags, dtype=int)
        lags = lags[lags < ts.size]
        cells = np.nonzero(ok)[0]
        mom, cnt = [], []
        for k in lags:
            d = np.abs(sub[:, k:, cells] - sub[:, :-k, cells]) ** q
            mom.append(d.mean())
            cnt.append(d.size)
        scale = dts[0]
    else:
        lags = _lag_set(2, count=6) if lags is None else np.asarray(lags, dtype=int)
        mom, cnt = [], []
        keep = []
        for k in lags:
            pair_ok = ok[:-k] & ok[k:]
            if not np.any(pair_ok):
                continue
            d = np.abs(sub[:, :, k:][:, :, pair_ok] - sub[:, :, :-k][:, :, pair_ok]) ** q
            mom.append(d.mean())
            cnt.append(d.size)
            keep.append(k)
        lags = np.asarray(keep, dtype=int)
        scale = x[1] - x[0]
    if len(lags) < MIN_LAGS:
        raise ConfigError(f"fewer than {MIN_LAGS} usable lags", "lags")
    return StructureFunction(lags * scale, np.asarray(mom), float(q), np.asarray(cnt))


def hoelder_exponent(ensemble, axis: str, q: float = 2.0, window=None, band=None, lags=None,
                     floor: float = DENSITY_FLOOR) -> tuple[float, float]:
    """Hoelder exponent estimate (slope over ``q``) and its regression standard error."""
    if getattr(ensemble, "fields", None) is None:
        raise ConfigError("ensemble has no stored fields", "store_fields")
    sf = structure_function(ensemble.times, ensemble.fields, ensemble.grid.x, axis, q, window, band, lags, floor)
    return sf.fit()


def weighted_moment(ensemble, p: float, weight: str = "exp", snapshot: int = -1) -> tuple[float, float]:
    """Mean and SE of ``dx sum mu^{2p} w(x)`` with ``w = exp(-|x|)`` or ``J``."""
    if p < 1:
        raise ConfigError("moment order p must be at least 1", "p")
    if weight not in ("exp", "J"):
        raise ConfigError(f"unknown weight {weight!r}", "weight")
    g = ensemble.grid
    w = np.exp(-np.abs(g.x)) if weight == "exp" else weight_j(g.x)
    vals = g.dx * (ensemble.fields[:, snapshot, :] ** (2 * p)) @ w
    return mean_se(vals)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with the asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    n, m = a.size, b.size
    if n < MIN_KS or m < MIN_KS:
        raise ConfigError(f"KS test needs at least {MIN_KS} samples on each side", "samples")
    both = np.concatenate([a, b])
    fa = np.searchsorted(a, both, side="right") / n
    fb = np.searchsorted(b, both, side="right") / m
    d = float(np.max(np.abs(fa - fb)))
    p = float(kolmogorov(math.sqrt(n * m / (n + m)) * d))
    return d, min(max(p, 0.0), 1.0)


def laplace_functional(samples, lam: float, phi=None) -> tuple[float, float]:
    """Mean and SE of ``exp(-lam <X_T, phi>)``.

    ``samples`` is either an array of pairings ``<X_T, phi>`` or a density
    ensemble (then ``phi`` is required; ``None`` means ``phi = 1``).
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive", "lambda")
    if hasattr(samples, "fields"):
        vals = pairings(samples, phi if phi is not None else (lambda x: np.ones_like(x)))
    else:
        vals = np.asarray(samples, dtype=float)
    return mean_se(np.exp(-lam * vals))
