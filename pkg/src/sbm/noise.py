"""Counter-based white-noise increments.

Every draw is a pure function of ``(master_seed, stream, path, channel, step,
index)``.  A 64-bit SplitMix finaliser is chained over the tuple to give a
per-cell base key; uniforms are read off consecutive counters under that key.
Nothing is stored between calls, so the order in which cells, steps or paths
are visited never changes a value.

Streams (salts) keep the different consumers apart:

* ``SPACETIME`` -- Gaussian space-time increments ``W(dt, dx)``
* ``STRIP``     -- Gaussian mass-coordinate increments ``W_i(dt, dz)``
* ``BRANCH``    -- Poisson/Gamma draws of the exact branching step
* ``PARTICLE``  -- particle motion and branching coins
* ``MASS``      -- the scalar total-mass equation
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigError

__all__ = [
    "NoiseSpec",
    "SPACETIME",
    "STRIP",
    "BRANCH",
    "PARTICLE",
    "MASS",
    "stream_key",
    "spacetime_increment",
    "spacetime_increments",
    "mass_strip_increment",
    "mass_strip_increments",
    "standard_normals",
    "uniforms",
    "poisson_draws",
    "gamma_draws",
]

SPACETIME = 1
STRIP = 2
BRANCH = 3
PARTICLE = 4
MASS = 5

MASK64 = (1 << 64) - 1
_G1 = np.uint64(0x9E3779B97F4A7C15)
_G2 = np.uint64(0xD1B54A32D192ED03)
_TWO53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def key_for(seed, salt, path, channel):
    k = mix(seed + np.uint64(salt) * _G2)
    k = mix(k + np.uint64(path + 1) * _G1)
    return mix(k + np.uint64(channel + 1) * _G2)


@nb.njit(inline="always", cache=True)
def cell_base(key, step, index):
    return mix(mix(key + np.uint64(step) * _G1) + np.uint64(index) * _G1)


@nb.njit(inline="always", cache=True)
def unif(base, j):
    """Uniform on ``(0, 1]`` from counter ``j`` under ``base``."""
    h = mix(base + np.uint64(j + 1) * _G1)
    return ((h >> np.uint64(11)) + np.uint64(1)) * _TWO53


@nb.njit(inline="always", cache=True)
def normal_at(key, step, index):
    # one Box-Muller pair serves indices 2q and 2q + 1
    base = cell_base(key, step, index >> 1)
    r = math.sqrt(-2.0 * math.log(unif(base, 0)))
    theta = 2.0 * math.pi * unif(base, 1)
    if index & 1:
        return r * math.sin(theta)
    return r * math.cos(theta)


@nb.njit(cache=True)
def normals_into(out, key, step):
    n = out.size
    for q in range((n + 1) // 2):
        base = cell_base(key, step, q)
        r = math.sqrt(-2.0 * math.log(unif(base, 0)))
        theta = 2.0 * math.pi * unif(base, 1)
        out[2 * q] = r * math.cos(theta)
        if 2 * q + 1 < n:
            out[2 * q + 1] = r * math.sin(theta)


@nb.njit(cache=True)
def poisson(lam, base, j):
    """Poisson(``lam``) draw; returns ``(value, next counter)``.

    Multiplication method below 10, Hormann's PTRS rejection above.
    """
    if lam <= 0.0:
        return 0, j
    if lam < 10.0:
        enlam = math.exp(-lam)
        k = 0
        prod = 1.0
        while True:
            prod *= unif(base, j)
            j += 1
            if prod > enlam:
                k += 1
            else:
                return k, j
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = unif(base, j) - 0.5
        v = unif(base, j + 1)
        j += 2
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k), j
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return int(k), j


@nb.njit(cache=True)
def gamma_shape(a, base, j):
    """Gamma(``a``, 1) draw for ``a >= 1`` (Marsaglia-Tsang)."""
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = math.sqrt(-2.0 * math.log(unif(base, j))) * math.cos(2.0 * math.pi * unif(base, j + 1))
        j += 2
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = unif(base, j)
        j += 1
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v, j
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v, j


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class NoiseSpec:
    """Seed and cell sizes of the discretised white noise."""

    master_seed: int
    dt: float
    dx: float
    dz: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)) or not 0 <= int(self.master_seed) <= MASK64:
            raise ConfigError("master_seed must be an integer in [0, 2^64)", "master_seed")
        for name in ("dt", "dx", "dz"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"noise {name} must be positive, got {v}", name)

    @property
    def seed64(self) -> np.uint64:
        return np.uint64(int(self.master_seed) & MASK64)


def _check_index(**kw):
    for name, v in kw.items():
        if int(v) < 0:
            raise ConfigError(f"{name} index must be nonnegative, got {v}", name)


def stream_key(spec: NoiseSpec, salt: int, path: int, channel: int = 0) -> np.uint64:
    """Key of one ``(stream, path, channel)`` sequence; feed to compiled kernels."""
    _check_index(path=path, channel=channel)
    return np.uint64(key_for(spec.seed64, np.int64(salt), np.int64(path), np.int64(channel)))


def spacetime_increment(spec: NoiseSpec, path: int, step: int, cell: int) -> float:
    """``W`` mass of the space-time cell ``(step, cell)``: N(0, dt dx)."""
    _check_index(step=step, cell=cell)
    key = stream_key(spec, SPACETIME, path)
    return math.sqrt(spec.dt * spec.dx) * normal_at(key, np.int64(step), np.int64(cell))


def spacetime_increments(spec: NoiseSpec, path: int, step: int, ncells: int) -> np.ndarray:
    """Cells ``0 .. ncells-1`` of one step; equal to the scalar version cell by cell."""
    _check_index(step=step)
    out = np.empty(int(ncells))
    normals_into(out, stream_key(spec, SPACETIME, path), np.int64(step))
    return math.sqrt(spec.dt * spec.dx) * out


def mass_strip_increment(spec: NoiseSpec, path: int, step: int, strip: int, channel: int) -> float:
    """``W_channel`` mass of the strip ``[strip dz, (strip+1) dz)``: N(0, dt dz)."""
    _check_index(step=step, strip=strip)
    key = stream_key(spec, STRIP, path, channel)
    return math.sqrt(spec.dt * spec.dz) * normal_at(key, np.int64(step), np.int64(strip))


def mass_strip_increments(spec: NoiseSpec, path: int, step: int, nstrips: int, channel: int) -> np.ndarray:
    _check_index(step=step)
    out = np.empty(int(nstrips))
    normals_into(out, stream_key(spec, STRIP, path, channel), np.int64(step))
    return math.sqrt(spec.dt * spec.dz) * out


def standard_normals(spec: NoiseSpec, salt: int, path: int, step: int, n: int, channel: int = 0) -> np.ndarray:
    out = np.empty(int(n))
    normals_into(out, stream_key(spec, salt, path, channel), np.int64(step))
    return out


@nb.njit(cache=True)
def _uniforms(key, step, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = unif(cell_base(key, step, i), 0)
    return out


@nb.njit(cache=True)
def _poissons(key, step, lam):
    out = np.empty(lam.size, dtype=np.int64)
    for i in range(lam.size):
        out[i] = poisson(lam[i], cell_base(key, step, i), 0)[0]
    return out


@nb.njit(cache=True)
def _gammas(key, step, shape):
    out = np.empty(shape.size)
    for i in range(shape.size):
        out[i] = gamma_shape(shape[i], cell_base(key, step, i), 0)[0]
    return out


def uniforms(spec: NoiseSpec, salt: int, path: int, step: int, n: int, channel: int = 0) -> np.ndarray:
    return _uniforms(stream_key(spec, salt, path, channel), np.int64(step), int(n))


def poisson_draws(spec: NoiseSpec, path: int, step: int, lam) -> np.ndarray:
    """One Poisson draw per entry of ``lam`` on the branching stream."""
    lam = np.ascontiguousarray(lam, dtype=float)
    return _poissons(stream_key(spec, BRANCH, path), np.int64(step), lam)


def gamma_draws(spec: NoiseSpec, path: int, step: int, shape) -> np.ndarray:
    shape = np.ascontiguousarray(shape, dtype=float)
    if np.any(shape < 1.0):
        raise ConfigError("gamma sampler needs shape >= 1", "shape")
    return _gammas(stream_key(spec, BRANCH, path, 1), np.int64(step), shape)
