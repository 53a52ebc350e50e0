"""Branching Brownian particles as an independent route to the same law.

Each particle carries mass ``w = mass / N``.  Over a step it moves by a
Brownian increment, then with probability ``gamma dt / w`` it branches
critically: it dies or splits in two with equal probability.  Offspring
variance one and rate ``gamma / w`` give the quadratic variation
``int <X_s, gamma phi^2> ds`` of the martingale problem as ``N`` grows.

The rate needs the density at interior breakpoints, estimated by a Gaussian
kernel density estimate, and the mass right of the last breakpoint, which is
counted exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import noise as nz
from .coeff import BranchingSpec, rate_eval
from .errors import ConfigError, PathFailure
from .grid import Field, GridSpec
from .spde import snapshot_steps
from .stats import ks_two_sample

__all__ = [
    "ParticleSystem",
    "ParticleEnsemble",
    "particle_step",
    "empirical_field",
    "silverman_bandwidth",
    "quantile_positions",
    "simulate_particles",
    "weak_agreement_test",
]

RATE_BUDGET = 0.1
SILVERMAN = 1.06
CAPACITY_FACTOR = 8
_DIED, _SPLIT = 1, 2


@nb.njit(cache=True)
def _bandwidth(x, count, floor):
    if count < 2:
        return floor
    m = 0.0
    for i in range(count):
        m += x[i]
    m /= count
    v = 0.0
    for i in range(count):
        v += (x[i] - m) ** 2
    sd = math.sqrt(v / (count - 1))
    h = SILVERMAN * sd * count ** (-0.2)
    return h if h > floor else floor


@nb.njit(cache=True)
def _kde_at(x, count, a, h, w):
    s = 0.0
    c = 1.0 / (h * math.sqrt(2.0 * math.pi))
    for i in range(count):
        z = (a - x[i]) / h
        if abs(z) < 40.0:
            s += math.exp(-0.5 * z * z)
    return w * c * s


@nb.njit(cache=True)
def _interval_rates(x, count, w, kinds, p1, p2, bps, floor, out):
    n = bps.size
    h = _bandwidth(x, count, floor) if n else floor
    for i in range(n):
        g = rate_eval(kinds[i], p1[i], p2[i], _kde_at(x, count, bps[i], h, w))
        out[i] = g * g
    if n:
        right = 0
        for k in range(count):
            if x[k] >= bps[n - 1]:
                right += 1
        tail = w * right
    else:
        tail = w * count
    g = rate_eval(kinds[n], p1[n], p2[n], tail)
    out[n] = g * g
    return h


@nb.njit(cache=True)
def _interval_of(v, bps):
    i = 0
    while i < bps.size and v >= bps[i]:
        i += 1
    return i


@nb.njit(cache=True)
def _pstep(x, count, nxt, w, kinds, p1, p2, bps, floor, dt, kmove, kcoin, step, rates, events):
    """Move, then branch; writes survivors and offspring in order into ``nxt``."""
    sd = math.sqrt(dt)
    for i in range(count):
        x[i] += sd * nz.normal_at(kmove, step, i)
    _interval_rates(x, count, w, kinds, p1, p2, bps, floor, rates)
    m = 0
    for i in range(count):
        p = rates[_interval_of(x[i], bps)] * dt / w
        u = nz.unif(nz.cell_base(kcoin, step, i), 0)
        if u < 0.5 * p:
            events[0] += 1
            continue
        if m + 2 > nxt.size:
            return -1
        nxt[m] = x[i]
        m += 1
        if u < p:
            events[1] += 1
            nxt[m] = x[i]
            m += 1
    return m


@nb.njit(cache=True, parallel=True)
def _run(x0, w, paths, seed, nsteps, dt, kinds, p1, p2, bps, floor, snaps, cap,
         pos_out, count_out, final_count, events_out, fail):
    for r in nb.prange(paths.size):
        kmove = nz.key_for(seed, nz.PARTICLE, paths[r], 0)
        kcoin = nz.key_for(seed, nz.PARTICLE, paths[r], 1)
        a = np.empty(cap)
        b = np.empty(cap)
        count = x0.size
        a[:count] = x0
        rates = np.empty(kinds.size)
        events = np.zeros(2, dtype=np.int64)
        fail[r] = -1
        si = 0
        for s in range(nsteps + 1):
            while si < snaps.size and snaps[si] == s:
                count_out[r, si] = count
                si += 1
            if s == nsteps or count == 0:
                if count == 0:
                    while si < snaps.size:
                        count_out[r, si] = 0
                        si += 1
                break
            m = _pstep(a, count, b, w, kinds, p1, p2, bps, floor, dt, kmove, kcoin, s, rates, events)
            if m < 0:
                fail[r] = s
                break
            a, b = b, a
            count = m
        final_count[r] = count
        pos_out[r, :count] = a[:count]
        events_out[r, 0] = events[0]
        events_out[r, 1] = events[1]


def silverman_bandwidth(positions, floor: float) -> float:
    x = np.ascontiguousarray(positions, dtype=float)
    return float(_bandwidth(x, x.size, floor))


def quantile_positions(initial: Field, N: int) -> np.ndarray:
    """``N`` deterministic positions at the mid-quantiles of the initial mass profile."""
    g = initial.grid
    cdf = np.concatenate([[0.0], np.cumsum(initial.values) * g.dx])
    if cdf[-1] <= 0:
        raise ConfigError("initial field has no mass", "initial")
    q = (np.arange(N) + 0.5) / N * cdf[-1]
    return np.interp(q, cdf, g.faces)


@dataclass
class ParticleSystem:
    positions: np.ndarray
    N: int
    spec: BranchingSpec
    unit_mass: float
    kde_floor: float

    @classmethod
    def from_field(cls, initial: Field, N: int, spec: BranchingSpec) -> "ParticleSystem":
        if N < 1:
            raise ConfigError("need at least one particle", "particles.N")
        return cls(quantile_positions(initial, N), N, spec, initial.mass / N, 2.0 * initial.grid.dx)

    @property
    def count(self) -> int:
        return int(self.positions.size)

    @property
    def mass(self) -> float:
        return self.unit_mass * self.count

    @property
    def kde_bandwidth(self) -> float:
        return silverman_bandwidth(self.positions, self.kde_floor)

    def check_rate(self, dt: float) -> None:
        """Per-step branching probability must stay small: ``dt K^2 / w <= 0.1``."""
        if dt * self.spec.bound ** 2 / self.unit_mass > RATE_BUDGET * (1 + 1e-12):
            raise ConfigError(
                f"dt={dt} too large: dt * K^2 / unit_mass = {dt * self.spec.bound ** 2 / self.unit_mass:.3g} > {RATE_BUDGET}",
                "dt",
            )

    def interval_rates(self) -> np.ndarray:
        kinds, p1, p2 = self.spec.codes()
        out = np.empty(kinds.size)
        x = np.ascontiguousarray(self.positions, dtype=float)
        _interval_rates(x, x.size, self.unit_mass, kinds, p1, p2,
                        np.asarray(self.spec.breakpoints, dtype=float), self.kde_floor, out)
        return out


def particle_step(ps: ParticleSystem, noise: nz.NoiseSpec, path: int, step: int, dt: float) -> ParticleSystem:
    """One move-then-branch step; returns a new system (the input is untouched)."""
    ps.check_rate(dt)
    kinds, p1, p2 = ps.spec.codes()
    x = np.array(ps.positions, dtype=float)
    nxt = np.empty(2 * x.size + 2)
    events = np.zeros(2, dtype=np.int64)
    m = _pstep(x, x.size, nxt, ps.unit_mass, kinds, p1, p2, np.asarray(ps.spec.breakpoints, dtype=float),
               ps.kde_floor, dt, nz.stream_key(noise, nz.PARTICLE, path, 0),
               nz.stream_key(noise, nz.PARTICLE, path, 1), np.int64(step), np.empty(kinds.size), events)
    return ParticleSystem(nxt[:m].copy(), ps.N, ps.spec, ps.unit_mass, ps.kde_floor)


@nb.njit(cache=True)
def _kde_grid(x, w, h, left, dx, nx, out):
    c = w / (h * math.sqrt(2.0 * math.pi))
    reach = 40.0 * h
    for k in range(x.size):
        lo = int(math.floor((x[k] - reach - left) / dx))
        hi = int(math.ceil((x[k] + reach - left) / dx))
        if lo < 0:
            lo = 0
        if hi > nx:
            hi = nx
        for i in range(lo, hi):
            z = (left + (i + 0.5) * dx - x[k]) / h
            out[i] += c * math.exp(-0.5 * z * z)


def empirical_field(ps: ParticleSystem, grid: GridSpec, bandwidth: float | None = None) -> Field:
    """Gaussian kernel density estimate of the particle measure, sampled at the cell centres."""
    h = ps.kde_bandwidth if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ConfigError("bandwidth must be positive", "kde_bandwidth")
    out = np.zeros(grid.nx)
    _kde_grid(np.ascontiguousarray(ps.positions, dtype=float), ps.unit_mass, h, grid.left, grid.dx, grid.nx, out)
    return Field(grid, out)


@dataclass
class ParticleEnsemble:
    """Replicates of one particle system: final positions and counts at the snapshots."""

    positions: list
    counts: np.ndarray
    times: np.ndarray
    unit_mass: float
    events: np.ndarray
    paths: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def pairing(self, phi) -> np.ndarray:
        """``<X_T, phi>`` per replicate."""
        return np.array([self.unit_mass * math.fsum(phi(p)) if p.size else 0.0 for p in self.positions])

    def total_mass(self) -> np.ndarray:
        return self.unit_mass * self.counts


def simulate_particles(initial: Field, N: int, spec: BranchingSpec, noise: nz.NoiseSpec, paths, T: float,
                       snapshot_times=None) -> ParticleEnsemble:
    """Independent replicates, one per path index."""
    ps = ParticleSystem.from_field(initial, N, spec)
    dt = noise.dt
    ps.check_rate(dt)
    nsteps = int(round(T / dt))
    if snapshot_times is None:
        snapshot_times = [0.0, nsteps * dt]
    snaps = snapshot_steps(snapshot_times, dt, nsteps * dt)
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    kinds, p1, p2 = spec.codes()
    cap = CAPACITY_FACTOR * N + 2
    P = paths.size
    pos = np.empty((P, cap))
    counts = np.empty((P, snaps.size), dtype=np.int64)
    final = np.empty(P, dtype=np.int64)
    events = np.empty((P, 2), dtype=np.int64)
    fail = np.empty(P, dtype=np.int64)
    _run(ps.positions, ps.unit_mass, paths, noise.seed64, nsteps, dt, kinds, p1, p2,
         np.asarray(spec.breakpoints, dtype=float), ps.kde_floor, snaps, cap, pos, counts, final, events, fail)
    bad = np.nonzero(fail >= 0)[0]
    if bad.size:
        r = int(bad[0])
        raise PathFailure(int(paths[r]), int(fail[r]), -1, f"particle count exceeded {cap}")
    return ParticleEnsemble([pos[r, :final[r]].copy() for r in range(P)], counts, snaps * dt,
                            ps.unit_mass, events, paths)


def weak_agreement_test(particles, spde, phi) -> tuple[float, float]:
    """Two-sample KS test on ``<X_T, phi>`` from the particle and density ensembles."""
    a = particles.pairing(phi) if isinstance(particles, ParticleEnsemble) else np.asarray(particles, dtype=float)
    if hasattr(spde, "fields"):
        if spde.fields is None:
            raise ConfigError("density ensemble has no stored fields", "store_fields")
        g = spde.grid
        b = g.dx * spde.fields[:, -1, :] @ phi(g.x)
    else:
        b = np.asarray(spde, dtype=float)
    if a.size < 100 or b.size < 100:
        raise ConfigError("weak agreement needs at least 100 samples on each side", "paths")
    return ks_two_sample(a, b)
