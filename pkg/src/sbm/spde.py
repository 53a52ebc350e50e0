"""Time steppers for the density equation and its staged approximation.

The density ``mu`` solves ``d mu = (1/2) mu'' dt + sqrt(gamma(mu, x) mu) dW``
with space-time white noise ``W``.  On a grid of cell averages the noise of
cell ``i`` over one step is ``sqrt(gamma_i mu_i / dx) dB``, a Feller
diffusion per cell.  Two direct steppers are provided:

``split`` (default)
    Explicit heat step, then the exact Feller transition per cell over
    ``dt`` (Poisson number of Gamma-distributed clusters).  Values stay
    nonnegative without clipping and mass is conserved in expectation.
``euler``
    Explicit Euler-Maruyama with Gaussian space-time increments followed by
    clipping of negative values.

The staged scheme freezes the mollified rate ``gamma_m`` at stage starts
``t_k = kT/m`` and replaces ``sqrt`` by the Lipschitz surrogate ``G_m``.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field as dc_field

import numba as nb
import numpy as np

from . import noise as nz
from .coeff import BranchingSpec, g_m_table, mollification_weights, rate_eval
from .errors import ConfigError, PathFailure
from .grid import Field, GridSpec
from .kernel import heat_kernel

__all__ = [
    "SolverConfig",
    "Trajectory",
    "Ensemble",
    "FrozenRates",
    "step_direct",
    "step_staged",
    "simulate",
    "simulate_ensemble",
    "martingale_residual",
    "smoothed_mass_check",
    "snapshot_steps",
    "solver_diagnostics",
]

# numba probes TBB first and warns when only an old TBB is present; it then falls back cleanly
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

SCHEMES = ("direct", "staged")
METHODS = ("split", "euler")
_SPLIT, _EULER, _STAGED = 0, 1, 2


@dataclass(frozen=True)
class SolverConfig:
    grid: GridSpec
    dt: float
    T: float
    spec: BranchingSpec = dc_field(default_factory=BranchingSpec)
    scheme: str = "direct"
    m: int | None = None
    clip_negative: bool = True
    method: str = "split"

    def __post_init__(self):
        for msg in self.diagnostics():
            raise ConfigError(*msg)

    def diagnostics(self) -> list[tuple[str, str]]:
        return solver_diagnostics(self.grid, self.dt, self.T, self.spec, self.scheme, self.m, self.method)

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def mode(self) -> int:
        if self.scheme == "staged":
            return _STAGED
        return _SPLIT if self.method == "split" else _EULER

    def stage_starts(self) -> np.ndarray:
        """Step indices at which the frozen rate is recomputed."""
        if self.scheme != "staged":
            return np.zeros(1, dtype=np.int64)
        k = np.arange(int(self.m))
        return np.unique(np.round(k * self.nsteps / self.m).astype(np.int64))

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(), "dt": self.dt, "T": self.T, "spec": self.spec.to_dict(),
            "scheme": self.scheme, "m": self.m, "clip_negative": self.clip_negative, "method": self.method,
        }


def solver_diagnostics(grid: GridSpec, dt: float, T: float, spec: BranchingSpec, scheme: str = "direct",
                       m=None, method: str = "split") -> list[tuple[str, str]]:
    """Every violated solver precondition as ``(message, field)``."""
    out = []
    dx = grid.dx
    if not (math.isfinite(dt) and dt > 0):
        out.append((f"dt must be positive, got {dt}", "dt"))
    elif dt > 0.5 * dx * dx * (1 + 1e-12):
        out.append((f"dt={dt} violates the stability bound dt <= dx^2/2 = {0.5 * dx * dx}", "dt"))
    if not (math.isfinite(T) and T >= 0):
        out.append((f"horizon T must be nonnegative, got {T}", "T"))
    if scheme not in SCHEMES:
        out.append((f"unknown scheme {scheme!r}", "scheme"))
    if scheme == "staged" and (m is None or int(m) != m or m < 1):
        out.append(("staged scheme needs an integer m >= 1", "m"))
    if method not in METHODS:
        out.append((f"unknown method {method!r}", "method"))
    for a in spec.breakpoints:
        if not grid.left < a < grid.right:
            out.append((f"breakpoint {a} outside the grid", "spec.breakpoints"))
    return out


def snapshot_steps(times, dt: float, T: float) -> np.ndarray:
    """Step indices of snapshot times (rounded down); off-grid times are rejected."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ConfigError("need at least one snapshot time", "snapshots")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("snapshot times must be strictly increasing", "snapshots")
    if times[0] < 0 or times[-1] > T + 0.5 * dt:
        raise ConfigError("snapshot times must lie in [0, T]", "snapshots")
    steps = np.floor(times / dt + 1e-9).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 0.5 * dt):
        raise ConfigError("snapshot time is off the step grid by more than dt/2", "snapshots")
    if np.any(np.diff(steps) <= 0):
        raise ConfigError("two snapshot times round to the same step", "snapshots")
    return steps


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _neumaier(a):
    s = 0.0
    c = 0.0
    for v in a:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@nb.njit(cache=True)
def _plateaus(cur, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, dx, out):
    n = kinds.size - 1
    for i in range(n):
        j = bp_j[i]
        v = (1.0 - bp_w[i]) * cur[j] + bp_w[i] * cur[j + 1]
        g = rate_eval(kinds[i], p1[i], p2[i], v)
        out[i] = g * g
    tail = tail_frac * cur[tail_j] + _neumaier(cur[tail_j + 1:])
    g = rate_eval(kinds[n], p1[n], p2[n], dx * tail)
    out[n] = g * g


@nb.njit(cache=True)
def _heat(cur, work, r, neumann):
    n = cur.size
    for i in range(n):
        if i > 0:
            left = cur[i - 1]
        else:
            left = cur[0] if neumann else -cur[0]
        if i < n - 1:
            right = cur[i + 1]
        else:
            right = cur[n - 1] if neumann else -cur[n - 1]
        work[i] = cur[i] + r * (left - 2.0 * cur[i] + right)


@nb.njit(cache=True)
def _gm(x, xs, vals, logmin, dlog):
    if x <= 0.0:
        return 0.0
    if x <= xs[1]:
        return vals[1] * x / xs[1]
    last = xs.size - 1
    if x >= xs[last]:
        # beyond the table the surrogate is sqrt(x) minus a constant offset
        return vals[last] + math.sqrt(x) - math.sqrt(xs[last])
    k = int((math.log(x) - logmin) / dlog) + 1
    if k < 1:
        k = 1
    if k > last - 1:
        k = last - 1
    while k > 1 and xs[k] > x:
        k -= 1
    while k < last - 1 and xs[k + 1] < x:
        k += 1
    w = (x - xs[k]) / (xs[k + 1] - xs[k])
    return (1.0 - w) * vals[k] + w * vals[k + 1]


@nb.njit(cache=True)
def _step(cur, work, out, rate_cell, mode, step, key, dt, dx, r, neumann, clip,
          gm_xs, gm_vals, gm_logmin, gm_dlog, normals):
    """One step from ``cur`` into ``out``; returns (clipped mass, first bad cell or -1)."""
    n = cur.size
    _heat(cur, work, r, neumann)
    bad = -1
    clipped = 0.0
    if mode == _SPLIT:
        for i in range(n):
            m = work[i]
            if m < 0.0:
                clipped -= m
                m = 0.0
            g = rate_cell[i]
            if m == 0.0 or g <= 0.0:
                out[i] = m
                continue
            lam = 2.0 * dx / (g * dt)
            base = nz.cell_base(key, step, i)
            cnt, j = nz.poisson(lam * m, base, 0)
            if cnt == 0:
                out[i] = 0.0
            else:
                v, j = nz.gamma_shape(float(cnt), base, j)
                out[i] = v / lam
    else:
        nz.normals_into(normals, key, step)
        scale = math.sqrt(dt / dx)
        for i in range(n):
            old = cur[i] if cur[i] > 0.0 else 0.0
            if mode == _EULER:
                amp = math.sqrt(old * rate_cell[i])
            else:
                amp = math.sqrt(rate_cell[i]) * _gm(old, gm_xs, gm_vals, gm_logmin, gm_dlog)
            v = work[i] + amp * normals[i] * scale
            if clip and v < 0.0:
                clipped -= v
                v = 0.0
            out[i] = v
    for i in range(n):
        if not math.isfinite(out[i]):
            bad = i
            break
    return dx * clipped, bad


@nb.njit(cache=True)
def _fill_rates(cur, mode, cell_interval, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, dx,
                plateau, weights, rate_cell, cap):
    _plateaus(cur, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, dx, plateau)
    if mode == _STAGED:
        for i in range(cur.size):
            s = 0.0
            for k in range(plateau.size):
                s += weights[i, k] * plateau[k]
            rate_cell[i] = min(max(s, 0.0), cap)
    else:
        for i in range(cur.size):
            rate_cell[i] = plateau[cell_interval[i]]


@nb.njit(cache=True, parallel=True)
def _run_ensemble(mu0, paths, seed, salt, nsteps, snaps, mode, dt, dx, neumann, clip,
                  cell_interval, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac,
                  weights, cap, stage_starts, gm_xs, gm_vals, gm_logmin, gm_dlog,
                  store_fields, fields_out, mass_out, clipped_out, fail_step, fail_cell):
    n = mu0.size
    r = dt / (2.0 * dx * dx)
    for p in nb.prange(paths.size):
        key = nz.key_for(seed, salt, paths[p], 0)
        cur = mu0.copy()
        nxt = np.empty(n)
        work = np.empty(n)
        normals = np.empty(n)
        plateau = np.empty(kinds.size)
        rate_cell = np.empty(n)
        si = 0
        stage = 0
        clipped = 0.0
        fail_step[p] = -1
        fail_cell[p] = -1
        for s in range(nsteps + 1):
            while si < snaps.size and snaps[si] == s:
                if store_fields:
                    fields_out[p, si, :] = cur
                mass_out[p, si] = dx * _neumaier(cur)
                si += 1
            if s == nsteps:
                break
            if mode != _STAGED or (stage < stage_starts.size and s == stage_starts[stage]):
                _fill_rates(cur, mode, cell_interval, kinds, p1, p2, bp_j, bp_w, tail_j,
                            tail_frac, dx, plateau, weights, rate_cell, cap)
                if mode == _STAGED:
                    stage += 1
            c, bad = _step(cur, work, nxt, rate_cell, mode, s, key, dt, dx, r, neumann, clip,
                           gm_xs, gm_vals, gm_logmin, gm_dlog, normals)
            clipped += c
            if bad >= 0:
                fail_step[p] = s
                fail_cell[p] = bad
                break
            cur, nxt = nxt, cur
        clipped_out[p] = clipped


# ---------------------------------------------------------------------------
# host-side plumbing


def _rate_layout(grid: GridSpec, spec: BranchingSpec):
    kinds, p1, p2 = spec.codes()
    x = grid.x
    bp_j = np.zeros(max(spec.n, 1), dtype=np.int64)
    bp_w = np.zeros(max(spec.n, 1))
    for i, a in enumerate(spec.breakpoints):
        j = int(np.clip(np.searchsorted(x, a, side="right") - 1, 0, grid.nx - 2))
        bp_j[i] = j
        bp_w[i] = float(np.clip((a - x[j]) / grid.dx, 0.0, 1.0))
    if spec.n:
        s = (spec.breakpoints[-1] - grid.left) / grid.dx
        tail_j = min(int(math.floor(s)), grid.nx - 1)
        tail_frac = (tail_j + 1) - s
    else:
        tail_j, tail_frac = 0, 1.0
    cell_interval = spec.interval_of(x).astype(np.int64)
    return kinds, p1, p2, bp_j, bp_w, int(tail_j), float(tail_frac), cell_interval


def _gm_args(m):
    if m is None:
        xs = np.array([0.0, 1e-12, 1.0])
        return xs, np.zeros(3), 0.0, 1.0
    xs, vals = g_m_table(int(m))
    return xs, vals, math.log(xs[1]), math.log(xs[2] / xs[1])


def _salt(config: SolverConfig) -> int:
    return nz.BRANCH if config.mode == _SPLIT else nz.SPACETIME


@dataclass
class Trajectory:
    times: np.ndarray
    fields: list
    total_mass: np.ndarray
    clipped_mass: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("snapshot times must be strictly increasing", "snapshots")

    def to_csv(self, path) -> None:
        """Columns ``t, x, mu``; 17 significant digits."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "mu"])
            for t, f in zip(self.times, self.fields):
                for xi, v in zip(f.grid.x, f.values):
                    w.writerow([f"{t:.17g}", f"{xi:.17g}", f"{v:.17g}"])


@dataclass
class Ensemble:
    """Snapshots of many paths of one configuration.

    ``fields`` has shape ``(paths, snapshots, nx)`` (or is None when only
    masses were kept); ``total_mass`` has shape ``(paths, snapshots)``.
    """

    config: SolverConfig
    times: np.ndarray
    paths: np.ndarray
    total_mass: np.ndarray
    fields: np.ndarray | None
    clipped_mass: np.ndarray
    initial: Field

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def __len__(self) -> int:
        return int(self.paths.size)

    def trajectory(self, p: int) -> Trajectory:
        if self.fields is None:
            raise ConfigError("ensemble was run without stored fields", "store_fields")
        fs = [Field(self.grid, self.fields[p, s]) for s in range(self.times.size)]
        return Trajectory(self.times.copy(), fs, self.total_mass[p].copy(), float(self.clipped_mass[p]))

    def clipped_rate(self) -> float:
        """Mean clipped mass per unit time, relative to the initial mass."""
        m0 = max(self.initial.mass, 1e-300)
        T = max(self.config.T, 1e-300)
        return math.fsum(self.clipped_mass) / len(self) / T / m0


def _workers():
    env = os.environ.get("SBM_WORKERS")
    if env:
        nb.set_num_threads(max(1, min(int(env), nb.config.NUMBA_NUM_THREADS)))


def simulate_ensemble(config: SolverConfig, initial: Field, noise: nz.NoiseSpec, paths,
                      snapshot_times, store_fields: bool = True) -> Ensemble:
    """Run every path index in ``paths``; each path depends only on its index."""
    if initial.grid != config.grid:
        raise ConfigError("initial field lives on a different grid", "initial")
    if not initial.is_nonnegative():
        raise ConfigError("initial field must be nonnegative", "initial")
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    if paths.size == 0 or np.any(paths < 0):
        raise ConfigError("need at least one nonnegative path index", "paths")
    snaps = snapshot_steps(snapshot_times, config.dt, config.T)
    g = config.grid
    kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, cell_interval = _rate_layout(g, config.spec)
    if config.mode == _STAGED:
        weights = mollification_weights(g.x, config.spec.breakpoints, int(config.m))
    else:
        weights = np.zeros((1, 1))
    gm_xs, gm_vals, gm_logmin, gm_dlog = _gm_args(config.m if config.mode == _STAGED else None)
    P, S = paths.size, snaps.size
    fields = np.empty((P, S, g.nx)) if store_fields else np.empty((1, 1, 1))
    mass = np.empty((P, S))
    clipped = np.empty(P)
    fail_step = np.empty(P, dtype=np.int64)
    fail_cell = np.empty(P, dtype=np.int64)
    _workers()
    _run_ensemble(initial.values.copy(), paths, noise.seed64, np.int64(_salt(config)),
                  config.nsteps, snaps, config.mode, config.dt, g.dx, g.boundary == "neumann",
                  config.clip_negative, cell_interval, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac,
                  np.ascontiguousarray(weights), config.spec.bound ** 2, config.stage_starts(),
                  gm_xs, gm_vals, gm_logmin, gm_dlog, store_fields, fields, mass, clipped,
                  fail_step, fail_cell)
    bad = np.nonzero(fail_step >= 0)[0]
    if bad.size:
        p = int(bad[0])
        raise PathFailure(int(paths[p]), int(fail_step[p]), int(fail_cell[p]))
    return Ensemble(config, snaps * config.dt, paths, mass, fields if store_fields else None,
                    clipped, initial.copy())


def simulate(config: SolverConfig, initial: Field, noise: nz.NoiseSpec, path: int,
             snapshot_times=None) -> Trajectory:
    """One path; by default snapshots at 0 and T."""
    if snapshot_times is None:
        snapshot_times = [0.0] if config.nsteps == 0 else [0.0, config.nsteps * config.dt]
    ens = simulate_ensemble(config, initial, noise, [path], snapshot_times)
    return ens.trajectory(0)


# ---------------------------------------------------------------------------
# single steps


class FrozenRates:
    """Per-cell rates frozen for one stage of the staged scheme.

    Refreshing is only allowed at stage starts; anything else trips an
    assertion, since the rate must not change inside a stage.
    """

    def __init__(self, config: SolverConfig):
        if config.scheme != "staged":
            raise ConfigError("frozen rates belong to the staged scheme", "scheme")
        self.config = config
        self._starts = set(int(s) for s in config.stage_starts())
        self._weights = mollification_weights(config.grid.x, config.spec.breakpoints, int(config.m))
        self.values = None
        self.stage_step = None

    def refresh(self, field: Field, step: int) -> np.ndarray:
        assert step in self._starts, f"step {step} is inside a stage; frozen rates are immutable there"
        cfg = self.config
        kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, cell_interval = _rate_layout(cfg.grid, cfg.spec)
        plateau = np.empty(kinds.size)
        _plateaus(field.values, kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, cfg.grid.dx, plateau)
        vals = np.clip(self._weights @ plateau, 0.0, cfg.spec.bound ** 2)
        vals.setflags(write=False)
        self.values = vals
        self.stage_step = step
        return vals


def _single(field, rate_cell, mode, noise, path, step, dt, clip, m=None):
    g = field.grid
    if abs(dt - noise.dt) > 1e-15 * dt or abs(g.dx - noise.dx) > 1e-15 * g.dx:
        raise ConfigError("step size and noise cell size disagree", "dt")
    salt = nz.BRANCH if mode == _SPLIT else nz.SPACETIME
    key = nz.stream_key(noise, salt, path)
    out = np.empty(g.nx)
    gm = _gm_args(m)
    _, bad = _step(field.values, np.empty(g.nx), out, np.ascontiguousarray(rate_cell, dtype=float),
                   mode, np.int64(step), key, dt, g.dx, dt / (2 * g.dx * g.dx),
                   g.boundary == "neumann", clip, *gm, np.empty(g.nx))
    if bad >= 0:
        raise PathFailure(path, step, bad)
    return Field(g, out)


def step_direct(field: Field, spec: BranchingSpec, noise: nz.NoiseSpec, path: int, step: int,
                dt: float, method: str = "split", clip_negative: bool = True) -> Field:
    """One step of the density equation (same draws as the ensemble runner)."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}", "method")
    if dt > 0.5 * field.grid.dx ** 2 * (1 + 1e-12):
        raise ConfigError("dt violates the stability bound dt <= dx^2/2", "dt")
    from .coeff import gamma

    rate_cell = gamma(spec, field, field.grid.x)
    mode = _SPLIT if method == "split" else _EULER
    return _single(field, rate_cell, mode, noise, path, step, dt, clip_negative)


def step_staged(field: Field, spec: BranchingSpec, noise: nz.NoiseSpec, path: int, step: int,
                dt: float, m: int, stage_frozen_gamma, clip_negative: bool = True) -> Field:
    """One step of the staged scheme with diffusion ``sqrt(gamma_m) G_m(mu)``."""
    rates = stage_frozen_gamma.values if isinstance(stage_frozen_gamma, FrozenRates) else stage_frozen_gamma
    if rates is None:
        raise ConfigError("frozen rates were never computed", "stage_frozen_gamma")
    return _single(field, rates, _STAGED, noise, path, step, dt, clip_negative, m=m)


# ---------------------------------------------------------------------------
# martingale problem diagnostics


def _as_arrays(ensemble):
    if isinstance(ensemble, Ensemble):
        if ensemble.fields is None:
            raise ConfigError("ensemble has no stored fields", "store_fields")
        return ensemble.times, ensemble.fields, ensemble.grid
    trajs = list(ensemble)
    times = trajs[0].times
    for t in trajs:
        if t.times.shape != times.shape or np.any(t.times != times):
            raise ConfigError("trajectories have mismatched snapshot grids", "snapshots")
    grid = trajs[0].fields[0].grid
    return times, np.stack([[f.values for f in t.fields] for t in trajs]), grid


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    mean = math.fsum(v) / v.size
    var = math.fsum((v - mean) ** 2) / max(v.size - 1, 1)
    return mean, math.sqrt(var / v.size)


def _rates_on(fields, grid, spec):
    kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, cell_interval = _rate_layout(grid, spec)
    plateau = np.empty(kinds.size)
    out = np.empty_like(fields)
    for idx in np.ndindex(fields.shape[:-1]):
        _plateaus(fields[idx], kinds, p1, p2, bp_j, bp_w, tail_j, tail_frac, grid.dx, plateau)
        out[idx] = plateau[cell_interval]
    return out


def martingale_residual(ensemble, phi, spec: BranchingSpec):
    """Monte Carlo check of the martingale problem for test function ``phi``.

    ``M_T = <X_T, phi> - <X_0, phi> - int <X_s, phi''/2> ds`` and the
    quadratic-variation residual ``M_T^2 - int <X_s, gamma phi^2> ds``.
    Time integrals use the trapezoid rule over the snapshots; ``phi''`` is
    the centred second difference of ``phi`` on the grid (the operator the
    scheme actually applies).  Returns ``(mean, se, qv_mean, qv_se)``.
    """
    times, fields, grid = _as_arrays(ensemble)
    if times.size < 2:
        raise ConfigError("need at least two snapshots", "snapshots")
    x = grid.x
    dx = grid.dx
    ph = np.asarray(phi(x), dtype=float)
    if grid.boundary == "dirichlet-zero":
        ghost_l, ghost_r = -ph[0], -ph[-1]
    else:
        ghost_l, ghost_r = ph[0], ph[-1]
    padded = np.concatenate([[ghost_l], ph, [ghost_r]])
    lap = (padded[2:] - 2 * ph + padded[:-2]) / (dx * dx)
    pair = dx * fields @ ph
    drift = dx * fields @ (0.5 * lap)
    rates = _rates_on(fields, grid, spec)
    qv = dx * np.sum(fields * rates * ph * ph, axis=-1)
    w = np.diff(times)
    trap = lambda a: np.sum(0.5 * (a[:, 1:] + a[:, :-1]) * w, axis=1)
    M = pair[:, -1] - pair[:, 0] - trap(drift)
    R = M * M - trap(qv)
    return (*_mean_se(M), *_mean_se(R))


def smoothed_mass_check(ensemble, T: float, x_probe: float):
    """Kernel-smoothed mass identity at every snapshot ``t < T``.

    Returns arrays ``(times, lhs, rhs, se)`` where ``lhs`` is the Monte Carlo
    mean of ``<mu_t, p_{T-t}(x_probe - .)>`` and ``rhs`` is
    ``<mu_0, p_T(x_probe - .)>``.
    """
    times, fields, grid = _as_arrays(ensemble)
    keep = times < T
    if not np.any(keep):
        raise ConfigError("no snapshot before T", "snapshots")
    if times[0] != 0.0:
        raise ConfigError("the first snapshot must be the initial state", "snapshots")
    x = grid.x
    rhs = grid.dx * float(fields[0, 0] @ heat_kernel(T, x_probe - x))
    ts, lhs, se = [], [], []
    for s in np.nonzero(keep)[0]:
        k = heat_kernel(T - times[s], x_probe - x)
        m, e = _mean_se(grid.dx * fields[:, s] @ k)
        ts.append(times[s])
        lhs.append(m)
        se.append(e)
    return np.array(ts), np.array(lhs), np.full(len(ts), rhs), np.array(se)
