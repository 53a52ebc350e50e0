import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbm import noise as nz
from sbm.coeff import BranchingSpec, Rate, g_m_surrogate
from sbm.errors import ConfigError
from sbm.grid import Field, GridSpec, initial_field
from sbm.kernel import apply_semigroup
from sbm.spde import (
    FrozenRates,
    SolverConfig,
    martingale_residual,
    simulate,
    simulate_ensemble,
    smoothed_mass_check,
    snapshot_steps,
    solver_diagnostics,
    step_direct,
    step_staged,
)

G = GridSpec(-4, 4, 128)
DT = 1e-3
TRI = {"kind": "triangle", "center": 0, "width": 1, "mass": 1}


def _noise(seed=1):
    return nz.NoiseSpec(seed, DT, G.dx)


def _heat_steps(v, n, r):
    # independent explicit scheme with odd reflection past the edges
    for _ in range(n):
        p = np.concatenate([[-v[0]], v, [-v[-1]]])
        v = v + r * (p[2:] - 2 * v + p[:-2])
    return v


@pytest.mark.parametrize("method", ["split", "euler"])
def test_zero_field_stays_zero(method):
    cfg = SolverConfig(G, DT, 0.05, BranchingSpec.constant(1.0), method=method)
    tr = simulate(cfg, Field(G, np.zeros(G.nx)), _noise(), 0)
    assert np.all(tr.fields[-1].values == 0.0)
    staged = SolverConfig(G, DT, 0.05, BranchingSpec.constant(1.0), scheme="staged", m=10)
    assert np.all(simulate(staged, Field(G, np.zeros(G.nx)), _noise(), 0).fields[-1].values == 0.0)


@pytest.mark.parametrize("method", ["split", "euler"])
def test_no_branching_is_heat_flow(method):
    f = initial_field(TRI, G)
    cfg = SolverConfig(G, DT, 0.1, BranchingSpec.constant(0.0), method=method)
    out = simulate(cfg, f, _noise(), 3).fields[-1].values
    r = DT / (2 * G.dx ** 2)
    assert np.max(np.abs(out - _heat_steps(f.values, 100, r))) <= 1e-13
    assert np.max(np.abs(out - apply_semigroup(f, 0.1).values)) <= 2e-3


def test_zero_horizon():
    f = initial_field(TRI, G)
    tr = simulate(SolverConfig(G, DT, 0.0, BranchingSpec.constant(1.0)), f, _noise(), 0)
    assert len(tr.fields) == 1 and np.array_equal(tr.fields[0].values, f.values)


def test_one_step_feller_moments():
    f = initial_field({"kind": "uniform", "left": -2, "right": 2, "mass": 4}, G)
    c = 1.5
    cfg = SolverConfig(G, DT, DT, BranchingSpec.constant(c))
    P = 10_000
    ens = simulate_ensemble(cfg, f, _noise(5), range(P), [0.0, DT])
    r = DT / (2 * G.dx ** 2)
    heat = _heat_steps(f.values, 1, r)
    i = G.nx // 2
    v = ens.fields[:, 1, i]
    assert abs(v.mean() - heat[i]) <= 4 * v.std() / math.sqrt(P)
    # Feller transition: variance gamma * mu * dt / dx
    want = c * c * heat[i] * DT / G.dx
    assert v.var() / want == pytest.approx(1.0, abs=0.05)
    assert np.all(ens.fields >= 0)


def test_determinism_and_path_independence():
    f = initial_field(TRI, G)
    cfg = SolverConfig(G, DT, 0.05, BranchingSpec.constant(1.0))
    a = simulate_ensemble(cfg, f, _noise(), [4, 1, 9], [0.0, 0.05])
    b = simulate_ensemble(cfg, f, _noise(), [1], [0.0, 0.05])
    assert np.array_equal(a.fields[1], b.fields[0])
    assert np.array_equal(simulate(cfg, f, _noise(), 9).fields[-1].values, a.fields[2, 1])
    c = simulate_ensemble(cfg, f, _noise(2), [1], [0.0, 0.05])
    assert not np.array_equal(c.fields[0, 1], b.fields[0, 1])


@pytest.mark.parametrize("method", ["split", "euler"])
def test_single_steps_match_ensemble(method):
    f = initial_field(TRI, G)
    spec = BranchingSpec((0.0,), (Rate.clip_linear(1.0, 2.0), Rate.constant(1.0)))
    cfg = SolverConfig(G, DT, 10 * DT, spec, method=method)
    want = simulate(cfg, f, _noise(), 2).fields[-1].values
    cur = f
    for s in range(10):
        cur = step_direct(cur, spec, _noise(), 2, s, DT, method=method)
    assert np.array_equal(cur.values, want)


def test_staged_step_amplitude():
    # staged and Euler steps share Gaussian draws, so their noise parts differ exactly by G_m(mu)/sqrt(mu)
    f = initial_field({"kind": "uniform", "left": -2, "right": 2, "mass": 4}, G)
    spec = BranchingSpec.constant(1.0)
    heat = _heat_steps(f.values, 1, DT / (2 * G.dx ** 2))
    e = step_direct(f, spec, _noise(), 0, 0, DT, method="euler", clip_negative=False).values - heat
    cfg = SolverConfig(G, DT, DT, spec, scheme="staged", m=1000, clip_negative=False)
    fr = FrozenRates(cfg)
    fr.refresh(f, 0)
    s = step_staged(f, spec, _noise(), 0, 0, DT, 1000, fr, clip_negative=False).values - heat
    inner = np.abs(G.x) < 1.5
    assert np.allclose(s[inner] / e[inner], g_m_surrogate(1.0, 1000), rtol=1e-9)
    cfg_ens = simulate(cfg, f, _noise(), 0).fields[-1].values
    assert np.allclose(cfg_ens, s + heat, atol=1e-14)


def test_frozen_rates_are_stage_bound():
    cfg = SolverConfig(G, DT, 0.1, BranchingSpec.constant(1.0), scheme="staged", m=4)
    fr = FrozenRates(cfg)
    assert list(cfg.stage_starts()) == [0, 25, 50, 75]
    fr.refresh(initial_field(TRI, G), 25)
    assert not fr.values.flags.writeable
    with pytest.raises(AssertionError):
        fr.refresh(initial_field(TRI, G), 26)
    with pytest.raises(ConfigError):
        FrozenRates(SolverConfig(G, DT, 0.1))
    with pytest.raises(ConfigError):
        SolverConfig(G, DT, 0.1, scheme="staged")


def test_snapshot_errors():
    assert list(snapshot_steps([0, 0.05, 0.1], DT, 0.1)) == [0, 50, 100]
    for bad in ([], [0.1, 0.05], [0.0, 0.2], [0.0, 0.0505], [-0.01]):
        with pytest.raises(ConfigError):
            snapshot_steps(bad, DT, 0.1)


def test_solver_diagnostics():
    assert solver_diagnostics(G, DT, 0.1, BranchingSpec.constant(1.0)) == []
    d = solver_diagnostics(G, G.dx ** 2, 0.1, BranchingSpec.constant(1.0))
    assert len(d) == 1 and d[0][1] == "dt"
    d = solver_diagnostics(G, DT, -1, BranchingSpec((9.0,), (Rate.constant(1), Rate.constant(1))))
    assert {fld for _, fld in d} == {"T", "spec.breakpoints"}
    with pytest.raises(ConfigError):
        SolverConfig(G, 1.0, 0.1)


def test_martingale_without_branching_is_exact():
    f = initial_field(TRI, G)
    spec = BranchingSpec.constant(0.0)
    ens = simulate_ensemble(SolverConfig(G, DT, 0.1, spec), f, _noise(), range(3), np.linspace(0, 0.1, 101))
    m, se, qv, qse = martingale_residual(ens, lambda x: np.exp(-x * x), spec)
    # the scheme is a left-point sum, the residual a trapezoid: they differ by O(dt)
    assert abs(m) <= 1e-4 and se <= 1e-12 and abs(qv) <= 1e-8


def test_martingale_and_smoothed_mass():
    f = initial_field(TRI, G)
    spec = BranchingSpec.constant(1.0)
    times = np.linspace(0, 0.1, 21)
    ens = simulate_ensemble(SolverConfig(G, DT, 0.1, spec), f, _noise(3), range(400), times)
    m, se, qv, qse = martingale_residual(ens, lambda x: np.exp(-x * x / 2), spec)
    assert abs(m) <= 4 * se and abs(qv) <= 4 * qse
    ts, lhs, rhs, err = smoothed_mass_check(ens, 0.1, 0.0)
    assert np.all(np.abs(lhs - rhs) <= 4 * err + 2e-3)


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 3.0))
def test_paths_stay_nonnegative(path, c):
    f = initial_field(TRI, G)
    cfg = SolverConfig(G, DT, 0.05, BranchingSpec.constant(c))
    tr = simulate(cfg, f, _noise(), path)
    assert all(fl.is_nonnegative() for fl in tr.fields)


def test_extinction_is_absorbing():
    f = initial_field({"kind": "triangle", "center": 0, "width": 0.2, "mass": 0.01}, G)
    cfg = SolverConfig(G, DT, 0.5, BranchingSpec.constant(3.0))
    ens = simulate_ensemble(cfg, f, _noise(), range(50), np.linspace(0, 0.5, 51), store_fields=False)
    dead = ens.total_mass == 0
    assert dead[:, -1].any()
    # once a path hits zero it stays there
    assert np.all(dead[:, 1:] >= dead[:, :-1])
