import math

import numpy as np
import pytest

from sbm import noise as nz
from sbm.coeff import BranchingSpec, Rate
from sbm.distfn import (
    DistFnConfig,
    DistFnState,
    one_sided_slopes,
    pathwise_uniqueness_experiment,
    simulate_distfn_ensemble,
    simulate_total_mass,
    step_massnoise,
    strip_sum,
    to_distribution_functions,
    total_mass_sde_step,
    weak_form_residual,
)
from sbm.errors import ConfigError
from sbm.grid import Field, GridSpec, initial_field

G = GridSpec(-4, 4, 128)
DT = 1e-3
TRI = {"kind": "triangle", "center": 0, "width": 1, "mass": 1}
TWO = BranchingSpec((0.0,), (Rate.clip_linear(1.0, 1.0), Rate.constant(1.0)))


def _noise(seed=1, dt=DT, dx=G.dx, dz=1e-3):
    return nz.NoiseSpec(seed, dt, dx, dz=dz)


def test_transform_zero_and_uniform():
    st = to_distribution_functions(Field(G, np.zeros(G.nx)), (0.0,))
    assert np.all(st.values == 0)
    f = initial_field({"kind": "uniform", "left": 0, "right": 1, "mass": 1}, G)
    st = to_distribution_functions(f)
    x = st.nodes(0)
    # the interpolant leaks dx/8 of mass across each kink
    assert np.max(np.abs(st.interval(0) - np.clip(x, 0, 1))) <= G.dx / 8 + 1e-15
    assert st.tail_mass == pytest.approx(1.0, abs=1e-14)
    assert st.interval(0)[0] == 0.0


def test_transform_splits_mass_and_slopes_match():
    f = initial_field({"kind": "gaussian-bump", "center": 0.2, "sigma": 0.8, "mass": 1.3}, G)
    st = to_distribution_functions(f, (-0.5, 0.5))
    # odd images past the edges take dx/4 of each edge value
    want = 1.3 - G.dx / 4 * (f.values[0] + f.values[-1])
    assert st.interval(0)[-1] + st.interval(1)[-1] + st.tail_mass == pytest.approx(want, abs=1e-14)
    for a in (-0.5, 0.5):
        left, right = one_sided_slopes(f, a)
        assert abs(left - right) <= 1e-12
    with pytest.raises(ConfigError):
        to_distribution_functions(f, (0.01,))
    with pytest.raises(ConfigError):
        to_distribution_functions(f, (9.0,))


def test_zero_state_stays_zero():
    st = to_distribution_functions(Field(G, np.zeros(G.nx)), (0.0,))
    out, corr = step_massnoise(st, TWO, _noise(), 0, 0, DT)
    assert np.all(out.values == 0) and np.all(corr == 0)


def test_strip_sum_covariance():
    noise = _noise(dz=1e-2)
    levels = np.array([0.3, 0.3, 0.7])
    draws = np.array([strip_sum(noise, 0, s, 0, levels) for s in range(20_000)])
    assert np.array_equal(draws[:, 0], draws[:, 1])
    cov = np.cov(draws[:, 1:].T) / DT
    assert cov[0, 0] == pytest.approx(0.3, rel=0.05)
    assert cov[1, 1] == pytest.approx(0.7, rel=0.05)
    assert cov[0, 1] == pytest.approx(0.3, rel=0.05)


def test_equal_levels_get_equal_kicks():
    # two plateaus at the same level: flat regions move together
    v = np.zeros(G.nx)
    v[20:30] = 1.0
    v[90:100] = 1.0
    f = Field(G, v)
    st = to_distribution_functions(f)
    out, _ = step_massnoise(st, BranchingSpec.constant(1.0), _noise(), 0, 0, DT)
    u0, u1 = st.interval(0), out.interval(0)
    flat = np.nonzero(np.isclose(u0, u0[60], atol=0) & (np.arange(u0.size) > 40) & (np.arange(u0.size) < 80))[0]
    d = u1[flat] - u0[flat]
    assert flat.size > 10 and np.all(d == d[0])


def test_mass_sde():
    noise = _noise()
    assert total_mass_sde_step(0.0, Rate.constant(1), noise, 0, 5, DT) == 0.0
    u = 1.0
    for s in range(50):
        u = total_mass_sde_step(u, Rate.constant(1), noise, 7, s, DT)
    assert simulate_total_mass(1.0, Rate.constant(1), noise, [7], 0.05)[0] == pytest.approx(u, abs=1e-14)
    with pytest.raises(ConfigError):
        total_mass_sde_step(-1.0, Rate.constant(1), noise, 0, 0, DT)


def test_mass_sde_law():
    noise = _noise(seed=11)
    U = simulate_total_mass(1.0, Rate.constant(1), noise, range(20_000), 0.5)
    se = U.std() / math.sqrt(U.size)
    assert abs(U.mean() - 1.0) <= 3 * se
    e = np.exp(-U)
    assert abs(e.mean() - math.exp(-1 / 1.25)) <= 3 * e.std() / math.sqrt(U.size)


def test_zero_perturbation_is_exact():
    cfg = DistFnConfig(G, DT, 0.05, TWO)
    rep = pathwise_uniqueness_experiment(cfg, initial_field(TRI, G), _noise(), 0.0, paths=[0, 1])
    assert rep["sup_distance"] <= 1e-10 and rep["worst_path_distance"] <= 1e-10


def test_pinned_and_monotone():
    cfg = DistFnConfig(G, DT, 0.1, TWO)
    ens = simulate_distfn_ensemble(cfg, initial_field(TRI, G), _noise(), range(5), np.linspace(0, 0.1, 11))
    for p in range(5):
        for s in range(11):
            assert ens.state(p, s).is_valid()
    with pytest.raises(ConfigError):
        DistFnState(G, (0.0,), np.zeros(3))


def test_weak_form_residual():
    cfg = DistFnConfig(G, DT, 0.1, TWO)
    ens = simulate_distfn_ensemble(cfg, initial_field(TRI, G), _noise(3), range(200), np.linspace(0, 0.1, 101))
    # interval 0 is (-4, 0]: phi vanishes at -4 and is flat at 0
    phi0 = lambda x: np.sin(np.pi * (np.asarray(x) + 4) / 8)
    m, se = weak_form_residual(ens, 0, phi0)
    assert abs(m) <= 3 * se
    phi1 = lambda x: 1 - np.cos(np.pi * np.asarray(x) / 8)
    m, se = weak_form_residual(ens, 1, phi1)
    assert abs(m) <= 3 * se


def test_config_rejects_off_face_breakpoints():
    with pytest.raises(ConfigError):
        DistFnConfig(G, DT, 0.1, BranchingSpec((0.01,), (Rate.constant(1), Rate.constant(1))))
    with pytest.raises(ConfigError):
        DistFnConfig(G, 1.0, 0.1)


def _correction(grid, dt, T, paths):
    cfg = DistFnConfig(grid, dt, T, BranchingSpec.constant(1.0))
    ens = simulate_distfn_ensemble(cfg, initial_field(TRI, grid), _noise(5, dt, grid.dx), range(paths),
                                   [0.0, T], store=False)
    return float(ens.correction_rate("sup")[0]), float(ens.correction_rate("end")[0])


def test_projection_correction_within_budget():
    # required: the projection moves at most 0.5% of the interval mass per unit time at the default resolution.
    # Known failure, kept honest: the explicit step leaves O(dt) dips that the cumulative max fills.
    # Measured with 10 paths: end 1.10% at dt=1e-4, 0.61% at 5e-5, 0.28% at 2.5e-5.
    sup, end = _correction(GridSpec(-8, 8, 1024), 1e-4, 0.25, 10)
    print(f"projection correction per unit time: end {end:.4%}, largest dip {sup:.4%}")
    assert end <= 0.005


def test_projection_correction_shrinks_with_dt():
    grid = GridSpec(-4, 4, 256)
    rates = [_correction(grid, dt, 0.1, 10)[1] for dt in (2e-4, 1e-4, 5e-5)]
    assert rates[0] > rates[1] > rates[2]
    # first order in dt
    assert rates[2] / rates[0] < 0.4
