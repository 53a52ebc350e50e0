import math

import numpy as np
import pytest

from sbm import noise as nz
from sbm.coeff import BranchingSpec, Rate
from sbm.errors import ConfigError
from sbm.grid import GridSpec, initial_field
from sbm.kernel import heat_kernel
from sbm.particles import (
    ParticleSystem,
    empirical_field,
    particle_step,
    quantile_positions,
    silverman_bandwidth,
    simulate_particles,
    weak_agreement_test,
)

G = GridSpec(-4, 4, 256)
TRI = {"kind": "triangle", "center": 0, "width": 1, "mass": 1}


def _noise(dt, seed=1):
    return nz.NoiseSpec(seed, dt, G.dx)


def test_no_branching_keeps_count():
    ens = simulate_particles(initial_field(TRI, G), 300, BranchingSpec.constant(0.0), _noise(1e-3), range(5), 0.1)
    assert np.all(ens.counts == 300) and np.all(ens.events == 0)
    # the cloud spreads like Brownian motion: variance 1/6 + T
    x = np.concatenate(ens.positions)
    assert x.var() == pytest.approx(1 / 6 + 0.1, rel=0.05)


def test_mean_count_is_martingale():
    N, P = 200, 2000
    ens = simulate_particles(initial_field(TRI, G), N, BranchingSpec.constant(1.0), _noise(2e-4), range(P), 0.1)
    c = ens.counts[:, -1]
    assert abs(c.mean() - N) <= 3 * c.std() / math.sqrt(P)
    m = ens.total_mass()[:, -1]
    assert abs(m.mean() - 1.0) <= 3 * m.std() / math.sqrt(P)


def test_event_bookkeeping():
    N = 200
    ens = simulate_particles(initial_field(TRI, G), N, BranchingSpec.constant(1.0), _noise(2e-4), range(200), 0.1)
    died, split = ens.events[:, 0], ens.events[:, 1]
    assert np.array_equal(ens.counts[:, -1], N + split - died)
    # critical branching: deaths and splits equally likely per event
    d, s = died.sum(), split.sum()
    assert abs(d - s) <= 4 * math.sqrt(d + s)


def test_tail_rate_counts_exactly():
    ps = ParticleSystem.from_field(initial_field(TRI, G), 100, BranchingSpec((), (Rate.clip_linear(1.0, 5.0),)))
    assert ps.interval_rates()[0] == pytest.approx(1.0, abs=1e-14)
    spec = BranchingSpec((0.0,), (Rate.constant(1.0), Rate.clip_linear(1.0, 5.0)))
    ps = ParticleSystem.from_field(initial_field(TRI, G), 100, spec)
    right = np.sum(ps.positions >= 0.0)
    assert ps.interval_rates()[1] == pytest.approx((right / 100) ** 2, abs=1e-14)


def test_quantile_positions():
    x = quantile_positions(initial_field({"kind": "uniform", "left": 0, "right": 1, "mass": 2}, G), 4)
    assert np.allclose(x, [0.125, 0.375, 0.625, 0.875], atol=1e-12)


def test_empirical_field():
    ps = ParticleSystem(np.zeros(0), 10, BranchingSpec.constant(1.0), 0.1, 2 * G.dx)
    assert np.all(empirical_field(ps, G, 0.1).values == 0)
    one = ParticleSystem(np.zeros(1), 10, BranchingSpec.constant(1.0), 0.1, 2 * G.dx)
    h = 0.2
    assert np.allclose(empirical_field(one, G, h).values, 0.1 * heat_kernel(h * h, G.x), atol=1e-14)
    ps = ParticleSystem.from_field(initial_field(TRI, G), 500, BranchingSpec.constant(1.0))
    assert empirical_field(ps, G).mass == pytest.approx(ps.mass, abs=1e-3)
    with pytest.raises(ConfigError):
        empirical_field(ps, G, 0.0)


def test_bandwidth_floor():
    assert silverman_bandwidth([0.5], 0.03) == 0.03
    x = np.linspace(-1, 1, 1000)
    assert silverman_bandwidth(x, 0.0) == pytest.approx(1.06 * x.std(ddof=1) * 1000 ** -0.2)


def test_rate_budget():
    ps = ParticleSystem.from_field(initial_field(TRI, G), 1000, BranchingSpec.constant(1.0))
    ps.check_rate(1e-4)
    with pytest.raises(ConfigError):
        ps.check_rate(1e-3)
    with pytest.raises(ConfigError):
        simulate_particles(initial_field(TRI, G), 1000, BranchingSpec.constant(1.0), _noise(1e-3), [0], 0.1)


def test_step_matches_runner_and_is_deterministic():
    spec = BranchingSpec((0.0,), (Rate.sqrt_cap(1.0), Rate.clip_linear(1.0, 1.0)))
    f = initial_field(TRI, G)
    noise = _noise(2e-4)
    ens = simulate_particles(f, 100, spec, noise, [3], 20 * 2e-4)
    ps = ParticleSystem.from_field(f, 100, spec)
    for s in range(20):
        ps = particle_step(ps, noise, 3, s, 2e-4)
    assert np.array_equal(ps.positions, ens.positions[0])
    again = simulate_particles(f, 100, spec, noise, [3], 20 * 2e-4)
    assert np.array_equal(again.positions[0], ens.positions[0])


def test_weak_agreement_self_and_errors():
    a = np.random.default_rng(0).normal(size=200)
    stat, p = weak_agreement_test(a, a, None)
    assert stat == 0.0 and p == 1.0
    with pytest.raises(ConfigError):
        weak_agreement_test(a[:50], a, None)
