import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from sbm.coeff import (
    G_SUP_THRESHOLD,
    J_TAIL_CONSTANT,
    RHO_NORMALIZER,
    BranchingSpec,
    Rate,
    g_m_exact,
    g_m_surrogate,
    gamma,
    interval_rates,
    mollifier_rho,
    mollify_gamma,
    weight_j,
)
from sbm.errors import ConfigError, DomainError
from sbm.grid import Field, GridSpec, initial_field

G = GridSpec(-4, 4, 256)


def _g_capped(x, m):
    """Direct quadrature of E[min(sqrt|x + Z/sqrt(m)|, m)] minus its value at 0."""
    mp.mp.dps = 30
    s = 1 / mp.sqrt(m)

    def e(x):
        dens = lambda y: mp.exp(-(y - x) ** 2 / (2 * s * s)) / (s * mp.sqrt(2 * mp.pi))
        cuts = sorted({x - 14 * s, x + 14 * s, *[c for c in (-m * m, 0, m * m) if x - 14 * s < c < x + 14 * s]})
        return mp.quad(lambda y: min(mp.sqrt(abs(y)), m) * dens(y), cuts)

    return float(e(mp.mpf(x)) - e(mp.mpf(0)))


def _g_oracle(x, m):
    # E|x + Z/sqrt(m)|^{1/2} via the confluent hypergeometric closed form; ignores the cap at m,
    # which is reached with probability below exp(-m^3 / 2), so only valid for m >= 10
    assert m >= 10
    mp.mp.dps = 30
    s = 1 / mp.sqrt(m)

    def e_half(x):
        return s ** 0.5 * 2 ** 0.25 * mp.gamma(0.75) / mp.sqrt(mp.pi) * mp.hyp1f1(-0.25, 0.5, -mp.mpf(x) ** 2 / (2 * s * s))

    return float(e_half(x) - e_half(0))


def test_gamma_constant():
    f = initial_field({"kind": "triangle", "center": 0, "width": 1, "mass": 1}, G)
    assert np.all(gamma(BranchingSpec.constant(1.5), f, G.x) == 2.25)


def test_gamma_tail_mass():
    f = initial_field({"kind": "uniform", "left": -1, "right": 1, "mass": 0.5}, G)
    spec = BranchingSpec((), (Rate.clip_linear(1.0, 1.0),))
    assert gamma(spec, f, 0.3) == pytest.approx(0.25, abs=1e-14)


def test_gamma_case_split():
    f = initial_field({"kind": "gaussian-bump", "center": 0, "sigma": 1, "mass": 1}, G)
    spec = BranchingSpec((0.0,), (Rate.constant(1.0), Rate.constant(2.0)))
    assert gamma(spec, f, -1.0) == 1.0
    assert gamma(spec, f, 1.0) == 4.0
    with pytest.raises(DomainError):
        gamma(spec, f, 5.0)


def test_gamma_breakpoint_density_is_interpolated():
    f = initial_field({"kind": "gaussian-bump", "center": 0.3, "sigma": 0.7, "mass": 1}, G)
    spec = BranchingSpec((0.1,), (Rate.clip_linear(1.0, 5.0), Rate.constant(1.0)))
    expect = np.interp(0.1, G.x, f.values)
    assert gamma(spec, f, -1.0) == pytest.approx(expect ** 2, rel=1e-14)


def test_gamma_locality():
    f = initial_field({"kind": "gaussian-bump", "center": 0, "sigma": 1, "mass": 1}, G)
    spec = BranchingSpec((-1.0, 1.0), (Rate.sin_perturbed(1, 0.5), Rate.clip_linear(2, 3), Rate.sqrt_cap(2)))
    before = interval_rates(spec, f)
    v = f.values.copy()
    far = (np.abs(G.x + 1) > 0.1) & (np.abs(G.x - 1) > 0.1) & (G.x < 1)
    v[far] *= 1.7
    after = interval_rates(spec, Field(G, v))
    assert before[0] == after[0] and before[1] == after[1]


rates = st.one_of(
    st.builds(Rate.constant, st.floats(0, 3)),
    st.builds(Rate.clip_linear, st.floats(0, 5), st.floats(0, 3)),
    st.floats(0, 2).flatmap(lambda b: st.builds(Rate.sin_perturbed, st.just(b), st.floats(-b, b))),
    st.builds(Rate.sqrt_cap, st.floats(0, 3)),
)


@given(st.lists(rates, min_size=1, max_size=3), st.lists(st.floats(0, 3), min_size=G.nx, max_size=G.nx), st.integers(1, 200))
def test_gamma_bounded(rs, vals, m):
    bps = tuple(np.linspace(-1, 1, len(rs) - 1)) if len(rs) > 1 else ()
    spec = BranchingSpec(bps, tuple(rs))
    f = Field(G, np.array(vals))
    K2 = spec.bound ** 2
    g = gamma(spec, f, G.x)
    assert np.all((g >= 0) & (g <= K2 + 1e-12))
    gm = mollify_gamma(spec, f, G.x, m)
    assert np.all((gm >= 0) & (gm <= K2 + 1e-12))


@given(rates, st.floats(0, 1e6))
def test_rate_in_range(r, v):
    assert 0 <= r(v) <= r.bound + 1e-12


def test_rate_catalogue_roundtrip():
    for r in (Rate.constant(2), Rate.clip_linear(1, 3), Rate.sin_perturbed(1, 0.1), Rate.sqrt_cap(2)):
        assert Rate.from_dict(r.to_dict()) == r
    assert Rate.sqrt_cap(1).hoelder_beta == 0.5 and Rate.constant(1).hoelder_beta == 1.0
    assert Rate.sin_perturbed(1, 0.1).bound == pytest.approx(1.1)
    with pytest.raises(ConfigError):
        Rate.from_dict({"kind": "cubic"})
    with pytest.raises(ConfigError):
        Rate.from_dict({"kind": "clip-linear", "slope": 1})
    with pytest.raises(ConfigError):
        Rate.sin_perturbed(0.1, 1.0)
    spec = BranchingSpec((0.0,), (Rate.constant(1), Rate.sqrt_cap(1)))
    assert BranchingSpec.from_dict(spec.to_dict()) == spec


def test_mollifier():
    assert mollifier_rho(1.0) == 0.0 and mollifier_rho(-1.0) == 0.0
    total = integrate.quad(mollifier_rho, -1, 1, epsabs=1e-13, epsrel=1e-13)[0]
    assert total == pytest.approx(1.0, abs=1e-10)
    assert RHO_NORMALIZER == pytest.approx(2.2523, abs=1e-4)
    assert mollifier_rho(0.0) == pytest.approx(RHO_NORMALIZER * math.exp(-1), rel=1e-15)


def test_mollify_constant():
    f = initial_field({"kind": "triangle", "center": 0, "width": 1, "mass": 1}, G)
    for m in (1, 10, 1000):
        assert np.all(mollify_gamma(BranchingSpec.constant(1.0), f, G.x, m) == 1.0)


def _mollify_oracle(spec, f, x, m):
    rho_m = lambda y: m * mollifier_rho(m * (x - y))
    return integrate.quad(lambda y: rho_m(y) * gamma(spec, f, y), x - 1 / m, x + 1 / m,
                          points=[a for a in spec.breakpoints if abs(a - x) < 1 / m], epsabs=1e-12)[0]


def test_mollify_step():
    f = initial_field({"kind": "gaussian-bump", "center": 0, "sigma": 1, "mass": 1}, G)
    spec = BranchingSpec((0.0,), (Rate.constant(1.0), Rate.constant(2.0)))
    for m in (1, 10, 100):
        v = mollify_gamma(spec, f, 0.0, m)
        assert 1.0 < v < 4.0
        assert v == pytest.approx(_mollify_oracle(spec, f, 0.0, m), abs=1e-9)
        x = 0.6 / m
        assert mollify_gamma(spec, f, x, m) == pytest.approx(_mollify_oracle(spec, f, x, m), abs=1e-9)
    errs = [abs(mollify_gamma(spec, f, 0.05, m) - gamma(spec, f, 0.05)) for m in (10, 100, 1000)]
    assert errs[0] > errs[1] >= errs[2] and errs[2] <= 1e-12


@pytest.mark.parametrize("m", [1, 2, 10, 1000])
def test_g_m_against_quadrature(m):
    xs = np.array([0.0, 1e-3, 0.1, 1.0, 3.7])
    want = [_g_capped(x, m) for x in xs]
    assert np.max(np.abs(g_m_exact(xs, m) - want)) <= 1e-9
    assert np.max(np.abs(g_m_surrogate(xs, m) - want)) <= 1e-5


@pytest.mark.parametrize("m", [10, 1000])
def test_g_m_against_closed_form(m):
    for x in (0.0, 1e-3, 0.1, 1.0, 3.7):
        assert g_m_exact(x, m) == pytest.approx(_g_oracle(x, m), abs=1e-9)


def test_g_m_example_value():
    # the definition gives 0.8537 at (x=1, m=1000); G_m approaches sqrt x only like m^{-1/4}
    assert g_m_surrogate(1.0, 1000) == pytest.approx(_g_oracle(1.0, 1000), abs=1e-5)
    assert g_m_surrogate(1.0, 1000) == pytest.approx(0.8537, abs=1e-4)


@pytest.mark.parametrize("m", [10, 100, 1000])
def test_g_m_properties(m):
    assert abs(g_m_surrogate(0.0, m)) <= 1e-8
    xs = np.linspace(0, 100, 20001)
    g = g_m_surrogate(xs, m)
    assert np.all(np.diff(g) >= -1e-12)
    slope = np.max(np.abs(np.diff(g)) / np.diff(xs))
    assert np.isfinite(slope) and slope <= 10 * math.sqrt(m)
    assert np.all(np.abs(g) <= np.sqrt(xs) + 1.0)
    with pytest.raises(DomainError):
        g_m_surrogate(-0.1, m)


def test_g_m_sup_error_decreases():
    xs = np.linspace(0, 4, 4001)
    sups = [np.max(np.abs(g_m_surrogate(xs, m) - np.sqrt(xs))) for m in (10, 100, 1000)]
    assert sups[0] > sups[1] > sups[2]
    assert sups[2] < G_SUP_THRESHOLD
    oracle = max(abs(_g_oracle(x, 1000) - math.sqrt(x)) for x in np.linspace(0, 0.1, 201))
    assert sups[2] == pytest.approx(oracle, abs=5e-4)


def test_weight_j():
    assert weight_j(1.5) * math.exp(1.5) == pytest.approx(weight_j(3.0) * math.exp(3.0), abs=1e-8)
    assert weight_j(0.0) > 0
    x = np.linspace(-10, 10, 401)
    r = weight_j(x) / np.exp(-np.abs(x))
    assert np.all((r >= 0.3) & (r <= 3.0))
    assert np.allclose(weight_j(x), weight_j(-x), rtol=0, atol=1e-15)


def test_j_tail_constant_oracle():
    mp.mp.dps = 30
    c = mp.quad(lambda u: mp.exp(-1 / (1 - u * u) + u), [-1, 0, 1]) / mp.quad(lambda u: mp.exp(-1 / (1 - u * u)), [-1, 0, 1])
    assert J_TAIL_CONSTANT == pytest.approx(float(c), abs=1e-15)
    for x in (1.5, 3.0, 7.0):
        assert weight_j(x) * math.exp(x) == pytest.approx(float(c), abs=1e-9)
