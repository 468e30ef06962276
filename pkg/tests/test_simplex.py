import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from pdlab.simplex import (PARAMS_GRID, MomentVector, Params, RankedMassVector, SmoothFunctional,
                           apply_A_phi, apply_A_psi, awkward_terms, deficiency, h_eps,
                           moment_ode_solve, moments_of, ode_rates, phi_m, power_functional,
                           stationary_moments)

mp.mp.dps = 40

params_st = st.builds(
    lambda a, s: Params(a, -a + s),
    st.floats(0.0, 0.95),
    st.floats(0.05, 5.0),
)


@st.composite
def simplex_points(draw, max_len=12, full=False):
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=max_len))
    raw = np.array(raw)
    assume(raw.sum() > 1e-6)
    total = 1.0 if full else draw(st.floats(0.05, 1.0))
    coords = np.sort(raw / raw.sum() * total)[::-1]
    return RankedMassVector(coords, max(0.0, 1.0 - coords.sum()))


# -- types ---------------------------------------------------------------------


def test_params_validation():
    Params(0.0, 0.01)
    Params(0.5, -0.49)
    for bad in [(-0.1, 1.0), (1.0, 1.0), (0.3, -0.3), (0.0, 0.0), (float("nan"), 1.0)]:
        with pytest.raises(ValueError):
            Params(*bad)


def test_params_grid_contains_negative_theta():
    assert Params(0.5, -0.25) in PARAMS_GRID
    assert len(PARAMS_GRID) == 4


def test_ranked_vector_validation():
    RankedMassVector([0.5, 0.3], 0.2)
    with pytest.raises(ValueError):
        RankedMassVector([0.3, 0.5], 0.2)
    with pytest.raises(ValueError):
        RankedMassVector([0.5, -0.1], 0.6)
    with pytest.raises(ValueError):
        RankedMassVector([0.5, 0.3], 0.5)
    x = RankedMassVector([0.6, 0.4])
    assert x.residual == pytest.approx(0.0)
    with pytest.raises((ValueError, AttributeError, TypeError)):
        x.coords[0] = 0.1


def test_ranked_vector_json_roundtrip():
    x = RankedMassVector([0.5, 0.25], 0.25, tail_is_ranked=True)
    d = x.to_dict()
    assert set(d) == {"coords", "residual", "tail_is_ranked"}
    assert RankedMassVector.from_dict(d) == x


def test_corner_and_dust():
    assert phi_m(RankedMassVector.corner(), 2) == 1.0
    dust = RankedMassVector.dust()
    assert dust.residual == 1.0 and phi_m(dust, 3) == 0.0
    assert not dust.in_open_simplex


def test_smooth_functional_rejects_nonzero_at_origin():
    with pytest.raises(ValueError):
        SmoothFunctional(lambda u: u + 1.0, lambda u: 1.0 + 0 * u, lambda u: 0 * u)
    with pytest.raises(ValueError):
        SmoothFunctional(lambda u: u, lambda u: 1.0 + 0 * u, lambda u: 0 * u)


def test_moment_vector_invariants():
    MomentVector([1.0, 0.5, 0.3])
    for bad in ([0.9, 0.5], [1.0, 0.5, 0.6], [1.0, 1.2], [1.0, -0.1]):
        with pytest.raises(ValueError):
            MomentVector(bad)


# -- phi_m and the generator ---------------------------------------------------------


def test_phi_examples():
    assert phi_m(RankedMassVector([1.0]), 2) == 1.0
    assert phi_m(RankedMassVector([0.5, 0.5]), 2) == 0.5
    oracle = mp.mpf("0.6") ** mp.mpf("2.5") + mp.mpf("0.4") ** mp.mpf("2.5")
    assert phi_m(RankedMassVector([0.6, 0.4]), 2.5) == pytest.approx(float(oracle), abs=1e-15)


def test_phi_one_ignores_residual():
    assert phi_m(RankedMassVector([0.2], 0.8), 1) == 1.0


@pytest.mark.parametrize("m", [0.5, 0.0, -1.0])
def test_phi_rejects_small_exponents(m):
    with pytest.raises(ValueError):
        phi_m(RankedMassVector([1.0]), m)


def test_apply_A_phi_examples():
    assert apply_A_phi(Params(0.5, 0.5), RankedMassVector([1.0]), 2) == pytest.approx(-1.0)
    assert apply_A_phi(Params(0.0, 1.0), RankedMassVector([0.5, 0.5]), 2) == pytest.approx(0.0,
                                                                                        abs=1e-15)
    a, th, m = mp.mpf("0.3"), mp.mpf("0.7"), mp.mpf("2.5")
    x = [mp.mpf("0.6"), mp.mpf("0.4")]
    oracle = m / 2 * ((m - 1 - a) * sum(v ** (m - 1) for v in x) - (m - 1 + th) * sum(v ** m for v in x))
    got = apply_A_phi(Params(0.3, 0.7), RankedMassVector([0.6, 0.4]), 2.5)
    assert got == pytest.approx(float(oracle), abs=1e-14)


def test_apply_A_phi_needs_flag_below_two():
    x = RankedMassVector([0.6, 0.4])
    with pytest.raises(ValueError):
        apply_A_phi(Params(0.3, 0.7), x, 1.5)
    v = apply_A_phi(Params(0.3, 0.7), x, 1.5, extended=True)
    oracle = 0.75 * ((0.5 - 0.3) * (0.6 ** 0.5 + 0.4 ** 0.5) - (0.5 + 0.7) * (0.6 ** 1.5 + 0.4 ** 1.5))
    assert v == pytest.approx(oracle, abs=1e-14)


@given(params_st, simplex_points())
def test_phi_monotone_in_order(p, x):
    values = [phi_m(x, m) for m in (1, 1.5, 2, 2.5, 3, 4.5, 7)]
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in values)
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


@given(params_st, st.floats(0.0, 1.0))
def test_A_phi2_vanishes_at_stationary_level(p, u):
    # two-atom points sweep phi_2 over [1/2, 1]; the drift changes sign exactly
    # at phi_2 = (1 - alpha)/(1 + theta)
    x = RankedMassVector(sorted([u, 1 - u], reverse=True))
    level = (1 - p.alpha) / (1 + p.theta)
    drift = apply_A_phi(p, x, 2)
    assert drift == pytest.approx(0.5 * 2 * (1 + p.theta) * (level - phi_m(x, 2)), abs=1e-12)


def test_A_phi2_zero_point():
    # (1 - alpha)/(1 + theta) < 1/2 here, so use three atoms: one large, two equal,
    # and bisect the large one until phi_2 hits the stationary level
    p = Params(0.3, 0.7)
    level = 0.7 / 1.7
    lo, hi = 1 / 3, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if mid ** 2 + 2 * ((1 - mid) / 2) ** 2 < level:
            lo = mid
        else:
            hi = mid
    x = RankedMassVector([lo, (1 - lo) / 2, (1 - lo) / 2])
    assert phi_m(x, 2) == pytest.approx(level, abs=1e-12)
    assert apply_A_phi(p, x, 2) == pytest.approx(0.0, abs=1e-12)


# -- additive functionals --------------------------------------------------------------


@given(params_st, simplex_points(), st.integers(2, 6))
def test_A_psi_power_matches_A_phi(p, x, m):
    got = apply_A_psi(p, x, power_functional(m))
    assert got == pytest.approx(apply_A_phi(p, x, m), abs=1e-12)


@given(params_st, simplex_points())
def test_A_psi_zero_functional(p, x):
    zero = SmoothFunctional(lambda u: 0 * np.asarray(u, float), lambda u: 0 * np.asarray(u, float),
                            lambda u: 0 * np.asarray(u, float))
    assert apply_A_psi(p, x, zero) == 0.0


def _literal_A_psi(alpha, theta, xs, m, eps):
    # term-by-term evaluation of the generator on psi_h for a point with sum 1
    m, eps = mp.mpf(m), mp.mpf(eps)
    h1 = lambda u: m * ((u + eps) ** (m - 1) - eps ** (m - 1))
    h2 = lambda u: m * (m - 1) * (u + eps) ** (m - 2)
    s = mp.mpf(0)
    for u in xs:
        s += u * (1 - u) * h2(u) / 2 - (theta * u + alpha) * h1(u) / 2
    return s


def test_A_psi_h_eps_oracle():
    xs = [mp.mpf("0.5"), mp.mpf("0.3"), mp.mpf("0.2")]
    oracle = _literal_A_psi(mp.mpf("0.4"), mp.mpf("0.6"), xs, "1.5", "0.01")
    got = apply_A_psi(Params(0.4, 0.6), RankedMassVector([0.5, 0.3, 0.2]), h_eps(1.5, 0.01))
    assert got == pytest.approx(float(oracle), abs=1e-12)


@given(params_st, simplex_points(full=True), st.floats(1.05, 1.95), st.floats(1e-3, 0.5))
@settings(max_examples=60)
def test_A_psi_equals_literal_formula_on_full_points(p, x, m, eps):
    xs = [mp.mpf(float(v)) for v in x.coords if v > 0]
    oracle = _literal_A_psi(mp.mpf(p.alpha), mp.mpf(p.theta), xs, m, eps)
    got = apply_A_psi(p, x, h_eps(m, eps))
    assert got == pytest.approx(float(oracle), rel=1e-9, abs=1e-9)


def test_h_eps_values():
    f = h_eps(1.5, 0.1)
    assert f(0.0) == 0.0
    assert f.h1(0.0) == 0.0
    g = h_eps(1.5, 0.01)
    u, e, m = mp.mpf("0.25"), mp.mpf("0.01"), mp.mpf("1.5")
    oracle = (u + e) ** m - e ** m - m * e ** (m - 1) * u
    assert g(0.25) == pytest.approx(float(oracle), abs=1e-15)


@pytest.mark.parametrize("m,eps", [(1.0, 0.1), (2.0, 0.1), (1.5, 0.0), (1.5, -1.0)])
def test_h_eps_rejects_bad_arguments(m, eps):
    with pytest.raises(ValueError):
        h_eps(m, eps)


def test_awkward_terms():
    x = RankedMassVector([0.5, 0.3, 0.2])
    s1, s2 = awkward_terms(Params(0.0, 1.0), x, 1.5, 0.01)
    assert s2 == 0.0 and s1 > 0
    corner = RankedMassVector([1.0])
    f = h_eps(1.4, 0.05)
    s1, s2 = awkward_terms(Params(0.3, 0.7), corner, 1.4, 0.05)
    assert s1 == pytest.approx(0.5 * f.h2(1.0))
    assert s2 == pytest.approx(-0.5 * 0.3 * f.h1(1.0))
    flat = RankedMassVector(np.full(100, 0.01))
    s1_seq = [awkward_terms(Params(0.3, 0.7), flat, 1.5, e)[0] for e in (0.1, 0.01, 0.001)]
    s2_seq = [awkward_terms(Params(0.3, 0.7), flat, 1.5, e)[1] for e in (0.1, 0.01, 0.001)]
    assert s1_seq[0] < s1_seq[1] < s1_seq[2]
    # the second sum has a negative coefficient and grows in magnitude
    assert s2_seq[0] > s2_seq[1] > s2_seq[2]


# -- moment equations -----------------------------------------------------------------------


def _generator_matrix(p, M):
    b, c = ode_rates(p, M)
    L = np.zeros((M, M))
    for k in range(1, M):
        L[k, k - 1] = b[k]
        L[k, k] = -c[k]
    return L


@pytest.mark.parametrize("p", PARAMS_GRID)
def test_moment_ode_matches_matrix_exponential(p):
    M = 6
    x0 = moments_of(RankedMassVector([0.7, 0.2, 0.1]), M)
    L = _generator_matrix(p, M)
    times = [0.0, 0.05, 0.3, 1.0, 2.5]
    for t, mv in zip(times, moment_ode_solve(p, x0, M, times)):
        expected = expm(L * t) @ x0.values
        np.testing.assert_allclose(mv.values, expected, atol=1e-12)


def test_moment_ode_examples():
    p = Params(0.0, 1.0)
    x0 = moments_of(RankedMassVector.corner(), 3)
    (at0,) = moment_ode_solve(p, x0, 3, [0.0])
    assert np.array_equal(at0.values, x0.values)
    (half,) = moment_ode_solve(p, x0, 2, [0.5])
    assert half.moment(2) == pytest.approx(0.5 + 0.5 * math.exp(-1.0), abs=1e-14)
    assert half.moment(2) == pytest.approx(0.6839397, abs=1e-7)
    dust = moments_of(RankedMassVector.dust(), 2)
    (d,) = moment_ode_solve(p, dust, 2, [0.5])
    assert d.moment(2) == pytest.approx(0.5 * (1 - math.exp(-1.0)), abs=1e-14)


@given(params_st, simplex_points(), st.integers(2, 7))
@settings(max_examples=50)
def test_moment_ode_limits_and_range(p, x, M):
    x0 = moments_of(x, M)
    curves = moment_ode_solve(p, x0, M, [0.0, 0.1, 1.0, 400.0])
    assert np.array_equal(curves[0].values, x0.values)
    for mv in curves:
        assert np.all(mv.values >= -1e-12) and np.all(mv.values <= 1 + 1e-12)
    np.testing.assert_allclose(curves[-1].values, stationary_moments(p, M).values, atol=1e-8)


def test_moment_ode_errors():
    p = Params(0.0, 1.0)
    x0 = moments_of(RankedMassVector.corner(), 3)
    with pytest.raises(ValueError):
        moment_ode_solve(p, x0, 1, [0.0])
    with pytest.raises(ValueError):
        moment_ode_solve(p, x0, 3, [0.5, 0.1])


def test_stationary_moment_examples():
    assert stationary_moments(Params(0.0, 1.0), 1).values.tolist() == [1.0]
    v = stationary_moments(Params(0.0, 1.0), 3)
    assert v.moment(2) == pytest.approx(0.5) and v.moment(3) == pytest.approx(1 / 3)
    assert stationary_moments(Params(0.5, 0.5), 2).moment(2) == pytest.approx(1 / 3)


@given(params_st, st.floats(0.01, 3.0))
def test_stationary_moments_monotone(p, bump):
    v = stationary_moments(p, 8).values
    assert np.all(np.diff(v) < 0)
    w = stationary_moments(Params(p.alpha, p.theta + bump), 8).values
    assert np.all(w[1:] < v[1:])


def test_deficiency_examples():
    assert deficiency(RankedMassVector.corner(), 5) == 0.0
    assert deficiency(RankedMassVector([0.3, 0.2], 0.5), 2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        deficiency(RankedMassVector.corner(), 0)


@given(simplex_points(max_len=30))
def test_deficiency_non_increasing_in_K(x):
    d = [deficiency(x, K) for K in range(1, 35)]
    assert all(0.0 <= v <= 1.0 for v in d)
    assert all(b <= a for a, b in zip(d, d[1:]))
