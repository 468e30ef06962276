import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdlab.rng import RngStream
from pdlab.sampling import (pd_power_sums, pd_ranked_batch, pd_sample_table, rank_gem, sample_gem,
                            sample_pd_ranked)
from pdlab.simplex import PARAMS_GRID, Params, deficiency, stationary_moments


def _z(samples, target):
    return (samples.mean() - target) / (samples.std(ddof=1) / math.sqrt(samples.size))


@pytest.mark.parametrize("p", PARAMS_GRID)
def test_gem_mass_identity(p):
    g = sample_gem(RngStream(1), p, 500)
    assert g.sticks.size == 500 and g.truncation == 500
    assert np.all((g.sticks >= 0) & (g.sticks <= 1))
    assert g.tail_mass >= 0
    assert math.fsum(g.sticks) + g.tail_mass == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2 ** 32), st.sampled_from(PARAMS_GRID), st.integers(1, 300))
@settings(max_examples=30, deadline=None)
def test_ranking_preserves_sticks(seed, p, T):
    g = sample_gem(RngStream(seed), p, T)
    x = rank_gem(g)
    assert np.array_equal(np.sort(x.coords), np.sort(g.sticks))
    assert x.residual == g.tail_mass
    assert x.tail_is_ranked
    assert np.all(np.diff(x.coords) <= 0)


def test_gem_deterministic():
    p = Params(0.3, 0.7)
    a = sample_gem(RngStream(5, 2), p, 1000)
    b = sample_gem(RngStream(5, 2), p, 1000)
    assert np.array_equal(a.sticks, b.sticks) and a.tail_mass == b.tail_mass


def test_gem_rejects_zero_truncation():
    with pytest.raises(ValueError):
        sample_gem(RngStream(0), Params(0, 1), 0)


def test_first_stick_mean():
    # the first stick is Beta(1 - alpha, theta + alpha) with mean (1 - alpha)/(1 + theta)
    p = Params(0.5, 0.5)
    coords, _ = pd_ranked_batch(p, 1, 20_000, seed=3, truncation=1)
    assert abs(_z(coords[:, 0], 1 / 3)) < 3


def test_tail_mass_median_small():
    # log tail is a sum of 1000 terms with mean -1 here, so the tail is far
    # below the frozen threshold 1e-3 (it usually underflows to 0.0)
    _, tails = pd_power_sums(Params(0.0, 1.0), [2], 2000, seed=4, truncation=1000)
    assert np.median(tails) < 1e-3


def test_tail_mass_decreases_with_truncation():
    p = Params(0.5, 0.5)
    _, t_short = pd_power_sums(p, [2], 400, seed=6, truncation=100)
    _, t_long = pd_power_sums(p, [2], 400, seed=6, truncation=1000)
    assert np.all(t_long <= t_short)


def test_phi2_mean_alpha0():
    sums, _ = pd_power_sums(Params(0.0, 1.0), [2, 3], 20_000, seed=7, truncation=2000)
    assert abs(_z(sums[:, 0], 0.5)) < 3
    assert abs(_z(sums[:, 1], 1 / 3)) < 3


def test_phi2_mean_alpha_positive():
    sums, _ = pd_power_sums(Params(0.3, 0.7), [2], 4000, seed=8, truncation=10_000)
    assert abs(_z(sums[:, 0], 0.7 / 1.7)) < 3


def test_power_sums_match_ranked_draws():
    p = Params(0.5, -0.25)
    sums, tails = pd_power_sums(p, [2, 4], 20, seed=9, truncation=3000)
    coords, tails2 = pd_ranked_batch(p, 3000, 20, seed=9, truncation=3000)
    np.testing.assert_allclose(sums[:, 0], (coords ** 2).sum(1), rtol=1e-12)
    np.testing.assert_allclose(sums[:, 1], (coords ** 4).sum(1), rtol=1e-12)
    assert np.array_equal(tails, tails2)


def test_sample_table_consistent():
    p = Params(0.3, 0.7)
    coords, sums, tails = pd_sample_table(p, 5, [2, 3], 10, seed=1, truncation=500)
    c2, t2 = pd_ranked_batch(p, 5, 10, seed=1, truncation=500)
    assert np.array_equal(coords, c2) and np.array_equal(tails, t2)
    s2, _ = pd_power_sums(p, [2, 3], 10, seed=1, truncation=500)
    np.testing.assert_allclose(sums, s2, rtol=1e-12)


def test_sampled_pd_is_ranked_and_deficiency_small():
    x = sample_pd_ranked(RngStream(10), Params(0.0, 1.0))
    assert np.all(np.diff(x.coords) <= 0)
    assert deficiency(x, 100) < 0.05


def test_deficiency_at_100_small_on_average():
    coords, _ = pd_ranked_batch(Params(0.0, 1.0), 100, 200, seed=11)
    d = 1.0 - coords.sum(1)
    assert np.all(d >= -1e-12) and d.mean() < 0.05


def test_power_sum_orders_checked():
    with pytest.raises(ValueError):
        pd_power_sums(Params(0, 1), [1], 1, 0)
    with pytest.raises(ValueError):
        pd_sample_table(Params(0, 1), 3, [1, 2], 1, 0)


@pytest.mark.parametrize("p", PARAMS_GRID)
def test_moment_recursion_small_sample(p):
    # desk-sized version of the stationary-moment check; the full 10^5 version
    # lives in the acceptance suite
    sums, _ = pd_power_sums(p, [2, 3, 4, 5, 6], 3000, seed=12, truncation=10_000)
    target = stationary_moments(p, 6).values[1:]
    for j in range(5):
        assert abs(_z(sums[:, j], target[j])) < 3.5
