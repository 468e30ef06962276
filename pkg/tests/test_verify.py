import json

import numpy as np
import pytest

from pdlab.chain import Partition, calibrate_clock
from pdlab.engine import run_ensemble
from pdlab.simplex import Params, RankedMassVector
from pdlab.verify import (Estimate, MartingaleDiagnostic, TestReport, dust_start,
                          entrance_profile, martingale_diagnostic, martingale_test, mean_se,
                          moment_curve_test, moment_targets, pd_starts, stationarity_test,
                          stationary_moment_test)

P = Params(0.3, 0.7)
N = 200


@pytest.fixture(scope="module")
def clock():
    return calibrate_clock(P, N)


def test_mean_se():
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    mean, se = mean_se(x)
    np.testing.assert_allclose(mean, [2.0, 4.0])
    np.testing.assert_allclose(se, [1.0, 2.0])


def test_stationary_moment_test_passes_and_detects_shift():
    rep = stationary_moment_test(P, [2, 3], 4000, seed=1, truncation=5000)
    assert rep.verdict and rep.test_name == "stationary_moments"
    assert [e.quantity for e in rep.estimates] == ["phi_2", "phi_3"]
    sums = np.column_stack([np.full(200, 0.9) + 0.01 * np.arange(200) % 0.05,
                            np.full(200, 0.8) + 0.01 * np.arange(200) % 0.03])
    assert not stationary_moment_test(P, [2, 3], 200, sums=sums).verdict


def test_martingale_test_passes(clock):
    rep = martingale_test(P, Partition((N,)), clock, 2, [0.0, 0.25, 0.5], 200, seed=3)
    assert rep.verdict, rep.to_text()
    assert rep.extras["integrand_nonnegative"] and rep.extras["I_nondecreasing"]
    assert {e.quantity for e in rep.estimates} == {"Z_2", "Z_2^2 - I_2"}


def test_martingale_test_fails_for_misscaled_clock(clock):
    rep = martingale_test(P, Partition((N,)), clock.scaled(2.0), 2, [0.0, 0.25, 0.5], 200, seed=3)
    assert not rep.verdict


def test_martingale_test_reuses_ensemble(clock):
    cps = [0.0, 0.2]
    ens = run_ensemble(P, N, clock, Partition((N,)), cps, 100, seed=4, m_list=[3])
    a = martingale_test(P, Partition((N,)), clock, 3, cps, 100, seed=4, ensemble=ens)
    b = martingale_test(P, Partition((N,)), clock, 3, cps, 100, seed=4)
    assert a.to_json() == b.to_json()
    with pytest.raises(ValueError):
        martingale_test(P, Partition((N,)), clock, 3, cps, 101, seed=4, ensemble=ens)
    with pytest.raises(ValueError):
        martingale_test(P, Partition((N,)), clock, 2, [0.0, 0.3], 100, seed=4, ensemble=ens)


def test_martingale_diagnostic(clock):
    ens = run_ensemble(P, N, clock, Partition((N,)), [0.0, 0.1, 0.2], 10, seed=5, m_list=[2])
    diag = martingale_diagnostic(ens, 2)
    assert diag.Z_mean[0] == 0.0 and diag.I_mean[0] == 0.0
    assert np.all(np.diff(diag.I_mean) >= 0)
    with pytest.raises(ValueError):
        MartingaleDiagnostic(2, np.zeros(2), np.zeros(2), np.zeros(2), np.array([0.0, -1.0]))
    with pytest.raises(ValueError):
        MartingaleDiagnostic(2, np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2))


def test_replicate_minimum_enforced(clock):
    with pytest.raises(ValueError):
        martingale_test(P, Partition((N,)), clock, 2, [0.0, 0.1], 99)
    with pytest.raises(ValueError):
        stationarity_test(P, N, clock, [2], 0.1, 50)


def test_clock_resolution_checked(clock):
    with pytest.raises(ValueError):
        martingale_test(P, Partition((N + 1,)), clock, 2, [0.0, 0.1], 100)


def test_moment_targets_start_values():
    x = RankedMassVector(np.array([0.5, 0.25]), 0.25)
    tg = moment_targets(P, x, [2, 3], [0.0, 1.0])
    assert tg[2][0] == pytest.approx(0.3125) and tg[3][0] == pytest.approx(0.140625)
    # the curve relaxes toward the stationary value 0.7/1.7 from below
    assert tg[2][0] < tg[2][1] < 0.7 / 1.7


def test_moment_curve_test_passes(clock):
    x = RankedMassVector(np.array([0.5, 0.25]), 0.25)
    rep = moment_curve_test(P, x, N, clock, [2, 3], [0.0, 0.25, 0.5], 200, seed=6)
    assert rep.verdict, rep.to_text()
    assert rep.estimates[0].value == pytest.approx(0.3125 + 0.25 / N, abs=1e-12)


def test_moment_curve_test_fails_for_misscaled_clock(clock):
    x = RankedMassVector(np.array([1.0]), 0.0)
    rep = moment_curve_test(P, x, N, clock.scaled(0.5), [2], [0.0, 0.25, 0.5], 400, seed=6)
    assert not rep.verdict


def test_dust_start():
    assert dust_start(5) == Partition((1,) * 5)


def test_entrance_profile_small():
    p = Params(0.0, 1.0)
    rep = entrance_profile(p, [100, 400], [0.0, 0.5, 1.0], 100, seed=7, K_list=(10, 100))
    assert rep.extras["condition_a"]
    assert rep.extras["condition_c"], rep.to_text()
    assert rep.verdict == (rep.extras["condition_a"] and rep.extras["condition_b"]
                           and rep.extras["condition_c"])
    assert set(rep.extras["pathwise_fraction_below"]) == {"100", "400"}
    # at t = 0 every box is a singleton
    first = [e for e in rep.estimates if e.t == 0.0 and e.quantity == "deficiency n=100 K=10"]
    assert first[0].value == pytest.approx(0.9)


def test_entrance_profile_rejects_small_n():
    with pytest.raises(ValueError):
        entrance_profile(Params(0.0, 1.0), [50], [0.0], 100, K_list=(10, 100))


def test_pd_starts():
    starts = pd_starts(P, N, 5, seed=8, truncation=2000)
    assert len(starts) == 5 and all(s.n == N for s in starts)
    assert starts == pd_starts(P, N, 5, seed=8, truncation=2000)


def test_stationarity_passes_and_wrong_params_fail(clock):
    ens_kwargs = dict(horizon=0.5, replicates=300, seed=9, truncation=2000)
    ok = stationarity_test(P, N, clock, [2, 3], **ens_kwargs)
    assert ok.verdict, ok.to_text()
    assert any(e.one_sided for e in ok.estimates)
    bad = stationarity_test(P, N, clock, [2, 3], target_params=Params(0.0, 0.7), **ens_kwargs)
    assert bad.test_name == "stationarity_wrong_params" and not bad.verdict


def test_stationarity_checkpoint_validation(clock):
    with pytest.raises(ValueError):
        stationarity_test(P, N, clock, [2], 0.5, 100, checkpoints=[0.1, 0.5])
    with pytest.raises(ValueError):
        stationarity_test(P, N, clock, [1], 0.5, 100)
    with pytest.raises(ValueError):
        stationarity_test(P, N, clock, [2], 0.0, 100)


def test_report_serialisation_is_deterministic(clock):
    a = martingale_test(P, Partition((N,)), clock, 2, [0.0, 0.1], 100, seed=10)
    b = martingale_test(P, Partition((N,)), clock, 2, [0.0, 0.1], 100, seed=10)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["verdict"] in ("pass", "fail")
    assert set(d) == {"test_name", "verdict", "target", "tolerance_rule", "estimates", "extras",
                      "provenance"}
    assert d["provenance"]["seed"] == 10
    text = a.to_text()
    assert text.startswith("martingale_m2: ")


def test_estimate_and_report_handle_nonfinite():
    e = Estimate("x", 0.0, float("nan"), float("inf"), 2, 0.0, 1.0, False)
    rep = TestReport("t", [e], "target", "rule", False, {"v": np.float64(1.5)})
    d = json.loads(rep.to_json())
    assert d["estimates"][0]["value"] == "nan" and d["provenance"]["v"] == 1.5
