import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm, truncnorm

from shiftiv.estimator import ShiftSpec, estimate_if, shift_terms
from shiftiv.simlab import (KennedyDGP, PositivityDGP, corrupt, count_violations, coverage_study,
                            gen_kennedy, gen_positivity, perturb, rate_study, rep_rng,
                            truncnorm_inverse_cdf, truth_recovery, violation_regions)


@pytest.fixture(scope="module")
def big_kennedy():
    return gen_kennedy(KennedyDGP(), 200000, np.random.default_rng(123))


def test_treatment_rate_half():
    data, _ = gen_kennedy(KennedyDGP(), 100000, np.random.default_rng(0))
    assert abs(data.a.mean() - 0.5) < 0.005


def test_covariate_layout():
    data, _ = gen_kennedy(KennedyDGP(), 10, np.random.default_rng(0))
    assert data.d == 4 and data.covariate_names == ("x1", "x2", "x3", "x4")


def test_oracle_lambda_matches_conditional_frequency(big_kennedy):
    data, oracle = big_kennedy
    near = np.abs(data.z) < 0.05
    assert abs(data.a[near].mean() - 0.5) < 0.02
    assert oracle.lam(0.0, np.zeros((1, 4)))[0] == 0.5


@pytest.mark.parametrize("z0", [-1.5, 0.7, 2.0])
def test_oracle_regressions_match_local_means(big_kennedy, z0):
    data, oracle = big_kennedy
    near = np.abs(data.z - z0) < 0.05
    assert abs(data.a[near].mean() - norm.cdf(z0)) < 0.03
    assert abs(data.y[near].mean() - 2 * norm.cdf(z0)) < 0.1


def test_oracle_density_moments(big_kennedy):
    data, oracle = big_kennedy
    resid = data.z - data.x @ np.array([1, 1, -1, -1.0])
    assert abs(resid.var() - 2.0) < 0.03
    assert oracle.pi.sigma == pytest.approx(math.sqrt(2))


def test_sd_reading_is_runnable():
    data, oracle = gen_kennedy(KennedyDGP(z_noise_variance=4.0), 50000, np.random.default_rng(1))
    resid = data.z - data.x @ np.array([1, 1, -1, -1.0])
    assert abs(resid.std() - 2.0) < 0.03
    rec, _ = estimate_if(data, oracle, None, ShiftSpec(1.0))
    assert abs(rec.psi_hat - 2) < 4 * rec.se


def test_null_effect_dgp():
    # same draws with and without the effect: Y differs by exactly psi * A
    null, _ = gen_kennedy(KennedyDGP(psi_true=0.0), 1000, np.random.default_rng(0))
    full, _ = gen_kennedy(KennedyDGP(psi_true=2.0), 1000, np.random.default_rng(0))
    np.testing.assert_array_equal(null.a, full.a)
    np.testing.assert_allclose(full.y - null.y, 2.0 * full.a, atol=1e-12)


def test_homogeneous_across_deltas():
    data, oracle = gen_kennedy(KennedyDGP(), 20000, np.random.default_rng(7))
    recs = {d: estimate_if(data, oracle, None, ShiftSpec(d)) for d in (0.5, 1, 2, 4)}
    ds = list(recs)
    for i, a in enumerate(ds):
        for b in ds[i + 1:]:
            (ra, pa), (rb, pb) = recs[a], recs[b]
            # influence columns share rows, so the joint SE uses their difference
            se = np.std(pa - pb, ddof=1) / np.sqrt(data.n)
            assert abs(ra.psi_hat - rb.psi_hat) < 3 * se


def test_generators_deterministic():
    a, _ = gen_kennedy(KennedyDGP(), 50, rep_rng(5, 1, 2))
    b, _ = gen_kennedy(KennedyDGP(), 50, rep_rng(5, 1, 2))
    np.testing.assert_array_equal(a.y, b.y)
    p, q = gen_positivity(100, 3), gen_positivity(100, 3)
    np.testing.assert_array_equal(p.z, q.z)


# -- perturbation -----------------------------------------------------------

def test_perturb_infinite_k_is_identity():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    assert perturb(oracle, 1000, math.inf, 0) is oracle


def test_perturb_same_seed_same_evaluators():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    z, x = np.linspace(-3, 3, 13), np.zeros((13, 4))
    a, b = perturb(oracle, 500, 3, 42), perturb(oracle, 500, 3, 42)
    np.testing.assert_array_equal(a.mu(z, x), b.mu(z, x))
    np.testing.assert_array_equal(a.raw_ratio(z, 1.0, x), b.raw_ratio(z, 1.0, x))


def test_perturb_is_a_fixed_function():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    m = perturb(oracle, 500, 3, 1)
    z, x = np.array([0.3, 0.3]), np.zeros((2, 4))
    v = m.mu(z, x)
    assert v[0] == v[1] == m.mu(np.array([0.3]), np.zeros((1, 4)))[0]


def test_perturb_rms_matches_noise_law():
    # err(z) ~ N(z, 1) at each z, scaled by n^(-1/2): RMS = sqrt(1 + z^2) / 100
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    z = np.linspace(-1, 1, 9)
    x = np.zeros((9, 4))
    errs = np.array([perturb(oracle, 10000, 2, s).mu(z, x) - oracle.mu(z, x) for s in range(4000)])
    rms = np.sqrt(np.mean(errs ** 2, axis=0))
    np.testing.assert_allclose(rms, np.sqrt(1 + z ** 2) / 100, rtol=0.05)


def test_perturb_doubling_n_shrinks_by_root_two():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    z, x = np.linspace(-2, 2, 21), np.zeros((21, 4))

    def rms(n):
        e = np.array([perturb(oracle, n, 2, [9, s]).lam(z, x) - oracle.lam(z, x) for s in range(2000)])
        return np.sqrt(np.mean(e ** 2))

    assert rms(5000) / rms(10000) == pytest.approx(math.sqrt(2), rel=0.05)


def test_perturb_density_mode_floor():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    for s in range(20):
        m = perturb(oracle, 10, 2, s, pi_mode="density")
        assert np.all(m.pi(np.array([-50.0, 0.0, 50.0]), np.zeros((3, 4))) >= 1e-6)


def test_perturb_ratio_mode_scales_ratio():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    m = perturb(oracle, 100, 2, 3)
    z, x = np.array([0.2]), np.zeros((1, 4))
    e_down, e_up = m.ratio_noise
    base = oracle.raw_ratio(z, -1.0, x)
    assert m.raw_ratio(z, -1.0, x)[0] == pytest.approx(base[0] * max(1 + e_down * 0.1, 0))
    assert m.raw_ratio(z, 0.0, x)[0] == 1.0


def test_corrupt_blocks_change_only_their_block():
    oracle = gen_kennedy(KennedyDGP(), 1)[1]
    z, x = np.array([-2.0, -0.5, 0.0, 1.0, 2.0]), np.ones((5, 4))  # the bias vanishes at z = -1
    r = corrupt(oracle, "regressions")
    p = corrupt(oracle, "pi")
    assert r.pi is oracle.pi and p.mu is oracle.mu and p.lam is oracle.lam
    assert np.all(r.mu(z, x) != oracle.mu(z, x))
    assert np.all(p.pi(z, x) != oracle.pi(z, x))
    with pytest.raises(ValueError):
        corrupt(oracle, "both")


# -- studies ----------------------------------------------------------------

def test_rate_study_shape_and_determinism():
    kw = dict(ns=[200, 400], ks=[2, 4], deltas=[1.0, 2.0], reps=5, seed=1)
    a = rate_study(**kw)
    b = rate_study(**kw, threads=3)
    assert len(a) == 2 * 2 * 2 * 2
    assert set(a.estimator) == {"plugin", "if"}
    assert a.equals(b)
    assert {"mean_bias", "emp_sd", "mean_se", "rmse", "n_ok", "n_failed"} <= set(a.columns)
    with pytest.raises(ValueError):
        rate_study(ns=[100], ks=[2], deltas=[1.0], reps=1)


def test_truth_recovery_table():
    df = truth_recovery(n=500, reps=4, deltas=[1.0, 2.0], seed=0)
    assert len(df) == 8 and list(df.columns) == ["rep", "delta", "psi_hat", "se"]


def test_coverage_at_half_level():
    df = coverage_study(n=500, reps=300, delta_grid=(1.0,), level=0.5, seed=2, b=200)
    assert abs(df.pointwise_coverage.iloc[0] - 0.5) < 0.07
    with pytest.raises(ValueError):
        coverage_study(reps=10)


def test_coverage_uniform_at_least_pointwise():
    df = coverage_study(n=300, reps=100, delta_grid=(0.5, 1.0, 2.0), seed=5, b=200)
    assert np.all(df.uniform_coverage >= df.pointwise_coverage)
    assert 0 <= df.attrs["homogeneity_reject_rate"] <= 1


# -- positivity -------------------------------------------------------------

def test_positivity_bounds_respected():
    s = gen_positivity(20000, 0)
    x0, x1 = s.z[s.x == 0], s.z[s.x == 1]
    assert x0.min() >= -3 and x0.max() <= 1
    assert x1.min() >= -1 and x1.max() <= 3


def test_positivity_conditional_mean():
    s = gen_positivity(20000, 1)
    assert abs(s.z[s.x == 1].mean() - 1) < 0.05


@settings(max_examples=40)
@given(st.floats(0, 1, exclude_min=True, exclude_max=True), st.sampled_from([0, 1]))
def test_inverse_cdf_matches_scipy(u, x):
    mean, lo, hi = 2 * x - 1.0, -x - 3.0 * (1 - x), 3.0 * x + (1 - x)
    ours = truncnorm_inverse_cdf(np.array([u]), mean, 0.5, lo, hi)[0]
    ref = truncnorm.ppf(u, (lo - mean) / 0.5, (hi - mean) / 0.5, loc=mean, scale=0.5)
    assert ours == pytest.approx(ref, abs=1e-9)


def test_violation_counts():
    s = gen_positivity(5000, 0)
    usual, shift = count_violations(s, 0.1)
    assert usual == 5000
    assert shift < 5
    assert count_violations(s, 4.5) == (5000, 5000)
    with pytest.raises(ValueError):
        count_violations(s, 0.0)


def test_violation_expected_rate():
    # P(Z - 0.1 < a or Z + 0.1 > b) for one group, evaluated from the truncated normal law
    lo, hi, mean, sd = -3.0, 1.0, -1.0, 0.5
    a, b = (lo - mean) / sd, (hi - mean) / sd
    p = truncnorm.cdf(lo + 0.1, a, b, mean, sd) + truncnorm.sf(hi - 0.1, a, b, mean, sd)
    hits = sum(count_violations(gen_positivity(5000, s), 0.1)[1] for s in range(200))
    # both groups have the same violation probability by symmetry
    assert abs(hits / (200 * 5000) - p) < 5 * math.sqrt(p / (200 * 5000))


def test_violation_regions():
    r = violation_regions(gen_positivity(100, 0), 0.1)
    assert r[1]["usual"] == [(-3.0, -1.0)]
    assert r[0]["usual"] == [(1.0, 3.0)]
    assert r[0]["shift"][0] == (-3.0, pytest.approx(-2.9))


def test_positivity_dgp_support():
    assert PositivityDGP().marginal_support == (-3.0, 3.0)
