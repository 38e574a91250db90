import math

import numpy as np
import pytest

from cocyclelab import (
    DegenerateInputError,
    EmpiricalCDF,
    InfeasibleConditioningError,
    InvalidInputError,
    LatticeWalkSpec,
    SigmaEstimate,
    conditional_cdf,
    default_start,
    dump_cdf_csv,
    dump_tail_csv,
    estimate_sigma2,
    harmonic_fixed_point_report,
    harmonic_v,
    ks_statistic,
    lattice_coin_law,
    point_mass,
    prefactor_ratio,
    rayleigh_cdf,
    rayleigh_median,
    smooth_exponential,
    srw_exit_dp,
    tail_curve,
)

LN2 = math.log(2.0)
COIN = lattice_coin_law()


class TestTailCurve:
    def test_matches_dp_oracle(self):
        grid = list(range(1, 17))
        curve = tail_curve(COIN, default_start(2), LN2, grid, 40000, seed=1)
        tails, _ = srw_exit_dp(LatticeWalkSpec(1, LN2, 16))
        for (n, p, se), exact in zip(curve.points, tails):
            assert abs(p - exact) <= 3.0 * se + 1e-12

    def test_shared_paths_make_tails_exactly_non_increasing(self):
        curve = tail_curve(smooth_exponential(2, 1.0), default_start(2), 2.0,
                           [1, 2, 4, 8, 16, 32, 64], 20000, seed=2)
        ps = [p for _, p, _ in curve.points]
        assert all(b <= a for a, b in zip(ps, ps[1:]))

    def test_thread_invariance(self):
        a = tail_curve(COIN, default_start(2), LN2, [4, 16], 20000, seed=3, threads=1)
        b = tail_curve(COIN, default_start(2), LN2, [4, 16], 20000, seed=3, threads=8)
        assert a.points == b.points

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            tail_curve(COIN, default_start(2), -1.0, [1, 2], 100)
        with pytest.raises(InvalidInputError):
            tail_curve(COIN, default_start(2), 1.0, [4, 2], 100)


class TestHarmonic:
    def test_coin_value_is_start_level(self):
        # optional stopping on the lattice: E(y + S_{n and tau}) = y exactly
        y = 3.0 * LN2
        est = harmonic_v(COIN, default_start(2), y, n_horizon=128,
                         n_paths=40000, seed=4)
        assert est.v_hat == pytest.approx(y, abs=4.0 * est.stderr)
        assert est.stabilized

    def test_growing_walk_flags_non_stabilization(self):
        # 2I never exits and S_n = n ln2, so the truncated value at horizon
        # h is exactly 1 + h ln2 and keeps growing with the horizon
        law = point_mass(2.0 * np.eye(2))
        est = harmonic_v(law, default_start(2), 1.0, n_horizon=50,
                         n_paths=256, seed=5)
        assert est.v_hat == pytest.approx(1.0 + 50.0 * LN2, abs=1e-9)
        assert est.v_half == pytest.approx(1.0 + 25.0 * LN2, abs=1e-9)
        assert not est.stabilized

    def test_fixed_point_identity_on_coin(self):
        rep = harmonic_fixed_point_report(COIN, default_start(2), 3.0 * LN2,
                                          n_paths=16384, inner_horizon=32,
                                          seed=6, n_outer=128)
        assert rep.residual <= rep.budget
        assert rep.n_outer == 128

    def test_fixed_point_rejects_degenerate_value(self):
        # a walk from tiny y that always exits immediately has V = 0
        law = point_mass(0.5 * np.eye(2))
        with pytest.raises(DegenerateInputError):
            harmonic_fixed_point_report(law, default_start(2), 0.1,
                                        n_paths=512, inner_horizon=8, seed=7)


class TestPrefactorRatio:
    def _tail_and_v(self):
        curve = tail_curve(COIN, default_start(2), 3.0 * LN2, [256], 40000, seed=8)
        v = harmonic_v(COIN, default_start(2), 3.0 * LN2, n_horizon=128,
                       n_paths=40000, seed=9)
        return curve, v

    def test_ratio_near_one_on_coin(self):
        curve, v = self._tail_and_v()
        sigma = estimate_sigma2(COIN, default_start(2), n=2048, n_reps=1024,
                                method="batch-variance", seed=10)
        rows = prefactor_ratio(curve, v, sigma)
        n, ratio, se = rows[-1]
        assert n == 256
        assert ratio == pytest.approx(1.0, abs=max(4.0 * se, 0.1))

    def test_degenerate_sigma_rejected(self):
        curve, v = self._tail_and_v()
        zero = SigmaEstimate(sigma2=0.0, method="batch-variance", truncation=0,
                             stderr=0.0, degenerate=True, seed=0)
        with pytest.raises(InvalidInputError):
            prefactor_ratio(curve, v, zero)


class TestConditional:
    def test_exact_count_and_sorted(self):
        sigma = SigmaEstimate(sigma2=LN2 * LN2, method="batch-variance",
                              truncation=0, stderr=0.0, seed=0)
        cdf = conditional_cdf(COIN, default_start(2), 2.0 * LN2, 64, 500,
                              sigma, seed=11)
        assert cdf.n == 500
        assert cdf.sorted_samples.shape == (500,)
        assert np.all(np.diff(cdf.sorted_samples) >= 0.0)
        assert np.all(cdf.sorted_samples > 0.0)

    def test_thread_invariance(self):
        sigma = SigmaEstimate(sigma2=LN2 * LN2, method="batch-variance",
                              truncation=0, stderr=0.0, seed=0)
        a = conditional_cdf(COIN, default_start(2), 2.0 * LN2, 32, 300, sigma,
                            seed=12, threads=1)
        b = conditional_cdf(COIN, default_start(2), 2.0 * LN2, 32, 300, sigma,
                            seed=12, threads=8)
        assert np.array_equal(a.sorted_samples, b.sorted_samples)

    def test_cap_raises_with_rate(self):
        sigma = SigmaEstimate(sigma2=LN2 * LN2, method="batch-variance",
                              truncation=0, stderr=0.0, seed=0)
        with pytest.raises(InfeasibleConditioningError):
            conditional_cdf(COIN, default_start(2), LN2, 64, 10**6, sigma,
                            seed=13, max_paths=2**14)

    def test_zero_acceptance_raises_early(self):
        # a walk that always dies by step 2 can never satisfy tau > 8
        law = point_mass(0.5 * np.eye(2))
        sigma = SigmaEstimate(sigma2=1.0, method="batch-variance",
                              truncation=0, stderr=0.0, seed=0)
        with pytest.raises(InfeasibleConditioningError) as err:
            conditional_cdf(law, default_start(2), 1.0, 8, 10, sigma, seed=14)
        assert err.value.rate == 0.0


class TestKS:
    def test_single_sample_at_median_gives_half(self):
        cdf = EmpiricalCDF(np.array([rayleigh_median()]), 1)
        assert ks_statistic(cdf, rayleigh_cdf) == pytest.approx(0.5, abs=1e-12)

    def test_perfect_grid_is_small(self):
        # quantiles at (i - 1/2)/n give the minimal possible distance 1/(2n)
        n = 128
        q = (np.arange(1, n + 1) - 0.5) / n
        samples = np.sort(np.sqrt(-2.0 * np.log1p(-q)))
        cdf = EmpiricalCDF(samples, n)
        assert ks_statistic(cdf, rayleigh_cdf) == pytest.approx(0.5 / n, abs=1e-10)

    def test_empirical_cdf_evaluation(self):
        cdf = EmpiricalCDF(np.array([1.0, 2.0, 3.0]), 3)
        assert cdf(0.5) == 0.0
        assert cdf(1.0) == pytest.approx(1.0 / 3.0)
        assert cdf(2.5) == pytest.approx(2.0 / 3.0)
        assert cdf(9.0) == 1.0


def test_csv_dumps(tmp_path):
    curve = tail_curve(COIN, default_start(2), LN2, [1, 2], 1000, seed=15)
    tail_path = tmp_path / "tail.csv"
    dump_tail_csv(tail_path, curve)
    assert tail_path.read_text().startswith("n,p_hat,stderr")
    cdf = EmpiricalCDF(np.array([0.5, 1.5]), 2)
    cdf_path = tmp_path / "cdf.csv"
    dump_cdf_csv(cdf_path, cdf)
    lines = cdf_path.read_text().strip().split("\n")
    assert lines[0] == "sample,cdf"
    assert len(lines) == 3
