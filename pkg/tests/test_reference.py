import math

import numpy as np
import pytest

from cocyclelab import (
    DiagnosticError,
    InvalidInputError,
    LatticeWalkSpec,
    bm_exit_band,
    bm_exit_tail,
    dump_oracle_pmf_csv,
    dump_oracle_tail_csv,
    erf,
    erfc,
    normal_cdf,
    rayleigh_cdf,
    rayleigh_median,
    srw_exit_dp,
)

LN2 = math.log(2.0)


class TestErf:
    def test_against_math_erf_on_dense_grid(self):
        # all three rational-approximation regimes plus the far tail
        xs = np.concatenate([
            np.linspace(-6.0, 6.0, 4001),
            np.linspace(-0.47, 0.47, 501),
            np.linspace(3.9, 4.1, 101),
            np.array([-27.0, -26.6, 26.6, 27.0, 1e-12, 0.0]),
        ])
        worst = max(abs(erf(float(x)) - math.erf(float(x))) for x in xs)
        assert worst < 1e-12

    def test_erfc_complement_and_tails(self):
        for x in (-3.0, -0.2, 0.0, 0.7, 2.5, 5.0):
            assert erfc(x) == pytest.approx(1.0 - erf(x), abs=1e-14)
        assert erfc(30.0) == 0.0
        assert erfc(-30.0) == pytest.approx(2.0, abs=1e-15)

    def test_odd_symmetry(self):
        for x in np.linspace(0.0, 5.0, 101):
            assert erf(float(-x)) == pytest.approx(-erf(float(x)), abs=1e-15)

    def test_normal_cdf_special_values(self):
        assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
        assert normal_cdf(1.0) + normal_cdf(-1.0) == pytest.approx(1.0, abs=1e-14)


class TestBrownianExit:
    def test_one_sigma_frozen_value(self):
        # y = sigma sqrt n makes the tail erf(1/sqrt 2) exactly
        assert bm_exit_tail(2.0 * math.sqrt(64.0), 64.0, 2.0) == pytest.approx(
            0.6826894921370859, abs=1e-12
        )

    def test_tail_monotone_in_y_and_n(self):
        assert bm_exit_tail(2.0, 100.0, 1.0) < bm_exit_tail(3.0, 100.0, 1.0)
        assert bm_exit_tail(2.0, 400.0, 1.0) < bm_exit_tail(2.0, 100.0, 1.0)

    def test_tail_validates(self):
        with pytest.raises(InvalidInputError):
            bm_exit_tail(-1.0, 10.0, 1.0)
        with pytest.raises(InvalidInputError):
            bm_exit_tail(1.0, 10.0, 0.0)

    def test_band_covers_tail_when_wide(self):
        y, n, sigma = 2.0, 64.0, 1.0
        wide = bm_exit_band(y, n, 0.0, 50.0 * sigma * math.sqrt(n), sigma)
        assert wide == pytest.approx(bm_exit_tail(y, n, sigma), abs=1e-9)

    def test_band_edge_cases(self):
        y, n, sigma = 2.0, 64.0, 1.0
        assert bm_exit_band(y, n, 1.0, 1.0, sigma) == 0.0
        # negative lower edge is clipped to 0 (the walk is already dead there)
        assert bm_exit_band(y, n, -5.0, 3.0, sigma) == pytest.approx(
            bm_exit_band(y, n, 0.0, 3.0, sigma), abs=1e-12
        )
        with pytest.raises(InvalidInputError):
            bm_exit_band(y, n, 3.0, 1.0, sigma)

    def test_band_is_additive(self):
        y, n, sigma = 1.5, 32.0, 0.8
        edges = [0.0, 0.7, 1.9, 4.2, 11.0]
        total = sum(bm_exit_band(y, n, a, b, sigma) for a, b in zip(edges, edges[1:]))
        assert total == pytest.approx(bm_exit_band(y, n, edges[0], edges[-1], sigma),
                                      abs=1e-10)


class TestRayleigh:
    def test_cdf_values(self):
        assert rayleigh_cdf(0.0) == 0.0
        assert rayleigh_cdf(-1.0) == 0.0
        t = rayleigh_median()
        assert rayleigh_cdf(t) == pytest.approx(0.5, abs=1e-15)
        assert rayleigh_median() == pytest.approx(1.1774100225154747, abs=1e-15)

    def test_cdf_monotone(self):
        ts = np.linspace(0.0, 5.0, 200)
        vals = [rayleigh_cdf(float(t)) for t in ts]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestLatticeDP:
    def test_frozen_small_tails(self):
        tails, pmf = srw_exit_dp(LatticeWalkSpec(1, LN2, 3))
        assert tails == pytest.approx([0.5, 0.5, 0.375])
        levels = dict(pmf)
        assert sum(levels.values()) == pytest.approx(1.0, abs=1e-12)

    def test_survival_is_certain_when_start_exceeds_horizon(self):
        # from level k the walk needs at least k steps to reach 0
        tails, _ = srw_exit_dp(LatticeWalkSpec(9, LN2, 8))
        assert tails == pytest.approx([1.0] * 8)

    def test_tails_non_increasing(self):
        # up to summation roundoff (a few ulp) on the dyadic probabilities
        tails, _ = srw_exit_dp(LatticeWalkSpec(3, LN2, 256))
        assert all(b <= a + 1e-14 for a, b in zip(tails, tails[1:]))

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            LatticeWalkSpec(0, LN2, 8)
        with pytest.raises(InvalidInputError):
            LatticeWalkSpec(1, -1.0, 8)
        with pytest.raises(InvalidInputError):
            LatticeWalkSpec(1, LN2, 2**14 + 1)

    def test_matches_brownian_at_depth(self):
        """Invariance principle: DP tail over Brownian tail near 1 at n = 2^12."""
        n = 4096
        for k in (1, 3):
            tails, _ = srw_exit_dp(LatticeWalkSpec(k, LN2, n))
            bm = bm_exit_tail(k * LN2, float(n), LN2)
            assert tails[-1] / bm == pytest.approx(1.0, abs=0.05)

    def test_step_size_does_not_change_lattice_tail(self):
        # the exit law depends only on the level count, not the physical step
        a, _ = srw_exit_dp(LatticeWalkSpec(2, LN2, 32))
        b, _ = srw_exit_dp(LatticeWalkSpec(2, 0.1, 32))
        assert a == pytest.approx(b, abs=1e-15)


def test_oracle_csv_dumps(tmp_path):
    tails, pmf = srw_exit_dp(LatticeWalkSpec(1, LN2, 8))
    tail_path = tmp_path / "tail.csv"
    dump_oracle_tail_csv(tail_path, tails)
    lines = tail_path.read_text().strip().split("\n")
    assert lines[0] == "n,tail"
    assert len(lines) == 9
    pmf_path = tmp_path / "pmf.csv"
    dump_oracle_pmf_csv(pmf_path, pmf)
    assert pmf_path.read_text().startswith("level,prob")
