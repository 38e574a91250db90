import json
import math

import numpy as np
import pytest

from cocyclelab import (
    ChainState,
    InvalidInputError,
    NonConvergenceError,
    ThetaProvider,
    UnsupportedDimensionError,
    default_start,
    discretize_operator,
    dump_grid_csv,
    dump_spectrum_json,
    estimate_lyapunov,
    estimate_theta,
    finite_atomic,
    lattice_coin_law,
    make_group_element,
    martingale_residual,
    martingale_residual_series,
    point_mass,
    poisson_residual,
    projective_point,
    recenter_to_zero_lyapunov,
    rotation_law,
    smooth_exponential,
    spectral_gap,
)

LN2 = math.log(2.0)


def _rot(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


ANISO = finite_atomic([
    (0.5, np.diag([2.0, 0.5]) @ _rot(0.3)),
    (0.5, _rot(0.7) @ np.diag([0.5, 2.0])),
])
# drift of ANISO measured at dev time: estimate_lyapunov(n_steps=20000,
# n_reps=512, seed=303) -> 0.17576562058484074 +- 0.000135
ANISO_GAMMA = 0.17576562058484074
ANISO0 = recenter_to_zero_lyapunov(ANISO, ANISO_GAMMA)


class TestGrid:
    def test_rows_are_stochastic_at_t0(self):
        grid = discretize_operator(smooth_exponential(2, 1.0), 0.0, m_nodes=64,
                                   mc_per_node=500, seed=1)
        sums = grid.matrix.sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-12
        assert np.abs(grid.matrix.imag).max() == 0.0

    def test_coin_rows_touch_at_most_four_nodes(self):
        grid = discretize_operator(lattice_coin_law(), 0.0, m_nodes=64,
                                   mc_per_node=200, seed=1)
        nnz = (np.abs(grid.matrix) > 1e-15).sum(axis=1)
        assert nnz.max() <= 4

    def test_rotation_grid_is_circulant(self):
        # a point-mass rotation shifts every node by the same angle
        grid = discretize_operator(rotation_law(0.7), 0.0, m_nodes=64,
                                   mc_per_node=100, seed=1)
        m = grid.matrix.real
        for i in (1, 13, 40):
            assert np.allclose(np.roll(m[0], i), m[i], atol=1e-12)

    def test_validation(self):
        law = smooth_exponential(2, 1.0)
        with pytest.raises(InvalidInputError):
            discretize_operator(law, 0.0, m_nodes=32)
        with pytest.raises(InvalidInputError):
            discretize_operator(law, 0.9, eta0=0.5)
        with pytest.raises(UnsupportedDimensionError):
            discretize_operator(smooth_exponential(3, 1.0), 0.0)


class TestSpectralGap:
    def test_matches_dense_eigensolver(self):
        """Power iteration + deflation against numpy's full eigendecomposition."""
        for law, seed in ((smooth_exponential(2, 1.0), 2), (ANISO, 3)):
            grid = discretize_operator(law, 0.0, m_nodes=64, mc_per_node=2000,
                                       seed=seed)
            lam, second = spectral_gap(grid)
            ev = np.abs(np.linalg.eigvals(grid.matrix))
            ev.sort()
            assert abs(lam) == pytest.approx(ev[-1], abs=1e-9)
            assert second == pytest.approx(ev[-2], rel=1e-4, abs=1e-6)

    def test_leading_is_one_at_t0(self):
        grid = discretize_operator(smooth_exponential(2, 1.0), 0.0, m_nodes=64,
                                   mc_per_node=1000, seed=4)
        lam, second = spectral_gap(grid)
        assert abs(lam - 1.0) < 1e-10
        assert second < 1.0

    def test_rotation_second_modulus_near_one(self):
        # an isometry mixes nothing: the whole circle of eigenvalues sits
        # near modulus 1, pulled below it only by the interpolation stencil
        grid = discretize_operator(rotation_law(0.7), 0.0, m_nodes=64,
                                   mc_per_node=100, seed=4)
        lam, second = spectral_gap(grid)
        assert abs(lam) == pytest.approx(1.0, abs=1e-10)
        ev = np.abs(np.linalg.eigvals(grid.matrix))
        ev.sort()
        assert second == pytest.approx(ev[-2], abs=5e-3)
        assert second > 0.99

    def test_refinement_stability(self):
        # doubling the grid moves the second modulus by under 5%
        law = ANISO
        vals = []
        for m_nodes in (64, 128):
            grid = discretize_operator(law, 0.0, m_nodes=m_nodes,
                                       mc_per_node=4000, seed=5)
            vals.append(spectral_gap(grid)[1])
        assert abs(vals[1] - vals[0]) < 0.05 * vals[0]

    def test_twisted_modulus_below_one(self):
        for t in (0.1, 0.3, 0.5):
            grid = discretize_operator(smooth_exponential(2, 1.0), t, m_nodes=64,
                                       mc_per_node=2000, seed=6)
            lam, _ = spectral_gap(grid)
            assert abs(lam) <= 1.0 + 1e-6


class TestTheta:
    def test_coin_sits_at_noise_floor(self):
        # increments are direction-independent: every per-term mean is 0
        est = estimate_theta(lattice_coin_law(), default_start(2),
                             truncation_n=16, reps_per_term=4000, seed=7)
        assert est.floor_limited
        assert est.fit_ratio == 0.0
        assert abs(est.theta) < 4.0 * est.stderr + 1e-12

    def test_rotation_is_exact_zero(self):
        est = estimate_theta(rotation_law(0.7), default_start(2),
                             truncation_n=8, reps_per_term=100, seed=8)
        assert est.theta == pytest.approx(0.0, abs=1e-12)
        assert est.floor_limited

    def test_uncentred_point_mass_has_no_decay(self):
        # constant increments ln2 at every term: the series cannot converge
        with pytest.raises(NonConvergenceError):
            estimate_theta(point_mass(2.0 * np.eye(2)), default_start(2),
                           truncation_n=16, reps_per_term=100, seed=9)

    def test_anisotropic_terms_decay_geometrically(self):
        est = estimate_theta(ANISO0, default_start(2), truncation_n=10,
                             reps_per_term=20000, seed=10)
        assert not est.floor_limited
        assert 0.0 < est.fit_ratio < 1.0
        # early terms dominate late terms
        terms = np.abs(np.array(est.per_term))
        assert terms[:3].max() > 10.0 * terms[-3:].max()

    def test_theta_starts_from_rho(self):
        g0 = make_group_element(np.diag([3.0, 1.0]))
        x = ChainState(g0, projective_point(np.array([1.0, 0.0])))
        est = estimate_theta(rotation_law(0.3), x, truncation_n=4,
                             reps_per_term=100, seed=11)
        assert est.theta == pytest.approx(math.log(3.0), abs=1e-12)

    def test_truncation_validated(self):
        with pytest.raises(InvalidInputError):
            estimate_theta(ANISO0, default_start(2), truncation_n=201)


class TestMartingale:
    def test_coin_residual_bounded_by_cached_noise(self):
        """S - M equals the cached tail-sum difference, so twice the largest
        cached magnitude bounds every residual exactly."""
        provider = ThetaProvider(lattice_coin_law(), truncation_n=24,
                                 reps_per_term=2000, seed=12)
        res = martingale_residual(lattice_coin_law(), default_start(2),
                                  y=5.0, n=100, provider=provider, seed=13)
        cached = provider.observed_tail_sums()
        bound = 2.0 * max(abs(v) for v, _ in cached) + 1e-12
        assert res <= bound

    def test_series_has_no_trend_on_recentred_law(self):
        provider = ThetaProvider(ANISO0, truncation_n=24, reps_per_term=2000,
                                 seed=14)
        slopes = []
        for rep in range(8):
            series = martingale_residual_series(ANISO0, default_start(2), y=5.0,
                                                n=200, provider=provider,
                                                seed=100 + rep)
            k = np.arange(1, series.size + 1)
            slopes.append(np.polyfit(k, series, 1)[0])
        slopes = np.array(slopes)
        ci = 2.36 * slopes.std(ddof=1) / math.sqrt(slopes.size)  # t(7), 95%
        assert abs(slopes.mean()) < ci

    def test_poisson_residual_within_budget(self):
        provider = ThetaProvider(ANISO0, truncation_n=24, reps_per_term=4000,
                                 seed=15)
        rng_states = [default_start(2),
                      ChainState(make_group_element(_rot(0.5)),
                                 projective_point(np.array([0.3, 1.0])))]
        for x in rng_states:
            residual, budget = poisson_residual(ANISO0, x, provider,
                                                n_outer=48, seed=16)
            assert residual <= budget


def test_dumps(tmp_path):
    grid = discretize_operator(lattice_coin_law(), 0.0, m_nodes=64,
                               mc_per_node=100, seed=17)
    lam, second = spectral_gap(grid)
    csv_path = tmp_path / "grid.csv"
    dump_grid_csv(csv_path, grid)
    header = csv_path.read_text().split("\n", 1)[0]
    assert header == "row,col,re,im"
    json_path = tmp_path / "spectrum.json"
    dump_spectrum_json(json_path, grid, lam, second)
    payload = json.loads(json_path.read_text())
    assert payload["m_nodes"] == 64
    assert payload["leading_modulus"] == pytest.approx(1.0, abs=1e-9)
