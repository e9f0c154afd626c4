import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from homog.errors import StatisticalPowerError, ValidationError
from homog.langevin_core import DriftSpec, ModelParams
from homog.mc_estimator import (FunctionalKind, ProjectionFunctional, ergodicity_decay,
                                martingale_decomposition_check, msd_diffusivity, msd_slopes,
                                projection_distance, projection_distance_ci, rate_fit,
                                wasserstein_1d, wasserstein_empirical)
from homog.presets import cosine_gradient
from homog.sde_integrator import EnsembleResult, InitialLaw, IntegratorConfig, run_ensemble


def synthetic_ensemble(rng, cov, paths, times, eps=1.0, seed=0):
    """Brownian paths with covariance ``cov`` recorded at ``times``."""
    cov = np.atleast_2d(cov)
    n = cov.shape[0]
    L = np.linalg.cholesky(cov)
    dt = np.diff(np.concatenate([[0.0], times]))
    inc = rng.standard_normal((paths, len(times), n)) * np.sqrt(dt)[None, :, None]
    x = np.concatenate([np.zeros((paths, 1, n)), np.cumsum(inc @ L.T, axis=1)], axis=1)
    t = np.concatenate([[0.0], times])
    cfg = IntegratorConfig(0.01, float(t[-1]), seed=seed, path_count=paths)
    zeros = np.zeros_like(x)
    return EnsembleResult(t, x, zeros, zeros, eps, np.zeros(n), ModelParams(1, 1, n), cfg,
                          InitialLaw.FIXED_POINT)


class TestWasserstein:
    def test_point_mass_closed_form(self):
        m, s = 0.7, 1.3
        d = wasserstein_1d(np.full(100_000, m), 0.0, s**2, p=2)
        assert d == pytest.approx(np.sqrt(m**2 + s**2), abs=1e-3)

    def test_translation_invariance(self, rng):
        x = rng.normal(0, 1.5, 5000)
        c = 2.75
        a = wasserstein_1d(x, 0.0, 2.25)
        b = wasserstein_1d(x + c, c, 2.25)
        assert abs(a - b) < 1e-12

    def test_self_distance_small(self, rng):
        assert wasserstein_1d(rng.standard_normal(100_000)) < 0.01

    def test_zero_variance_target(self):
        assert wasserstein_1d([1.0, -1.0], 0.0, 0.0, p=1) == 1.0

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
    def test_deterministic(self, rng, p):
        x = rng.normal(size=100)
        assert wasserstein_1d(x, p=p) == wasserstein_1d(x.copy()[::-1], p=p)

    def test_errors(self):
        with pytest.raises(ValidationError):
            wasserstein_1d([])
        with pytest.raises(ValidationError):
            wasserstein_1d([1.0], variance=-1.0)
        with pytest.raises(ValidationError):
            wasserstein_1d([1.0], p=0.5)
        with pytest.raises(ValidationError):
            wasserstein_empirical([1.0], [1.0, 2.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 2.0, 3.0]))
    def test_metric(self, seed, p):
        g = np.random.default_rng(seed)
        a, b, c = (np.round(g.normal(size=20), 1) for _ in range(3))  # rounding creates ties
        assert wasserstein_empirical(a, b, p) == wasserstein_empirical(b, a, p)
        assert wasserstein_empirical(a, a, p) == 0.0
        assert wasserstein_empirical(a, c, p) <= (wasserstein_empirical(a, b, p)
                                                  + wasserstein_empirical(b, c, p) + 1e-12)


class TestMSD:
    def test_synthetic_diag(self, rng):
        cov = np.diag([2.0, 1.0])
        ens = synthetic_ensemble(rng, cov, 4000, np.linspace(0.1, 1.0, 10))
        est = msd_diffusivity(ens, resamples=300)
        assert est.within(cov)
        assert np.allclose(est.K2, est.K2.T)

    def test_single_time(self, rng):
        ens = synthetic_ensemble(rng, np.eye(2), 500, np.array([0.5, 1.0]))
        est = msd_diffusivity(ens, times=[1.0], resamples=10)
        d = ens.x_eps[:, -1, :]
        cov = d.T @ d / d.shape[0]
        assert np.allclose(est.K2, cov / 1.0, atol=1e-14)

    def test_unbiased_over_repetitions(self):
        cov = np.array([[1.5, 0.3], [0.3, 0.8]])
        g = np.random.default_rng(2024)
        reps = np.array([msd_diffusivity(synthetic_ensemble(g, cov, 400, np.linspace(0.25, 1, 4)),
                                         resamples=2).K2 for _ in range(50)])
        se = reps.std(axis=0, ddof=1) / np.sqrt(50)
        assert np.all(np.abs(reps.mean(axis=0) - cov) <= 1.0 * se)

    def test_flat_preset(self):
        p = ModelParams(1.0, 1.0, 1)
        eps = 0.1
        cfg = IntegratorConfig(0.05, 1 / eps**2, seed=4, path_count=2000)
        ens = run_ensemble(p, DriftSpec.zero(1), cfg, eps, records=4)
        assert msd_diffusivity(ens, resamples=300).within(np.eye(1))

    def test_power_refusal(self, rng):
        ens = synthetic_ensemble(rng, np.eye(1), 99, np.array([1.0]))
        with pytest.raises(StatisticalPowerError):
            msd_diffusivity(ens)

    def test_slopes_shape(self, rng):
        inc = rng.normal(size=(5, 3, 2))
        assert msd_slopes(inc, np.array([1.0, 2.0, 3.0])).shape == (5, 2, 2)


class TestProjection:
    def test_norm_bound(self):
        with pytest.raises(ValidationError):
            ProjectionFunctional.endpoint([0.8, 0.8])
        with pytest.raises(ValidationError):
            ProjectionFunctional([1.0], FunctionalKind.TIME_AVERAGE, [0.7, 0.7])
        ProjectionFunctional.endpoint([0.6, 0.8])

    def test_time_average_weights(self):
        t = np.linspace(0, 2, 9)
        f = ProjectionFunctional.time_average([1.0], t)
        assert f.total_variation == pytest.approx(1.0)
        # Var int_0^T B dt / T = T / 3
        assert f.limit_variance(np.eye(1), t) == pytest.approx(2 / 3, rel=1e-2)

    def test_k_sign_symmetry(self, rng):
        ens = synthetic_ensemble(rng, np.eye(2), 1000, np.array([1.0]))
        k = np.array([0.6, -0.8])
        a = projection_distance(ens, ProjectionFunctional.endpoint(k), np.eye(2))
        b = projection_distance(ens, ProjectionFunctional.endpoint(-k), np.eye(2))
        assert a == pytest.approx(b, abs=1e-12)

    def test_zero_k(self, rng):
        ens = synthetic_ensemble(rng, np.eye(2), 200, np.array([1.0]))
        assert projection_distance(ens, ProjectionFunctional.endpoint([0.0, 0.0]), np.eye(2)) == 0.0

    def test_isotropy(self):
        p = ModelParams(1.0, 1.0, 2)
        eps = 0.2
        cfg = IntegratorConfig(0.05, 1 / eps**2, seed=12, path_count=3000)
        ens = run_ensemble(p, DriftSpec.zero(2), cfg, eps)
        ci = [projection_distance_ci(ens, ProjectionFunctional.endpoint(k), np.eye(2), resamples=200)
              for k in ([1.0, 0.0], [0.0, 1.0])]
        (_, lo1, hi1), (_, lo2, hi2) = ci
        assert lo1 <= hi2 and lo2 <= hi1

    def test_ci_brackets_and_replays(self, rng):
        ens = synthetic_ensemble(rng, np.eye(1), 500, np.array([1.0]), seed=3)
        f = ProjectionFunctional.endpoint([1.0])
        d, lo, hi = projection_distance_ci(ens, f, np.eye(1), resamples=200)
        assert lo <= d <= hi or d < hi
        assert projection_distance_ci(ens, f, np.eye(1), resamples=200) == (d, lo, hi)

    def test_dimension_mismatch(self, rng):
        ens = synthetic_ensemble(rng, np.eye(2), 10, np.array([1.0]))
        with pytest.raises(ValidationError):
            ProjectionFunctional.endpoint([1.0]).project(ens)


class TestRateFit:
    eps = np.array([0.4, 0.2, 0.1, 0.05])

    def test_exact_power_law(self):
        res = rate_fit(self.eps, 0.7 * self.eps**0.5)
        assert res.alpha_hat == pytest.approx(0.5, abs=1e-12)
        assert res.constant == pytest.approx(0.7, rel=1e-12)
        assert res.passed

    def test_flat_distances_fail(self):
        res = rate_fit(self.eps, np.full(4, 0.1), cis=[(0.09, 0.11)] * 4)
        assert not res.passed
        assert res.alpha_hat == pytest.approx(0.0, abs=1e-12)

    def test_non_monotone_fails(self):
        d = np.array([0.4, 0.1, 0.3, 0.02])
        cis = [(v * 0.95, v * 1.05) for v in d]
        res = rate_fit(self.eps, d, cis)
        assert not res.monotone and not res.passed

    def test_overlapping_ci_counts_as_monotone(self):
        d = np.array([0.2, 0.1, 0.11, 0.05])
        cis = [(0.18, 0.22), (0.08, 0.12), (0.09, 0.13), (0.04, 0.06)]
        assert rate_fit(self.eps, d, cis).monotone

    def test_weights_and_ci(self):
        d = 0.5 * self.eps**0.8
        cis = [(v * 0.9, v * 1.1) for v in d]
        res = rate_fit(self.eps, d, cis, sample_sizes=[100] * 4)
        lo, hi = res.alpha_ci
        assert lo < 0.8 < hi
        assert res.verdict()["pass"] is True
        assert set(res.verdict()) >= {"alpha_hat", "ci", "pass"}

    def test_too_few_points(self):
        with pytest.raises(StatisticalPowerError):
            rate_fit([0.4, 0.2], [0.1, 0.05])

    def test_csv(self, tmp_path):
        res = rate_fit(self.eps, self.eps, sample_sizes=[10] * 4)
        res.to_csv(tmp_path / "r.csv", ["seed=1"])
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[:2] == ["# seed=1", "eps,distance,ci_lo,ci_hi,paths"]
        assert len(lines) == 6


class TestMartingale:
    def flat_run(self, paths, eps, records, seed=1):
        p = ModelParams(0.5, 1.0, 1)
        cfg = IntegratorConfig(0.05, 1 / eps**2, seed=seed, path_count=paths)
        ens = run_ensemble(p, DriftSpec.zero(1), cfg, eps, records=records)

        def phi(x, y):
            return np.sqrt(p.tau) * y

        return p, ens, phi

    def test_identity_and_qv(self):
        p, ens, phi = self.flat_run(2000, 0.1, 100)
        rep = martingale_decomposition_check(ens, phi, p, 0.1, np.eye(1), [1.0])
        assert rep.identity_error < 1e-13
        assert abs(rep.qv - rep.qv_target) < 3 * rep.qv_stderr
        assert rep.extrapolations == 0

    def test_flat_corrector_closed_form(self):
        p, ens, phi = self.flat_run(4000, 0.1, 10)
        rep = martingale_decomposition_check(ens, phi, p, 0.1, np.eye(1), [1.0])
        expect = -0.1 * np.sqrt(p.tau) * (ens.y - ens.y[:, :1])
        assert np.allclose(rep.corrector, expect, atol=1e-15)
        # y(T) is in equilibrium N(0, sigma^2/2) from y(0) = 0
        end = rep.corrector[:, -1, 0]
        target = 0.01 * p.tau * 0.5 * p.sigma**2
        assert abs(np.mean(end**2) - target) < 3 * np.std(end**2, ddof=1) / np.sqrt(end.size)

    def test_corrector_fraction_scales_with_eps(self):
        p = ModelParams(1.0, 1.0, 1)
        fracs = []
        for eps, T_final in ((0.9, 0.05), (0.3, 10.0)):
            cfg = IntegratorConfig(0.01, T_final, seed=3, path_count=500)
            ens = run_ensemble(p, DriftSpec.zero(1), cfg, eps, records=5)
            rep = martingale_decomposition_check(ens, lambda x, y: y, p, eps, np.eye(1), [1.0])
            assert rep.identity_error < 1e-13
            fracs.append(rep.corrector_fraction)
        assert fracs[0] > fracs[1]

    def test_extrapolation_counted(self):
        p, ens, phi = self.flat_run(5, 0.5, 4)
        ens.y[0, 1, 0] = 10.0
        rep = martingale_decomposition_check(ens, phi, p, 0.5, np.eye(1), [1.0])
        assert rep.extrapolations == 1

    def test_eps_mismatch(self):
        p, ens, phi = self.flat_run(5, 0.5, 4)
        with pytest.raises(ValidationError):
            martingale_decomposition_check(ens, phi, p, 0.4, np.eye(1), [1.0])


class TestErgodicity:
    def test_constant_observable(self):
        p = ModelParams(1.0, 1.0, 1)
        cfg = IntegratorConfig(0.05, 1.0, seed=1, path_count=50)
        res = ergodicity_decay(lambda x, y: np.ones(x.shape[0]), p, cosine_gradient(), cfg,
                               [[0.0], [1.0]], 1.0, records=5)
        assert np.all(res.curves == 0)
        assert np.all(np.isnan(res.rates)) and res.decaying

    def test_speed_squared_rate(self):
        p = ModelParams(0.5, 1.0, 2)
        cfg = IntegratorConfig(0.01, 1.0, seed=2, path_count=20_000)
        res = ergodicity_decay(lambda x, y: np.sum(y**2, axis=1), p, DriftSpec.zero(2), cfg,
                               [[0.0, 0.0]], p.sigma**2 * p.n / 2, records=20)
        expect = -(p.sigma**2 * p.n / 2) * np.exp(-2 * res.times / p.tau)
        assert np.all(np.abs(res.curves[0] - expect) <= 4 * res.stderr[0] + 1e-12)
        lo, hi = res.rate_cis[0]
        assert lo <= 2 / p.tau <= hi
        assert res.decaying

    def test_cosine_observable(self, cosine_solution):
        from scipy.special import i0, i1
        p = ModelParams(1.0, 1.0, 1)
        # int cos(2 pi x) dmu = -I1(1) / I0(1) for V = 0.5 cos(2 pi x)
        mu_mean = -i1(1.0) / i0(1.0)
        quad, _ = integrate.quad(lambda t: np.cos(2 * np.pi * t) * np.exp(-np.cos(2 * np.pi * t)), 0, 1)
        assert mu_mean == pytest.approx(quad / i0(1.0), rel=1e-10)
        cfg = IntegratorConfig(0.02, 8.0, seed=3, path_count=5000)
        res = ergodicity_decay(lambda x, y: np.cos(2 * np.pi * x[:, 0]), p, cosine_gradient(), cfg,
                               [[0.0]], mu_mean, records=16)
        assert abs(res.curves[0, -1]) < 3 * res.stderr[0, -1]
        assert res.rates[0] > 0

    def test_power_error(self):
        p = ModelParams(1.0, 1.0, 1)
        cfg = IntegratorConfig(0.05, 1.0, seed=1, path_count=3)
        with pytest.raises(StatisticalPowerError):
            ergodicity_decay(lambda x, y: 100 * y[:, 0] ** 3, p, DriftSpec.zero(1), cfg,
                             [[0.0]], 0.0, records=5)
