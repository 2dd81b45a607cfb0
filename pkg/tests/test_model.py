import numpy as np
import pytest

from conftest import random_hyper, random_model, scaled_gradient_error
from decgp.kernels import BasisSet, kernel_block
from decgp.model import (DecoupledModel, PredictiveMoments, elbo, elbo_and_grad,
                         ell_gaussian, ell_gaussian_grads, ell_monte_carlo,
                         gaussian_log_density, grad_ell, grad_kl, kl_general,
                         kl_normal_prior, model_from_params,
                         model_params, predict, to_canonical)
from decgp.oracles import finite_difference


def normal_measure(hyper):
    return DecoupledModel(alpha=BasisSet.empty(hyper.dim), a=np.zeros(0),
                          beta=BasisSet.empty(hyper.dim), L=np.zeros((0, 0)),
                          hyper=hyper, log_noise=0.0)


class TestPredict:
    def test_zero_coefficients_give_zero_mean(self):
        rng = np.random.default_rng(0)
        model = random_model(rng)
        model.a = np.zeros_like(model.a)
        moments = predict(model, rng.normal(size=(9, 2)))
        assert np.allclose(moments.mean, 0.0)

    def test_zero_L_gives_prior_variance(self):
        rng = np.random.default_rng(1)
        model = random_model(rng)
        model.L = np.zeros_like(model.L)
        moments = predict(model, rng.normal(size=(6, 2)))
        assert np.allclose(moments.variance, model.hyper.amplitude ** 2, atol=1e-9)

    def test_matches_dense_inverse_evaluation(self):
        rng = np.random.default_rng(2)
        model = random_model(rng, m_alpha=5, m_beta=3)
        X = rng.normal(size=(11, 2))
        moments = predict(model, X)

        kxa = kernel_block(model.alpha, X, model.hyper, "cross").values.T
        mean = kxa @ model.a
        kxb = kernel_block(model.beta, X, model.hyper, "cross").values.T
        kb = kernel_block(model.beta, model.beta, model.hyper, "basis").values
        kb = kb + 1e-8 * model.hyper.amplitude ** 2 * np.eye(3)
        B = np.tril(model.L) @ np.tril(model.L).T
        R = np.linalg.inv(np.linalg.inv(B + 1e-12 * np.eye(3)) + kb)
        var = model.hyper.amplitude ** 2 - np.einsum("ij,jk,ik->i", kxb, R, kxb)
        assert np.allclose(moments.mean, mean, atol=1e-12)
        assert np.allclose(moments.variance, var, atol=1e-7)

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            model = random_model(rng, m_alpha=6, m_beta=4)
            v = predict(model, rng.normal(size=(30, 2))).variance
            assert np.all(v >= 0.0)
            assert np.all(v <= model.hyper.amplitude ** 2 + 1e-9)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        model = random_model(rng)
        with pytest.raises(ValueError):
            predict(model, rng.normal(size=(4, 3)))
        with pytest.raises(ValueError):
            predict(model, np.zeros((0, 2)))


class TestKL:
    def test_zero_parameters_give_zero(self):
        rng = np.random.default_rng(5)
        model = random_model(rng)
        model.a = np.zeros_like(model.a)
        model.L = np.zeros_like(model.L)
        assert kl_normal_prior(model) == pytest.approx(0.0, abs=1e-12)

    def test_no_covariance_basis_reduces_to_quadratic(self):
        rng = np.random.default_rng(6)
        model = random_model(rng, m_beta=0)
        ka = kernel_block(model.alpha, model.alpha, model.hyper, "basis").values
        assert kl_normal_prior(model) == pytest.approx(0.5 * model.a @ ka @ model.a, abs=1e-12)

    def test_nonnegative_on_random_models(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            model = random_model(rng, m_alpha=int(rng.integers(1, 7)),
                                 m_beta=int(rng.integers(0, 5)))
            assert kl_normal_prior(model) >= -1e-9

    def test_general_kl_of_identical_measures_is_zero(self):
        rng = np.random.default_rng(8)
        model = random_model(rng)
        assert kl_general(model, model) == pytest.approx(0.0, abs=1e-10)

    def test_general_kl_with_normal_prior_reduces(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            hyper = random_hyper(rng, 2)
            q = random_model(rng, hyper=hyper)
            p = normal_measure(hyper)
            assert abs(kl_general(q, p) - kl_normal_prior(q)) <= 1e-10

    def test_general_kl_requires_shared_kernel(self):
        rng = np.random.default_rng(10)
        q = random_model(rng)
        p = random_model(rng)
        with pytest.raises(ValueError):
            kl_general(q, p)


class TestEllGaussian:
    def test_zero_residual_zero_variance_calibrated_noise(self):
        moments = PredictiveMoments(mean=np.array([1.5]), variance=np.zeros(1))
        value = ell_gaussian(moments, np.array([1.5]), np.log(1.0 / (2.0 * np.pi)))
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        moments = PredictiveMoments(mean=np.zeros(1), variance=np.ones(1))
        value = ell_gaussian(moments, np.ones(1), 0.0)
        assert value == pytest.approx(-0.5 * np.log(2.0 * np.pi) - 1.0, abs=1e-12)

    def test_additivity(self):
        single = PredictiveMoments(mean=np.array([0.2]), variance=np.array([0.7]))
        many = PredictiveMoments(mean=np.full(9, 0.2), variance=np.full(9, 0.7))
        one = ell_gaussian(single, np.array([1.1]), -0.3)
        assert ell_gaussian(many, np.full(9, 1.1), -0.3) == pytest.approx(9 * one, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        moments = PredictiveMoments(mean=np.zeros(3), variance=np.ones(3))
        with pytest.raises(ValueError):
            ell_gaussian(moments, np.zeros(4), 0.0)


class TestEllMonteCarlo:
    def test_within_three_standard_errors_of_closed_form(self):
        rng = np.random.default_rng(11)
        moments = PredictiveMoments(mean=rng.normal(size=6),
                                    variance=rng.uniform(0.2, 1.5, size=6))
        y = rng.normal(size=6)
        log_noise = 0.1
        value, _, _ = ell_monte_carlo(moments, y, gaussian_log_density(log_noise),
                                      100_000, np.random.default_rng(0))
        closed = ell_gaussian(moments, y, log_noise)
        # per-term variance of the Gaussian log-density under q is closed form
        sigma2 = np.exp(log_noise)
        resid2 = (y - moments.mean) ** 2
        var_terms = (4.0 * resid2 * moments.variance + 2.0 * moments.variance ** 2) / (4.0 * sigma2 ** 2)
        se = np.sqrt(var_terms.sum() / 100_000)
        assert abs(value - closed) <= 3.0 * se

    def test_same_seed_is_bit_identical(self):
        rng = np.random.default_rng(12)
        moments = PredictiveMoments(mean=rng.normal(size=4),
                                    variance=rng.uniform(0.5, 2.0, size=4))
        y = rng.normal(size=4)
        out1 = ell_monte_carlo(moments, y, gaussian_log_density(0.0), 500,
                               np.random.default_rng(99))
        out2 = ell_monte_carlo(moments, y, gaussian_log_density(0.0), 500,
                               np.random.default_rng(99))
        assert out1[0] == out2[0]
        assert np.array_equal(out1[1], out2[1])
        assert np.array_equal(out1[2], out2[2])

    def test_degenerate_variance_collapses_to_plugin_density(self):
        moments = PredictiveMoments(mean=np.array([0.4]), variance=np.array([1e-12]))
        y = np.array([1.0])
        value, _, _ = ell_monte_carlo(moments, y, gaussian_log_density(0.0), 2000,
                                      np.random.default_rng(1))
        plugin = gaussian_log_density(0.0)(y, moments.mean)[0]
        assert value == pytest.approx(plugin, abs=1e-4)

    def test_invalid_inputs_rejected(self):
        moments = PredictiveMoments(mean=np.zeros(2), variance=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ell_monte_carlo(moments, np.zeros(2), gaussian_log_density(0.0), 10,
                            np.random.default_rng(0))
        ok = PredictiveMoments(mean=np.zeros(2), variance=np.ones(2))
        with pytest.raises(ValueError):
            ell_monte_carlo(ok, np.zeros(2), gaussian_log_density(0.0), 0,
                            np.random.default_rng(0))


class TestGradients:
    def test_zero_a_gives_zero_mean_gradient(self):
        rng = np.random.default_rng(13)
        model = random_model(rng)
        model.a = np.zeros_like(model.a)
        assert np.allclose(grad_kl(model).d_a, 0.0)

    def test_zero_L_gives_zero_L_gradient(self):
        rng = np.random.default_rng(14)
        model = random_model(rng)
        model.L = np.zeros_like(model.L)
        assert np.allclose(grad_kl(model).d_L, 0.0)

    def test_kl_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(5):
            model = random_model(rng, m_alpha=int(rng.integers(2, 6)),
                                 m_beta=int(rng.integers(1, 4)))
            analytic = grad_kl(model).as_dict()
            reference = finite_difference(
                lambda p: kl_normal_prior(model_from_params(p)), model_params(model))
            assert scaled_gradient_error(analytic, reference) <= 1e-4

    def test_zero_moment_gradients_give_zero(self):
        rng = np.random.default_rng(16)
        model = random_model(rng)
        X = rng.normal(size=(7, 2))
        g = grad_ell(model, X, np.zeros(7), np.zeros(7)).as_dict()
        assert all(np.allclose(v, 0.0) for v in g.values())

    def test_amplitude_gradient_identity(self):
        rng = np.random.default_rng(17)
        model = random_model(rng)
        X = rng.normal(size=(9, 2))
        d_mean, d_variance = rng.normal(size=9), rng.normal(size=9)
        moments = predict(model, X)
        g = grad_ell(model, X, d_mean, d_variance)
        expected = moments.mean @ d_mean + 2.0 * moments.variance @ d_variance
        assert g.d_log_amplitude == pytest.approx(expected, rel=1e-9)

    def test_ell_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        for _ in range(5):
            model = random_model(rng, m_alpha=int(rng.integers(2, 6)),
                                 m_beta=int(rng.integers(1, 4)))
            X = rng.normal(size=(6, 2))
            y = rng.normal(size=6)
            moments = predict(model, X)
            d_mean, d_variance, d_log_noise = ell_gaussian_grads(moments, y, model.log_noise)
            analytic = grad_ell(model, X, d_mean, d_variance, d_log_noise=d_log_noise).as_dict()

            def ell_of(p):
                m = model_from_params(p)
                return ell_gaussian(predict(m, X), y, m.log_noise)

            reference = finite_difference(ell_of, model_params(model))
            assert scaled_gradient_error(analytic, reference) <= 1e-4

    def test_column_sampling_is_unbiased_over_all_index_sets(self):
        from itertools import combinations

        rng = np.random.default_rng(19)
        model = random_model(rng, m_alpha=5, m_beta=2)
        exact = grad_kl(model).d_a
        sets = list(combinations(range(5), 2))
        mean_est = sum(grad_kl(model, columns=np.array(s)).d_a for s in sets) / len(sets)
        assert np.allclose(mean_est, exact, atol=1e-12)

    def test_column_mode_rejects_empty_index_set(self):
        rng = np.random.default_rng(20)
        model = random_model(rng)
        with pytest.raises(ValueError):
            grad_kl(model, columns=np.array([], dtype=int))

    def test_mean_gradient_independent_of_covariance_parameters(self):
        # with fixed prediction-side blocks, d_a does not react to L
        rng = np.random.default_rng(21)
        model = random_model(rng)
        X = rng.normal(size=(8, 2))
        y = rng.normal(size=8)
        _, g1 = elbo_and_grad(model, X, y)
        other = model_params(model)
        other["L"] = np.tril(rng.normal(size=other["L"].shape))
        _, g2 = elbo_and_grad(model_from_params(other), X, y)
        assert np.allclose(g1.d_a, g2.d_a, atol=1e-12)


class TestElbo:
    def test_prior_posterior_has_zero_kl(self):
        rng = np.random.default_rng(22)
        model = random_model(rng)
        model.a = np.zeros_like(model.a)
        model.L = np.zeros_like(model.L)
        X = rng.normal(size=(5, 2))
        y = rng.normal(size=5)
        moments = predict(model, X)
        expected = (20 / 5) * ell_gaussian(moments, y, model.log_noise)
        assert elbo(model, X, y, 20) == pytest.approx(expected, rel=1e-12)

    def test_full_batch_value_invariant_to_ordering(self):
        rng = np.random.default_rng(23)
        model = random_model(rng)
        X = rng.normal(size=(12, 2))
        y = rng.normal(size=12)
        perm = rng.permutation(12)
        assert elbo(model, X, y) == pytest.approx(elbo(model, X[perm], y[perm]), rel=1e-12)

    def test_n_total_smaller_than_batch_rejected(self):
        rng = np.random.default_rng(24)
        model = random_model(rng)
        with pytest.raises(ValueError):
            elbo(model, rng.normal(size=(5, 2)), rng.normal(size=5), 3)


class TestCanonicalForm:
    def coupled_model(self, rng, m=6):
        hyper = random_hyper(rng, 2)
        Z = rng.normal(size=(m, 2))
        logc = 0.2 * rng.normal(size=(m, 2))
        return DecoupledModel(alpha=BasisSet(Z, logc), a=rng.normal(size=m),
                              beta=BasisSet(Z.copy(), logc.copy()),
                              L=np.tril(0.5 * rng.normal(size=(m, m))),
                              hyper=hyper, log_noise=0.0)

    def test_zero_a_gives_zero_canonical_mean(self):
        rng = np.random.default_rng(25)
        model = self.coupled_model(rng)
        model.a = np.zeros_like(model.a)
        m_tilde, _ = to_canonical(model)
        assert np.allclose(m_tilde, 0.0)

    def test_zero_L_gives_prior_canonical_covariance(self):
        rng = np.random.default_rng(26)
        model = self.coupled_model(rng)
        model.L = np.zeros_like(model.L)
        _, s_tilde = to_canonical(model)
        kz = kernel_block(model.beta, model.beta, model.hyper, "basis").values
        assert np.allclose(s_tilde, kz, atol=1e-12)

    def test_shared_basis_reconstruction_matches_predict(self):
        rng = np.random.default_rng(27)
        model = self.coupled_model(rng)
        m_tilde, s_tilde = to_canonical(model)
        kz = kernel_block(model.beta, model.beta, model.hyper, "basis").values
        X = rng.normal(size=(10, 2))
        kxz = kernel_block(model.beta, X, model.hyper, "cross").values.T
        mean = kxz @ np.linalg.solve(kz, m_tilde)
        inner = np.linalg.solve(kz, np.linalg.solve(kz, s_tilde - kz).T)
        var = model.hyper.amplitude ** 2 + np.einsum("ij,jk,ik->i", kxz, inner, kxz)
        moments = predict(model, X)
        assert np.allclose(moments.mean, mean, atol=1e-9)
        assert np.allclose(moments.variance, var, atol=1e-9)

    def test_differing_bases_rejected(self):
        rng = np.random.default_rng(28)
        model = random_model(rng, m_alpha=4, m_beta=4)
        with pytest.raises(ValueError):
            to_canonical(model)
