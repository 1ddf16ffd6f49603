import math

import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from ebayes.exceptions import DataError, ModelSpecError
from ebayes.gamma_mixture import (
    GammaMixturePrior, digamma_difference, e_step, ecm_fit, fit_general_gamma, fit_gps, fit_kgamma, init_prior,
    log_rising_factorial, nb_log_pmf, nb_mixture_log_marginal,
)
from ebayes.tables import ExpectedCounts, estimate_null_expected_count

from .helpers import make_table, table_and_expected


def random_table(rng, max_size=6):
    """A random table of size at most max_size x max_size with positive reference counts."""
    n_rows, n_cols = rng.integers(2, max_size + 1, size=2)
    means = rng.uniform(0.5, 20.0, size=(n_rows, n_cols))
    means[rng.random((n_rows, n_cols)) < 0.2] *= 5.0
    counts = rng.poisson(means)
    counts[-1, :] += 1
    counts[:, -1] += 1
    return make_table(counts)


class GammaMixturePriorTestCase(SimpleTestCase):
    def test_invalid_priors(self):
        """
        Tests that weights off the simplex and non-positive shapes or scales are rejected.
        """
        with self.assertRaises(ModelSpecError):
            GammaMixturePrior(weights=[0.5, 0.6], shapes=[1, 1], scales=[1, 1])
        with self.assertRaises(ModelSpecError):
            GammaMixturePrior(weights=[1.0], shapes=[0.0], scales=[1.0])
        with self.assertRaises(ModelSpecError):
            GammaMixturePrior(weights=[1.0], shapes=[1.0], scales=[-1.0])
        with self.assertRaises(ModelSpecError):
            GammaMixturePrior(weights=[0.5, 0.5], shapes=[1.0], scales=[1.0, 2.0])

    def test_round_trip(self):
        """
        Tests that to_dict/from_dict keep the parameters.
        """
        prior = GammaMixturePrior(weights=[0.25, 0.75], shapes=[2.0, 3.0], scales=[0.5, 1.5])
        copy = GammaMixturePrior.from_dict(prior.to_dict())
        np.testing.assert_array_equal(copy.scales, prior.scales)
        self.assertAlmostEqual(copy.mean(), 0.25 * 1.0 + 0.75 * 4.5)


class NegativeBinomialTestCase(SimpleTestCase):
    def test_matches_scipy(self):
        """
        Tests that the negative binomial term matches scipy's nbinom with p = 1 / (1 + E h).
        """
        counts = np.array([0.0, 1.0, 7.0, 150.0])
        expected = np.array([0.3, 2.0, 5.5, 80.0])
        shapes = np.array([0.7, 4.0])
        scales = np.array([2.0, 0.25])
        values = nb_log_pmf(counts, expected, shapes, scales)
        for k in range(2):
            theta = 1.0 / (1.0 + expected * scales[k])
            np.testing.assert_allclose(values[:, k], stats.nbinom.logpmf(counts, shapes[k], theta), rtol=1e-10)

    def test_marginal_single_component(self):
        """
        Tests that with one component the log marginal is a sum of negative binomial terms.
        """
        table = make_table([[3, 5], [8, 40]])
        E = estimate_null_expected_count(table, 'marginal')
        prior = GammaMixturePrior(weights=[1.0], shapes=[2.0], scales=[0.5])
        theta = 1.0 / (1.0 + E.values.ravel() * 0.5)
        expected = stats.nbinom.logpmf(table.counts.ravel(), 2.0, theta).sum()
        self.assertAlmostEqual(nb_mixture_log_marginal(table, E, prior), expected, places=9)

    def test_geometric_term(self):
        """
        Tests that r = 1, h = 1, E = 1 gives the geometric probability 1/2 of a zero count,
        for one component and for a mixture of identical components.
        """
        value = nb_log_pmf(np.array([0.0]), np.array([1.0]), np.array([1.0]), np.array([1.0]))
        self.assertAlmostEqual(value[0, 0], np.log(0.5), places=14)
        table = make_table([[0, 0], [0, 0]])
        E = ExpectedCounts(values=np.ones((2, 2)), method='marginal')
        prior = GammaMixturePrior(weights=[0.3, 0.7], shapes=[1.0, 1.0], scales=[1.0, 1.0])
        self.assertAlmostEqual(nb_mixture_log_marginal(table, E, prior), 4 * np.log(0.5), places=12)

    def test_huge_shape_keeps_precision(self):
        """
        Tests the term at r = 4e6, the size reached right after initialization, against an
        exactly summed log rising factorial, and at r = 1e12 against the Poisson limit.
        """
        counts = np.array([0.0, 1.0, 4.0, 30.0])
        expected = np.array([2.0, 5.0, 3.5, 20.0])
        shape = 4e6
        scale = 1.3 / shape
        values = nb_log_pmf(counts, expected, np.array([shape]), np.array([scale]))[:, 0]
        for value, count, e in zip(values, counts, expected):
            eh = e * scale
            exact = (math.fsum(math.log(shape + k) for k in range(int(count))) - math.lgamma(count + 1.0)
                     + count * math.log(eh) - (count + shape) * math.log1p(eh))
            self.assertAlmostEqual(value, exact, delta=1e-9)
        shape = 1e12
        values = nb_log_pmf(counts, expected, np.array([shape]), np.array([1.3 / shape]))[:, 0]
        np.testing.assert_allclose(values, stats.poisson.logpmf(counts, 1.3 * expected), rtol=0, atol=1e-8)

    def test_log_rising_factorial(self):
        """
        Tests log Gamma(r + N) - log Gamma(r) against the sum of log(r + k) on both sides
        of the switch to the Stirling series.
        """
        for shape in (0.5, 7.0, 9999.0, 2e4, 3e6, 1e12):
            for count in (0, 1, 5, 50):
                exact = math.fsum(math.log(shape + k) for k in range(count))
                self.assertAlmostEqual(float(log_rising_factorial(shape, count)), exact, delta=1e-9,
                                       msg=f"r={shape} N={count}")

    def test_digamma_difference(self):
        """
        Tests psi(r + N) - psi(r) against the finite sum of 1 / (r + k) on both sides
        of the switch to the asymptotic expansion.
        """
        for shape in (0.5, 7.0, 9999.0, 2e4, 3e6, 1e12):
            for count in (0, 1, 5, 50):
                exact = math.fsum(1.0 / (shape + k) for k in range(count))
                value = float(digamma_difference(shape, count))
                if count == 0:
                    self.assertEqual(value, 0.0)
                else:
                    self.assertAlmostEqual(value / exact, 1.0, delta=1e-9, msg=f"r={shape} N={count}")


class InitPriorTestCase(SimpleTestCase):
    def test_mean_variance_initialization(self):
        """
        Tests that every component has mean on an observed O/E ratio and variance eps.
        """
        table, E = table_and_expected(3)
        prior = init_prior(table, E, K=20, eps=1e-6, seed=5)
        ratios = table.counts.ravel() / E.values.ravel()
        means = prior.shapes * prior.scales
        for mean in means:
            self.assertTrue(np.any(np.isclose(mean, np.where(ratios == 0, 1e-4, ratios))))
        np.testing.assert_allclose(prior.shapes * prior.scales ** 2, 1e-6, rtol=1e-9)
        np.testing.assert_allclose(prior.weights, 1.0 / 20)

    def test_seeded(self):
        """
        Tests that the same seed gives the same grid.
        """
        table, E = table_and_expected(3)
        first = init_prior(table, E, K=10, seed=2)
        np.testing.assert_array_equal(first.shapes, init_prior(table, E, K=10, seed=2).shapes)


class EcmTestCase(SimpleTestCase):
    def test_objective_never_decreases(self):
        """
        Tests that the penalized objective is non-decreasing between iterations
        that keep the same number of components, over random tables and alphas.
        """
        rng = np.random.default_rng(2024)
        for case in range(25):
            table = random_table(rng, max_size=10)
            E = estimate_null_expected_count(table, 'subtable')
            for alpha in (0.0, 0.5, 0.9, 1.0):
                fit = ecm_fit(table, E, alpha=alpha, max_iter=150, seed=case)
                trace = fit.objective_trace
                for u in range(1, len(trace)):
                    if fit.k_trace[u] != fit.k_trace[u - 1]:
                        continue
                    drop = trace[u - 1] - trace[u]
                    self.assertLessEqual(
                        drop, 1e-8 * abs(trace[u - 1]),
                        f"objective dropped by {drop} at iteration {u} (case {case}, alpha {alpha})",
                    )

    def test_k_trace_never_increases(self):
        """
        Tests that pruning only ever removes components.
        """
        table, E = table_and_expected(11)
        fit = fit_general_gamma(table, E, alpha=0.0, seed=1)
        self.assertTrue(all(b <= a for a, b in zip(fit.k_trace, fit.k_trace[1:])))
        self.assertLess(fit.K_star, fit.k_trace[0])
        self.assertEqual(fit.k_trace[0], table.n_cells)

    def test_gps_keeps_two_components(self):
        """
        Tests that GPS fits two components and never prunes.
        """
        table, E = table_and_expected(4)
        fit = fit_gps(table, E, seed=1)
        self.assertEqual(fit.model, 'GPS')
        self.assertEqual(fit.prior.weights.size, 2)
        self.assertEqual(set(fit.k_trace), {2})
        self.assertAlmostEqual(fit.prior.weights.sum(), 1.0)

    def test_kgamma(self):
        """
        Tests that K-gamma keeps K components and reports a finite likelihood.
        """
        table, E = table_and_expected(5)
        fit = fit_kgamma(table, E, K=3, seed=1)
        self.assertEqual(fit.prior.weights.size, 3)
        self.assertTrue(np.isfinite(fit.log_marginal_likelihood))
        self.assertEqual(fit.diagnostics['n_cells'], table.n_cells)

    def test_converged_flag(self):
        """
        Tests that a run stopped by the tolerance is converged and one stopped by max_iter is not.
        """
        table, E = table_and_expected(6)
        fit = fit_general_gamma(table, E, alpha=0.5, seed=1)
        self.assertTrue(fit.converged)
        self.assertLess(fit.iterations, 5000)
        capped = fit_general_gamma(table, E, alpha=0.5, seed=1, max_iter=1)
        self.assertFalse(capped.converged)
        self.assertEqual(capped.iterations, 1)

    def test_log_likelihood_matches_prior(self):
        """
        Tests that the reported likelihood is the marginal likelihood of the returned prior.
        """
        table, E = table_and_expected(7)
        fit = fit_general_gamma(table, E, alpha=0.3, seed=1)
        self.assertAlmostEqual(fit.log_marginal_likelihood, nb_mixture_log_marginal(table, E, fit.prior), places=6)

    def test_same_seed_same_fit(self):
        """
        Tests that fits are reproducible for a fixed seed.
        """
        table, E = table_and_expected(8)
        first = fit_general_gamma(table, E, alpha=0.5, seed=9)
        second = fit_general_gamma(table, E, alpha=0.5, seed=9)
        self.assertEqual(first.objective_trace, second.objective_trace)
        np.testing.assert_array_equal(first.prior.scales, second.prior.scales)

    def test_alpha_out_of_range(self):
        """
        Tests that alpha outside [0, 1] is a model specification error.
        """
        table, E = table_and_expected(1)
        with self.assertRaises(ModelSpecError):
            fit_general_gamma(table, E, alpha=1.5)
        with self.assertRaises(ModelSpecError):
            fit_general_gamma(table, E, alpha=-0.1)

    def test_all_zero_table(self):
        """
        Tests that a table without reports cannot be fitted.
        """
        table = make_table([[0, 0], [0, 0]])
        E = ExpectedCounts(values=np.ones((2, 2)), method='marginal')
        with self.assertRaises(DataError):
            fit_general_gamma(table, E, alpha=0.5)

    def test_shape_mismatch(self):
        """
        Tests that expected counts of the wrong shape are rejected.
        """
        table = make_table([[1, 2], [3, 4]])
        E = ExpectedCounts(values=np.ones((3, 2)), method='marginal')
        with self.assertRaises(DataError):
            fit_gps(table, E)

    def test_gps_recovers_single_gamma_prior(self):
        """
        Tests that GPS refitted on data drawn from one Gamma(5, scale 0.2) prior
        leaves the near-point-mass start and reaches at least the likelihood of the true prior.
        """
        rng = np.random.default_rng(77)
        E = ExpectedCounts(values=rng.uniform(5.0, 50.0, size=(20, 10)), method='marginal')
        lam = rng.gamma(5.0, 0.2, size=(20, 10))
        table = make_table(rng.poisson(E.values * lam))
        truth = nb_mixture_log_marginal(table, E, GammaMixturePrior(weights=[1.0], shapes=[5.0], scales=[0.2]))
        fit = fit_gps(table, E, seed=1)
        self.assertTrue(fit.converged)
        self.assertGreater(fit.log_marginal_likelihood, truth - 1.0)
        prior = fit.prior
        mean = prior.mean()
        variance = float(np.sum(prior.weights * (prior.shapes * prior.scales ** 2 + (prior.shapes * prior.scales) ** 2)))
        variance -= mean ** 2
        self.assertAlmostEqual(mean, 1.0, delta=0.2)
        self.assertGreater(variance, 0.02)
        self.assertLess(variance, 1.0)

    def test_unshrunk_weights_are_mean_responsibilities(self):
        """
        Tests that with alpha = 1 one iteration sets the weights to the mean responsibilities.
        """
        table, E = table_and_expected(12)
        counts, expected = table.counts.ravel().astype(float), E.values.ravel()
        prior = GammaMixturePrior(weights=[0.2, 0.3, 0.5], shapes=[2.0, 5.0, 1.0], scales=[0.5, 0.3, 3.0])
        fit = ecm_fit(table, E, alpha=1.0, max_iter=1, init=prior)
        tau = e_step(counts, expected, prior).responsibilities
        np.testing.assert_allclose(fit.prior.weights, tau.sum(axis=0) / table.n_cells, rtol=1e-12)

    def test_shrinkage_prunes_more_at_small_alpha(self):
        """
        Tests that alpha = 0 keeps no more components than alpha = 0.9.
        """
        for seed in (13, 14, 15):
            table, E = table_and_expected(seed, n_rows=8, n_cols=5, signals=((0, 0, 4.0), (2, 1, 8.0)))
            strong = fit_general_gamma(table, E, alpha=0.0, seed=1)
            weak = fit_general_gamma(table, E, alpha=0.9, seed=1)
            self.assertLessEqual(strong.K_star, weak.K_star, f"seed {seed}")

    def test_relabelling_components(self):
        """
        Tests that permuting the components of the starting prior permutes the fit and
        leaves the likelihood unchanged.
        """
        table, E = table_and_expected(16)
        prior = GammaMixturePrior(weights=[0.2, 0.3, 0.5], shapes=[2.0, 5.0, 1.0], scales=[0.5, 0.3, 3.0])
        order = [2, 0, 1]
        permuted = GammaMixturePrior(weights=prior.weights[order], shapes=prior.shapes[order],
                                     scales=prior.scales[order])
        self.assertAlmostEqual(nb_mixture_log_marginal(table, E, prior), nb_mixture_log_marginal(table, E, permuted),
                               places=9)
        first = ecm_fit(table, E, alpha=1.0, max_iter=5, init=prior)
        second = ecm_fit(table, E, alpha=1.0, max_iter=5, init=permuted)
        np.testing.assert_allclose(second.prior.shapes, first.prior.shapes[order], rtol=1e-9)
        np.testing.assert_allclose(second.prior.scales, first.prior.scales[order], rtol=1e-9)
        np.testing.assert_allclose(second.prior.weights, first.prior.weights[order], rtol=1e-9)
        self.assertAlmostEqual(second.log_marginal_likelihood, first.log_marginal_likelihood, places=8)

    def test_splitting_a_component(self):
        """
        Tests that splitting a component into two identical halves changes neither the
        marginal likelihood nor the objective trace of an unshrunk fit.
        """
        table, E = table_and_expected(17)
        prior = GammaMixturePrior(weights=[0.4, 0.6], shapes=[3.0, 1.5], scales=[0.3, 2.0])
        split = GammaMixturePrior(weights=[0.4, 0.3, 0.3], shapes=[3.0, 1.5, 1.5], scales=[0.3, 2.0, 2.0])
        self.assertAlmostEqual(nb_mixture_log_marginal(table, E, prior), nb_mixture_log_marginal(table, E, split),
                               places=9)
        whole = ecm_fit(table, E, alpha=1.0, max_iter=5, init=prior)
        halves = ecm_fit(table, E, alpha=1.0, max_iter=5, init=split)
        np.testing.assert_allclose(halves.objective_trace, whole.objective_trace, rtol=1e-10)
        np.testing.assert_allclose(halves.prior.weights[1] + halves.prior.weights[2], whole.prior.weights[1],
                                   rtol=1e-9)

    def test_responsibilities_and_weights_normalized(self):
        """
        Tests that responsibilities sum to 1 in every cell and fitted weights sum to 1.
        """
        table, E = table_and_expected(18)
        counts, expected = table.counts.ravel().astype(float), E.values.ravel()
        prior = init_prior(table, E, K=12, seed=3)
        tau = e_step(counts, expected, prior).responsibilities
        np.testing.assert_allclose(tau.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        for alpha in (0.0, 0.5, 1.0):
            fit = fit_general_gamma(table, E, alpha=alpha, seed=3)
            self.assertAlmostEqual(fit.prior.weights.sum(), 1.0, delta=1e-12)
