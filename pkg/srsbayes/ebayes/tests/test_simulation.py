import tempfile
from pathlib import Path
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from ebayes.exceptions import DataError, ModelSpecError
from ebayes.posterior import GammaMixturePosterior, PosteriorDraws, scaled_wasserstein
from ebayes.simulation import (
    SYNTHETIC_REFERENCE, SignalMatrix, SimulationConfig, ZeroIndicator, aggregate_metrics, cell_probabilities,
    generate_contin_table, policy_alpha, run_simulation, zero_indicator_bernoulli, zero_indicator_from_E,
)
from ebayes.tables import ExpectedCounts, load_table

from .helpers import make_table, simulated_table, write_csv


class SignalMatrixTestCase(SimpleTestCase):
    def test_homogeneous(self):
        """
        Tests that homogeneous signals set only the listed cells.
        """
        signal = SignalMatrix.homogeneous((4, 3), [(0, 0), (2, 1)], 2.5)
        self.assertEqual(signal.signal_cells, [(0, 0), (2, 1)])
        self.assertEqual(signal.values.sum(), 12 - 2 + 5.0)

    def test_invalid_strengths(self):
        """
        Tests that strengths strictly between 0 and 1, or off-one reference cells, are rejected.
        """
        with self.assertRaises(ModelSpecError):
            SignalMatrix.homogeneous((3, 3), [(0, 0)], 0.5)
        with self.assertRaises(ModelSpecError):
            SignalMatrix.homogeneous((3, 3), [(2, 0)], 2.0)


class ZeroIndicatorTestCase(SimpleTestCase):
    def test_reference_never_zero(self):
        """
        Tests that structural zeros are removed from the reference row and column.
        """
        zeros = ZeroIndicator(np.ones((3, 4), dtype=bool))
        self.assertFalse(zeros.z[-1, :].any())
        self.assertFalse(zeros.z[:, -1].any())
        self.assertEqual(zeros.z.sum(), 6)

    def test_quantile_zeros(self):
        """
        Tests that q = 0.25 on 16 distinct expected counts marks the four smallest.
        """
        values = np.array([[1, 2, 3, 10], [4, 5, 6, 11], [7, 8, 9, 12], [13, 14, 15, 16]], dtype=float)
        zeros = zero_indicator_from_E(ExpectedCounts(values=values, method='marginal'), 0.25)
        self.assertEqual(zeros.z.sum(), 4)
        self.assertTrue(zeros.z[0, 0] and zeros.z[1, 0])
        self.assertEqual(zeros.origin, 'quantile')

    def test_quantile_zero_means_none(self):
        """
        Tests that q = 0 gives no structural zeros.
        """
        E = ExpectedCounts(values=np.ones((3, 3)), method='marginal')
        self.assertFalse(zero_indicator_from_E(E, 0.0).z.any())
        with self.assertRaises(ModelSpecError):
            zero_indicator_from_E(E, 1.0)

    def test_bernoulli(self):
        """
        Tests the Bernoulli zeros at omega 0 and 1 and their reproducibility.
        """
        self.assertFalse(zero_indicator_bernoulli((4, 4), 0.0).z.any())
        self.assertEqual(zero_indicator_bernoulli((4, 4), 1.0).z.sum(), 9)
        np.testing.assert_array_equal(
            zero_indicator_bernoulli((6, 6), 0.3, seed=4).z, zero_indicator_bernoulli((6, 6), 0.3, seed=4).z,
        )

    def test_excluding(self):
        """
        Tests that excluded cells are never structural zeros.
        """
        zeros = ZeroIndicator(np.ones((3, 3), dtype=bool)).excluding([(0, 1)])
        self.assertFalse(zeros.z[0, 1])
        self.assertTrue(zeros.z[0, 0])


class GeneratorTestCase(SimpleTestCase):
    def setUp(self):
        self.reference = make_table([[10, 20, 30, 40], [5, 15, 25, 35], [8, 12, 16, 24], [50, 60, 70, 80]])

    def test_two_by_two_probabilities(self):
        """
        Tests that equal margins with lambda_11 = 2 give probabilities (2, 1, 1, 1) / 5.
        """
        reference = make_table([[10, 10], [10, 10]])
        signal = SignalMatrix.homogeneous((2, 2), [(0, 0)], 2.0)
        probabilities = cell_probabilities(reference, signal, ZeroIndicator.none((2, 2)))
        np.testing.assert_allclose(probabilities, [[0.4, 0.2], [0.2, 0.2]], rtol=1e-12)

    def test_probabilities_normalized(self):
        """
        Tests that the cell probabilities sum to one and vanish on structural zeros.
        """
        signal = SignalMatrix.homogeneous((4, 4), [(0, 0)], 3.0)
        zeros = ZeroIndicator(np.eye(4, dtype=bool))
        probabilities = cell_probabilities(self.reference, signal, zeros)
        self.assertLess(abs(probabilities.sum() - 1.0), 1e-12)
        self.assertEqual(probabilities[1, 1], 0.0)

    def test_shape_mismatch(self):
        """
        Tests that a signal matrix of another shape is a data error.
        """
        with self.assertRaises(DataError):
            cell_probabilities(self.reference, SignalMatrix(np.ones((3, 3))), ZeroIndicator.none((4, 4)))

    def test_frequencies_match_independence(self):
        """
        Tests that with lambda = 1 the mean counts over 10^4 replicates match N p_i* p_j*.
        """
        n_tables = 10000
        signal = SignalMatrix(np.ones((4, 4)))
        tables = generate_contin_table(self.reference, signal, ZeroIndicator.none((4, 4)), n_tables=n_tables, seed=3)
        counts = np.stack([table.counts for table in tables])
        total = self.reference.grand_total
        p = np.outer(self.reference.row_totals, self.reference.col_totals) / total ** 2
        standard_errors = np.sqrt(total * p * (1 - p) / n_tables)
        self.assertTrue(np.all(np.abs(counts.mean(axis=0) - total * p) <= 4 * standard_errors))
        self.assertTrue(np.all(counts.sum(axis=(1, 2)) == total))

    def test_structural_zeros_stay_zero(self):
        """
        Tests that structural-zero cells are zero in every replicate and names are kept.
        """
        zeros = ZeroIndicator(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=bool))
        tables = generate_contin_table(self.reference, SignalMatrix(np.ones((4, 4))), zeros, n_tables=200, seed=1)
        for table in tables:
            self.assertEqual(table.counts[0, 0], 0)
            self.assertEqual(table.counts[1, 1], 0)
            self.assertEqual(table.ae_names, self.reference.ae_names)

    def test_seeded_tables(self):
        """
        Tests that table t depends only on the seed and its index.
        """
        signal = SignalMatrix.homogeneous((4, 4), [(0, 0)], 2.0)
        none = ZeroIndicator.none((4, 4))
        five = generate_contin_table(self.reference, signal, none, n_tables=5, seed=9)
        two = generate_contin_table(self.reference, signal, none, n_tables=2, seed=9)
        np.testing.assert_array_equal(five[1].counts, two[1].counts)
        self.assertFalse(np.array_equal(five[0].counts, five[1].counts))


class MetricsTestCase(SimpleTestCase):
    def setUp(self):
        self.signal = SignalMatrix.homogeneous((3, 3), [(0, 0), (1, 1)], 2.5)

    def test_point_mass_at_truth(self):
        """
        Tests that draws equal to the truth score zero on both metrics.
        """
        draws = np.ones((100, 3, 3))
        draws[:, 0, 0] = 2.5
        draws[:, 1, 1] = 2.5
        replicate = PosteriorDraws(draws=draws, seed=1, model='general-gamma')
        metrics = aggregate_metrics([replicate, replicate], self.signal, [(0, 0), (1, 1)], p=2)
        self.assertEqual(metrics, {'average_scaled': 0.0, 'max_scaled': 0.0})

    def test_single_cell_matches_closed_form(self):
        """
        Tests that one replicate and one signal cell give equal metrics close to the closed form.
        """
        post = GammaMixturePosterior(weights=np.array([1.0]), shapes=np.array([40.0]), rates=np.array([20.0]))
        draws = np.ones((100000, 3, 3))
        draws[:, 0, 0] = post.sample(np.random.default_rng(0), 100000)
        metrics = aggregate_metrics([PosteriorDraws(draws=draws, seed=0, model='k-gamma')], self.signal, [(0, 0)])
        self.assertEqual(metrics['average_scaled'], metrics['max_scaled'])
        exact = scaled_wasserstein(post, 2.5, p=2)
        self.assertLess(abs(metrics['average_scaled'] / exact - 1.0), 0.02)

    def test_max_not_below_average(self):
        """
        Tests that Max-Scaled is at least Average-Scaled.
        """
        rng = np.random.default_rng(5)
        replicates = [
            PosteriorDraws(draws=rng.gamma(4.0, 0.5, size=(500, 3, 3)), seed=k, model='KM') for k in range(3)
        ]
        metrics = aggregate_metrics(replicates, self.signal, [(0, 0), (1, 1)], p=1)
        self.assertGreaterEqual(metrics['max_scaled'], metrics['average_scaled'])

    def test_empty_signal_set(self):
        """
        Tests that metrics need at least one signal cell, and only signal cells.
        """
        replicate = PosteriorDraws(draws=np.ones((10, 3, 3)), seed=1, model='KM')
        with self.assertRaises(ModelSpecError):
            aggregate_metrics([replicate], self.signal, [])
        with self.assertRaises(ModelSpecError):
            aggregate_metrics([replicate], self.signal, [(0, 1)])


class SimulationConfigTestCase(SimpleTestCase):
    def test_policies(self):
        """
        Tests the policy names that map to a fixed alpha or to tuning.
        """
        self.assertEqual(policy_alpha('fix_0.5'), 0.5)
        self.assertIsNone(policy_alpha('BIC'))
        for bad in ('fix_2', 'fix_x', 'best'):
            with self.assertRaises(ModelSpecError):
                policy_alpha(bad)

    def test_invalid_config(self):
        """
        Tests that non-signal strengths and unknown policies are refused.
        """
        with self.assertRaises(ModelSpecError):
            SimulationConfig(lambda_grid=[1.0])
        with self.assertRaises(ModelSpecError):
            SimulationConfig(policies=['fix_0', 'median'])
        with self.assertRaises(ModelSpecError):
            SimulationConfig(metrics_p=[3])

    def test_bundled_reference(self):
        """
        Tests that the bundled reference table loads with the default signal cells inside it.
        """
        table = load_table(SYNTHETIC_REFERENCE)
        self.assertEqual(table.ae_names[-1], 'Other AEs')
        self.assertEqual(SimulationConfig().reference_table().shape, table.shape)
        for i, j in SimulationConfig().signal_cells:
            self.assertLess(i, table.reference_row_index)
            self.assertLess(j, table.reference_col_index)


class RunSimulationTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.reference = write_csv(Path(self.tmp.name) / 'reference.csv', simulated_table(31, base=40.0))

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, **overrides):
        options = dict(reference=str(self.reference), signal_cells=[(0, 0)], lambda_grid=[4.0], zi_grid=[0.0],
                       n_sim=2, policies=['fix_0.9'], n_posterior_draws=200, metrics_p=[2, 1])
        options.update(overrides)
        return SimulationConfig(**options)

    def test_tidy_frame(self):
        """
        Tests the metrics frame columns and one row per policy, setting and metric.
        """
        frame, stored = run_simulation(self.config())
        self.assertEqual(list(frame.columns), ['policy', 'zi', 'lambda', 'metric_name', 'value'])
        self.assertEqual(sorted(frame['metric_name']),
                         ['average_scaled_rmse', 'average_scaled_w1', 'max_scaled_rmse', 'max_scaled_w1'])
        self.assertTrue((frame['value'] >= 0).all())
        self.assertEqual(stored, {})

    def test_stored_draws_reproduce_metrics(self):
        """
        Tests that recomputing the metrics from the kept draws matches the frame.
        """
        config = self.config(metrics_p=[2])
        frame, stored = run_simulation(config, keep_draws=True)
        replicates = stored[('fix_0.9', 0.0, 4.0)]
        self.assertEqual(len(replicates), 2)
        signal = SignalMatrix.homogeneous(replicates[0].draws.shape[1:], [(0, 0)], 4.0)
        metrics = aggregate_metrics(replicates, signal, [(0, 0)], p=2)
        values = dict(zip(frame['metric_name'], frame['value']))
        self.assertEqual(values['average_scaled_rmse'], metrics['average_scaled'])
        self.assertEqual(values['max_scaled_rmse'], metrics['max_scaled'])

    def test_deterministic(self):
        """
        Tests that the same config and seed give identical metrics.
        """
        first, _ = run_simulation(self.config())
        second, _ = run_simulation(self.config())
        self.assertTrue(first.equals(second))


@skipUnless(settings.SRSBAYES_SLOW_TESTS, "set SRSBAYES_SLOW_TESTS=1 to run the desk-scale simulation study")
class DeskScaleSimulationTestCase(SimpleTestCase):
    def test_shrinkage_policies(self):
        """
        Tests on the bundled reference table that fix_0 has the worst Max-Scaled-RMSE at
        lambda = 1.2 and that AIC and BIC never do worse than the worst fixed alpha.
        """
        config = SimulationConfig(lambda_grid=[1.2, 4.0], zi_grid=[0.0, 0.5], n_sim=50)
        frame, _ = run_simulation(config, n_jobs=settings.SRSBAYES_N_JOBS)
        worst = frame[frame['metric_name'] == 'max_scaled_rmse'].set_index(['zi', 'lambda', 'policy'])['value']
        fixed = ['fix_0', 'fix_0.5', 'fix_0.9']
        for zi in config.zi_grid:
            at_low = worst.loc[(zi, 1.2)]
            self.assertEqual(at_low[fixed].idxmax(), 'fix_0', f"zi={zi}")
            for strength in config.lambda_grid:
                values = worst.loc[(zi, strength)]
                for policy in ('AIC', 'BIC'):
                    self.assertLessEqual(values[policy], values[fixed].max(), f"{policy} zi={zi} lambda={strength}")
