# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from transience.api.align import TrainConfig
from transience.api.evaluation import (
    REPORT_COLUMNS,
    AlignmentReport,
    EvalConfig,
    alignment_error,
    compare_variants,
    downstream_eval,
    median_ranking,
    parse_variant,
    path_to_correspondence,
    pooled_alignment_error,
    read_report,
    split_dataset,
    truth_to_path,
    write_report,
)
from transience.api.synth import FeatureConfig, SynthSpec, gen_dataset, gen_warp
from transience.exceptions import ValidationError
from transience.utils.seqcore import WarpingPathPair, uniform_init_path

BENCHMARK = os.environ.get("TRANSIENCE_BENCHMARK") == "1"

TINY_SPEC = SynthSpec(dim_x=4, dim_y=5, latent_k=2, length_x=30, length_y=34, length_spread=2)
TINY_FEATURES = FeatureConfig(context_width=3, pca_retained=6)
TINY_EVAL = EvalConfig(regressor_hidden=(8,), regressor_epochs=3, regressor_batch=32,
                       n_train_pairs=2, n_test_pairs=1, n_seeds=1)


def _tiny_train(**kwargs):
    base = dict(hidden=(8,), latent_dim=2, private_dim=2, batch_size=32, epochs_per_phase=1,
                max_outer_iterations=2, learning_rate=1e-3, min_updates_per_phase=0)
    base.update(kwargs)
    return TrainConfig(**base)


class TestAlignmentError(unittest.TestCase):
    def test_path_equal_to_truth(self):
        report = alignment_error(uniform_init_path(10, 10), np.arange(1, 11))
        self.assertEqual(report.mean_abs_deviation, 0.0)
        self.assertEqual(report.median_abs_deviation, 0.0)
        self.assertEqual(report.pct_within_3, 1.0)

    def test_hand_computed_gap(self):
        truth = np.array([1, 1, 1, 1, 1, 5, 6, 7, 9, 10])
        # the diagonal path sits 0,1,2,3,4,1,1,1,0,0 frames away
        report = alignment_error(uniform_init_path(10, 10), truth)
        self.assertAlmostEqual(report.mean_abs_deviation, 1.3)
        self.assertAlmostEqual(report.median_abs_deviation, 1.0)
        self.assertAlmostEqual(report.pct_within_3, 0.9)

    def test_constant_shift(self):
        report = alignment_error(uniform_init_path(10, 10), np.arange(3, 13))
        self.assertAlmostEqual(report.mean_abs_deviation, 2.0)
        self.assertEqual(report.pct_within_3, 1.0)

    def test_length_mismatch(self):
        with self.assertRaises(ValidationError):
            alignment_error(uniform_init_path(10, 10), np.arange(1, 9))

    def test_correspondence_averages_x(self):
        path = WarpingPathPair([1, 2, 3], [1, 1, 2])
        np.testing.assert_allclose(path_to_correspondence(path), [1.5, 3.0])

    def test_pooled_over_pairs(self):
        report = pooled_alignment_error(
            [uniform_init_path(4, 4), uniform_init_path(4, 4)],
            [np.arange(1, 5), np.array([1, 1, 1, 4])],
            variant="x", seed=2,
        )
        self.assertAlmostEqual(report.mean_abs_deviation, 3 / 8)
        self.assertEqual((report.variant, report.seed), ("x", 2))


class TestTruthToPath(unittest.TestCase):
    def test_valid_for_random_maps(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            tx, ty = (int(v) for v in rng.integers(2, 40, size=2))
            path = truth_to_path(gen_warp(tx, ty, 0.6, rng))
            path.check(tx, ty)

    def test_zero_jitter_matches_uniform(self):
        warp = gen_warp(12, 20, 0.0, np.random.default_rng(0))
        path = truth_to_path(warp)
        expected = uniform_init_path(12, 20)
        np.testing.assert_array_equal(path.phi_x, expected.phi_x)
        np.testing.assert_array_equal(path.phi_y, expected.phi_y)
        self.assertEqual(alignment_error(path, warp).mean_abs_deviation, 0.0)

    def test_rejects_bad_start(self):
        with self.assertRaises(ValidationError):
            truth_to_path([2, 3])


class TestDownstream(unittest.TestCase):
    def test_truth_paths_match_oracle(self):
        _, pairs = gen_dataset(TINY_SPEC, 3, np.random.default_rng(0))
        train, test = pairs[:2], pairs[2:]
        result = downstream_eval(train, [truth_to_path(p.true_map) for p in train], test,
                                 TINY_EVAL, seed=1)
        self.assertEqual(result.mse, result.oracle_mse)

    def test_identical_views_learn_identity(self):
        spec = SynthSpec(dim_x=4, dim_y=4, latent_k=2, length_x=40, length_y=40,
                         length_spread=0, obs_noise=0.0, warp_jitter=0.0, shared_map=True)
        _, pairs = gen_dataset(spec, 4, np.random.default_rng(1))
        config = EvalConfig(regressor_hidden=(16,), regressor_epochs=100, regressor_lr=1e-2,
                            regressor_batch=32)
        result = downstream_eval(pairs[:3], [uniform_init_path(40, 40)] * 3, pairs[3:], config)
        self.assertLess(result.oracle_mse, 0.5)
        self.assertEqual(result.mse, result.oracle_mse)

    def test_empty_training_rejected(self):
        _, pairs = gen_dataset(TINY_SPEC, 1, np.random.default_rng(0))
        with self.assertRaises(ValidationError):
            downstream_eval([], [], pairs, TINY_EVAL)


class TestVariants(unittest.TestCase):
    def test_parse(self):
        kind, loss = parse_variant("mmi+priv")
        self.assertEqual(kind, "transience")
        self.assertEqual(loss.dependence, "mmi")
        self.assertTrue(loss.use_autoencoder and loss.use_private)
        kind, loss = parse_variant("cca+autoenc")
        self.assertTrue(loss.use_autoencoder)
        self.assertFalse(loss.use_private)
        self.assertEqual(parse_variant("ctw"), ("ctw", None))

    def test_unknown_variant(self):
        with self.assertRaises(ValidationError):
            parse_variant("ctw+priv")
        with self.assertRaises(ValidationError):
            EvalConfig(variants=("dtw",))

    def test_single_variant_single_seed(self):
        comparison = compare_variants(TINY_SPEC, ["uniform"], [0], _tiny_train(),
                                      TINY_FEATURES, TINY_EVAL)
        self.assertEqual(len(comparison.reports), 1)
        self.assertEqual(comparison.ranking[0][0], "uniform")
        self.assertFalse(comparison.contrastive_first)

    def test_duplicate_variant_rows_identical(self):
        comparison = compare_variants(TINY_SPEC, ["ctw", "ctw"], [3], _tiny_train(),
                                      TINY_FEATURES, TINY_EVAL)
        first, second = comparison.reports
        self.assertEqual(first.row(), second.row())
        self.assertEqual(len(comparison.ranking), 1)

    def test_network_variant_and_report_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "report.csv"
            comparison = compare_variants(TINY_SPEC, ["contrastive", "uniform"], [0],
                                          _tiny_train(), TINY_FEATURES, TINY_EVAL, out_path=out)
            rows = read_report(out)
            self.assertTrue(out.read_text().startswith("# proxy metrics"))
        self.assertEqual([r["variant"] for r in rows], ["contrastive", "uniform"])
        self.assertEqual(list(rows[0]), REPORT_COLUMNS)
        self.assertTrue(np.isfinite(comparison.reports[0].dtw_cost))
        self.assertEqual(rows[1]["dtw_cost"], "nan")

    def test_fixed_dataset_reused_across_seeds(self):
        _, pairs = gen_dataset(TINY_SPEC, 3, np.random.default_rng(2))
        train, test = split_dataset(pairs, 1)
        self.assertEqual((len(train), len(test)), (2, 1))
        comparison = compare_variants(TINY_SPEC, ["uniform"], [0, 1], _tiny_train(),
                                      TINY_FEATURES, TINY_EVAL, dataset=(train, test))
        first, second = comparison.reports
        self.assertEqual(first.mean_abs_deviation, second.mean_abs_deviation)
        with self.assertRaises(ValidationError):
            split_dataset(pairs, 3)

    def test_empty_lists_rejected(self):
        with self.assertRaises(ValidationError):
            compare_variants(TINY_SPEC, [], [0], _tiny_train(), TINY_FEATURES, TINY_EVAL)
        with self.assertRaises(ValidationError):
            compare_variants(TINY_SPEC, ["ctw"], [], _tiny_train(), TINY_FEATURES, TINY_EVAL)


class TestRanking(unittest.TestCase):
    def test_rankings_by_deviation_and_mse(self):
        reports = [
            AlignmentReport(1.0, 1.0, 50.0, variant="cca", seed=0, downstream_mse=0.2),
            AlignmentReport(3.0, 3.0, 50.0, variant="cca", seed=1, downstream_mse=0.4),
            AlignmentReport(2.0, 2.0, 50.0, variant="contrastive", seed=0, downstream_mse=0.1),
            AlignmentReport(2.5, 2.0, 50.0, variant="contrastive", seed=1, downstream_mse=0.2),
            AlignmentReport(0.5, 0.5, 90.0, variant="ctw", seed=0),
            AlignmentReport(0.5, 0.5, 90.0, variant="ctw", seed=1),
        ]
        variants = ["cca", "contrastive", "ctw"]
        self.assertEqual(median_ranking(reports, variants, "mean_abs_deviation"),
                         [("ctw", 0.5), ("cca", 2.0), ("contrastive", 2.25)])
        by_mse = median_ranking(reports, variants, "downstream_mse")
        self.assertEqual([label for label, _ in by_mse], ["contrastive", "cca", "ctw"])
        self.assertAlmostEqual(by_mse[0][1], 0.15)

    def test_comparison_flags_both_rankings(self):
        comparison = compare_variants(TINY_SPEC, ["contrastive", "uniform"], [0], _tiny_train(),
                                      TINY_FEATURES, TINY_EVAL)
        self.assertEqual(sorted(label for label, _ in comparison.mse_ranking),
                         ["contrastive", "uniform"])
        self.assertEqual(comparison.contrastive_lowest_mse,
                         comparison.mse_ranking[0][0] == "contrastive")
        self.assertEqual(comparison.contrastive_first,
                         comparison.ranking[0][0] == "contrastive")


class TestReportFile(unittest.TestCase):
    def test_header_and_nan(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "r.csv"
            write_report(path, [AlignmentReport(0.5, 0.25, 1.0, variant="cca", seed=4)])
            lines = path.read_text().splitlines()
        self.assertTrue(lines[0].startswith("#"))
        self.assertEqual(lines[1], ",".join(REPORT_COLUMNS))
        self.assertEqual(lines[2], "cca,4,0.5,0.25,1,nan,nan,nan")


@unittest.skipUnless(BENCHMARK, "set TRANSIENCE_BENCHMARK=1 to run the variant benchmark")
class TestBenchmark(unittest.TestCase):
    LEARNED = ("contrastive", "cca", "mmi", "ctw")

    @classmethod
    def setUpClass(cls):
        cls.comparison = compare_variants(
            SynthSpec(), [*cls.LEARNED, "uniform"], list(range(5)), TrainConfig(),
            FeatureConfig(), EvalConfig(),
        )

    def _median(self, label, metric):
        return np.median([getattr(r, metric) for r in self.comparison.reports if r.variant == label])

    def test_contrastive_ranks_first_on_deviation_and_mse(self):
        self.assertTrue(self.comparison.contrastive_first, self.comparison.ranking)
        self.assertTrue(self.comparison.contrastive_lowest_mse, self.comparison.mse_ranking)

    def test_contrastive_recovers_the_warp(self):
        learned = self._median("contrastive", "mean_abs_deviation")
        self.assertLessEqual(learned, 5.0)
        self.assertLessEqual(learned, 0.5 * self._median("uniform", "mean_abs_deviation"))

    def test_oracle_bounds_every_alignment(self):
        for label in (*self.LEARNED, "uniform"):
            mse = self._median(label, "downstream_mse")
            self.assertGreaterEqual(mse, self._median(label, "oracle_mse") * 0.95 - 1e-6, label)
        self.assertGreater(self._median("uniform", "downstream_mse"),
                           self._median("contrastive", "downstream_mse"))


if __name__ == "__main__":
    unittest.main()
