# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

import io
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path
from unittest.mock import patch

from transience.api.checkpoint import load_checkpoint
from transience.commands import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main

TINY_SETTINGS = """\
# small enough for unit tests
dim_x = 4
dim_y = 5
latent_k = 2
length_x = 30
length_y = 34
length_spread = 2
n_pairs = 3
hidden_layers = 8
latent_dim = 2
private_dim = 2
batch_size = 32
epochs_per_phase = 1
min_updates_per_phase = 0
max_outer_iterations = 2
learning_rate = 1e-3
context_width = 3
pca_retained = 6
n_train_pairs = 2
n_test_pairs = 1
n_seeds = 1
regressor_hidden = 8
regressor_epochs = 2
regressor_batch = 32
"""


def _corrupt_cca(case, grads):
    return [g * 1.5 for g in grads] if case == "cca" else grads


class CommandTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = self.dir / "tiny.conf"
        self.config.write_text(TINY_SETTINGS)

    def tearDown(self):
        self.tmp.cleanup()

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def tiny(self, command, out, *extra):
        return self.run_cli(command, "--config", str(self.config), "--out", str(out), *extra)


class TestGen(CommandTestCase):
    def test_byte_identical_reruns(self):
        first, second = self.dir / "a", self.dir / "nested" / "b"
        self.assertEqual(self.tiny("gen", first, "--seed", "7")[0], EXIT_OK)
        self.assertEqual(self.tiny("gen", second, "--seed", "7")[0], EXIT_OK)
        # settings.conf records the output directory itself
        files = sorted(
            p.relative_to(first) for p in first.rglob("*")
            if p.is_file() and p.name != "settings.conf"
        )
        self.assertIn(Path("pair_000") / "truth.csv", files)
        for rel in files:
            self.assertEqual((first / rel).read_bytes(), (second / rel).read_bytes(), rel)

    def test_invalid_dims_name_the_key(self):
        code, _, err = self.tiny("gen", self.dir / "x", "--latent-k", "9")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("latent_k", err)

    def test_unknown_config_key(self):
        self.config.write_text(TINY_SETTINGS + "latnet_dim = 3\n")
        code, _, err = self.tiny("gen", self.dir / "x")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("latnet_dim", err)

    def test_usage_errors(self):
        self.assertEqual(self.run_cli("gen", "--no-such-flag")[0], EXIT_USAGE)
        self.assertEqual(self.run_cli()[0], EXIT_USAGE)
        code, _, _ = self.run_cli("gen", "--config", str(self.dir / "absent.conf"))
        self.assertEqual(code, EXIT_USAGE)


class TestTrain(CommandTestCase):
    def test_contrastive_outputs_and_determinism(self):
        first, second = self.dir / "a", self.dir / "b"
        code, out, _ = self.tiny("train", first, "--loss", "contrastive")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("contrastive", out)
        self.assertEqual(self.tiny("train", second, "--loss", "contrastive")[0], EXIT_OK)

        self.assertEqual((first / "history.csv").read_bytes(),
                         (second / "history.csv").read_bytes())
        self.assertEqual(len(list((first / "paths").glob("path_*.csv"))), 3)
        tensors, meta = load_checkpoint(first / "model.ckpt")
        self.assertEqual(meta["kind"], "network")
        self.assertIn("encoder_x.0.weights", tensors)
        self.assertIn("pca.basis", tensors)

    def test_ctw_saves_linear_projection(self):
        code, _, _ = self.tiny("train", self.dir / "c", "--variant", "ctw")
        self.assertEqual(code, EXIT_OK)
        tensors, meta = load_checkpoint(self.dir / "c" / "model.ckpt")
        self.assertEqual(meta["kind"], "linear")
        self.assertIn("weights_x", tensors)
        self.assertNotIn("encoder_x.0.weights", tensors)

    def test_trains_on_generated_dataset(self):
        data = self.dir / "data"
        self.assertEqual(self.tiny("gen", data)[0], EXIT_OK)
        code, _, _ = self.tiny("train", self.dir / "t", "--data-dir", str(data), "--loss", "cca",
                               "--use-private", "1")
        self.assertEqual(code, EXIT_OK)
        _, meta = load_checkpoint(self.dir / "t" / "model.ckpt")
        self.assertEqual(meta["variant"], "cca+priv")

    def test_missing_dataset(self):
        code, _, _ = self.tiny("train", self.dir / "t", "--data-dir", str(self.dir / "absent"))
        self.assertEqual(code, EXIT_USAGE)

    def test_divergence_exit_code(self):
        with patch("transience.api.align.total_objective", return_value=(float("nan"), {})):
            code, _, err = self.tiny("train", self.dir / "d")
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertIn("iteration 1", err)


class TestAlign(CommandTestCase):
    def test_reapplies_trained_checkpoints(self):
        for variant, loss in (("transience", "contrastive"), ("ctw", "cca")):
            model = self.dir / variant
            code, _, _ = self.tiny("train", model, "--variant", variant, "--loss", loss)
            self.assertEqual(code, EXIT_OK)
            code, out, _ = self.tiny("align", self.dir / f"{variant}-aligned",
                                     "--checkpoint", str(model / "model.ckpt"))
            self.assertEqual(code, EXIT_OK, variant)
            self.assertIn("mean deviation", out)
            # Same seed, same data: the checkpoint reproduces the final training paths.
            for trained in sorted((model / "paths").glob("path_*.csv")):
                aligned = self.dir / f"{variant}-aligned" / "paths" / trained.name
                self.assertEqual(aligned.read_text(), trained.read_text(), trained.name)

    def test_missing_checkpoint(self):
        code, _, err = self.tiny("align", self.dir / "a", "--checkpoint", str(self.dir / "none.ckpt"))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("none.ckpt", err)
        self.assertEqual(self.tiny("align", self.dir / "a")[0], EXIT_USAGE)


class TestEval(CommandTestCase):
    def test_report_and_determinism(self):
        first, second = self.dir / "a", self.dir / "b"
        code, out, _ = self.tiny("eval", first, "--variants", "uniform,ctw")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("1. ", out)
        self.assertIn("median downstream mse", out)
        self.assertEqual(self.tiny("eval", second, "--variants", "uniform,ctw")[0], EXIT_OK)
        report = (first / "report.csv").read_text()
        self.assertEqual(report, (second / "report.csv").read_text())
        self.assertEqual(len(report.splitlines()), 4)

    def test_on_generated_dataset(self):
        data = self.dir / "data"
        self.tiny("gen", data)
        code, _, _ = self.tiny("eval", self.dir / "e", "--data-dir", str(data), "--variants", "ctw")
        self.assertEqual(code, EXIT_OK)

    def test_missing_inputs(self):
        code, _, _ = self.tiny("eval", self.dir / "e", "--data-dir", str(self.dir / "absent"))
        self.assertEqual(code, EXIT_USAGE)

    def test_unknown_variant(self):
        code, _, err = self.tiny("eval", self.dir / "e", "--variants", "ctw+priv")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("ctw+priv", err)


class TestChecks(CommandTestCase):
    def test_gradcheck_single_loss(self):
        code, out, _ = self.run_cli("gradcheck", "--loss", "cca", "--configs", "1")
        self.assertEqual(code, EXIT_OK)
        names = [line.split()[0] for line in out.splitlines()]
        self.assertEqual(names, ["cca", "total:cca", "total:cca+autoenc", "total:cca+priv"])

    def test_gradcheck_names_failing_loss(self):
        with patch("transience.networks.diagnostics._analytic_hook", side_effect=_corrupt_cca):
            code, _, err = self.run_cli("gradcheck", "--loss", "cca", "--configs", "1")
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertIn("failed: cca", err)

    def test_gradcheck_unknown_loss(self):
        self.assertEqual(self.run_cli("gradcheck", "--loss", "ssim")[0], EXIT_USAGE)

    def test_dtw_test(self):
        code, out, _ = self.run_cli("dtw-test", "--trials", "20")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("20/20", out)


class TestHelp(CommandTestCase):
    def test_top_level_lists_every_key(self):
        out = io.StringIO()
        with redirect_stdout(out), self.assertRaises(SystemExit) as ctx:
            main(["--help"])
        self.assertEqual(ctx.exception.code, 0)
        text = out.getvalue()
        for key in ("latent_dim: 20 [published]", "batch_size: 512 [published]",
                    "epochs_per_phase: 10 [local]", "data_dir: (empty) [local]"):
            self.assertIn(key, text)

    def test_subcommand_flags(self):
        out = io.StringIO()
        with redirect_stdout(out), self.assertRaises(SystemExit):
            main(["train", "--help"])
        self.assertIn("--latent-dim", out.getvalue())
        self.assertIn("--kl-weight", out.getvalue())


if __name__ == "__main__":
    unittest.main()
