# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""``transience`` command line.

Subcommands::

    gen        write a synthetic dataset (pair_NNN/{x.seq,y.seq,truth.csv})
    train      fit TRANSIENCE or CTW; writes model.ckpt, paths/, history.csv
    eval       compare variants over seeds; writes report.csv
    gradcheck  analytic vs finite-difference gradients of every loss
    align      re-apply a trained model.ckpt to a dataset; writes paths/
    dtw-test   DTW against exhaustive search on random cost matrices

Every run setting is read from ``--config`` (key=value) and can be
overridden per key with ``--<key>``. Exit codes: 0 success, 1 usage or
validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from transience import __version__
from transience.api.align import (
    align_pairs,
    ctw_fit,
    dtw_self_test,
    transience_fit,
    write_history,
    write_paths,
)
from transience.api.checkpoint import load_run, pca_tensors, save_run
from transience.api.evaluation import (
    VARIANT_CTW,
    compare_variants,
    pooled_alignment_error,
    split_dataset,
    variant_label,
)
from transience.api.synth import (
    FeatureConfig,
    gen_dataset,
    prepare_views,
    read_dataset,
    write_dataset,
)
from transience.config.settings import RunSettings, fields, load_settings, sections
from transience.exceptions import DivergenceError, NumericalError, ValidationError
from transience.networks.diagnostics import (
    DEFAULT_TOLERANCE,
    FAMILIES,
    SUITE_CONFIGS,
    run_gradient_suite,
)
from transience.utils.common import (
    STREAM_CHECKS,
    STREAM_DATA,
    log_error,
    logger,
    make_rng,
    setup_logging,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

SETTINGS_FILE = "settings.conf"
CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"
REPORT_FILE = "report.csv"
PATHS_DIR = "paths"

# Settings with a dedicated global flag.
GLOBAL_KEYS = {"seed": "seed", "out_dir": "out"}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _settings_help() -> str:
    lines = ["run settings (key: default [source]):"]
    for label, group in sections():
        lines.append(f"  {label}")
        for field in group:
            lines.append(
                f"    {field['fieldname']}: {field.get('default') or '(empty)'} [{field['source']}]"
            )
    return "\n".join(lines)


def _add_setting_flags(parser: argparse.ArgumentParser) -> None:
    for label, group in sections():
        args = parser.add_argument_group(f"{label.lower()} settings")
        for field in group:
            key = field["fieldname"]
            if key in GLOBAL_KEYS:
                continue
            choices = field["options"].split("\n") if field["fieldtype"] == "Select" else None
            description = field.get("description", field.get("label", key))
            args.add_argument(
                f"--{key.replace('_', '-')}", dest=key, default=None, choices=choices,
                metavar=None if choices else field["fieldtype"].upper(),
                help=f"{description} (default: {field.get('default') or 'empty'}; "
                     f"{field['source']})",
            )


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key=value settings file")
    common.add_argument("--seed", default=None, help="master seed (default: 0)")
    common.add_argument("--out", default=None, help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(
        prog="transience",
        description="Align two-view time series with learned latent projections and DTW.",
        epilog=_settings_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    for name, handler, summary in (
        ("gen", cmd_gen, "write a synthetic dataset with ground-truth warps"),
        ("train", cmd_train, "fit TRANSIENCE or CTW and write checkpoint, paths and history"),
        ("eval", cmd_eval, "compare variants over seeds and write the report"),
    ):
        p = sub.add_parser(name, parents=[common], help=summary, description=summary)
        _add_setting_flags(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("align", parents=[common], help="re-apply a trained checkpoint to a dataset",
                       description="Align every pair of a dataset with a trained checkpoint.")
    p.add_argument("--checkpoint", type=Path, required=True, help="model.ckpt written by train")
    _add_setting_flags(p)
    p.set_defaults(handler=cmd_align)

    p = sub.add_parser("gradcheck", parents=[common], help="check every loss gradient",
                       description="Analytic vs central-difference gradients of every loss.")
    p.add_argument("--loss", dest="families", action="append", choices=FAMILIES,
                   help="only check this loss family (repeatable)")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                   help=f"maximum relative error (default: {DEFAULT_TOLERANCE:g})")
    p.add_argument("--configs", type=int, default=SUITE_CONFIGS,
                   help=f"random problems per case (default: {SUITE_CONFIGS})")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("dtw-test", parents=[common], help="check DTW against exhaustive search",
                       description="DTW against exhaustive search on random cost matrices.")
    p.add_argument("--trials", type=int, default=200, help="random cost matrices (default: 200)")
    p.add_argument("--max-size", type=int, default=6, help="largest side (default: 6)")
    p.set_defaults(handler=cmd_dtw_test)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides = {
        f["fieldname"]: getattr(args, f["fieldname"]) for f in fields()
        if f["fieldname"] not in GLOBAL_KEYS and hasattr(args, f["fieldname"])
    }
    for key, flag in GLOBAL_KEYS.items():
        overrides[key] = getattr(args, flag)
    return overrides


def _out_dir(settings: RunSettings) -> Path:
    out = Path(settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SETTINGS_FILE).write_text(settings.to_text())
    return out


def _dataset(settings: RunSettings):
    if settings.data_dir:
        return read_dataset(settings.data_dir)
    _, pairs = gen_dataset(settings.synth_spec(), settings.n_pairs,
                           make_rng(settings.seed, STREAM_DATA))
    return pairs


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_gen(settings: RunSettings, args: argparse.Namespace) -> int:
    spec = settings.synth_spec()
    out = _out_dir(settings)
    _, pairs = gen_dataset(spec, settings.n_pairs, make_rng(settings.seed, STREAM_DATA))
    write_dataset(out, pairs)
    print(f"wrote {len(pairs)} pairs to {out}")
    return EXIT_OK


def cmd_train(settings: RunSettings, args: argparse.Namespace) -> int:
    train_config = settings.train_config()
    loss_config = settings.loss_config()
    feature_config = settings.feature_config()
    pairs = _dataset(settings)
    out = _out_dir(settings)

    views, pca = prepare_views([(p.X, p.Y) for p in pairs], feature_config)
    if settings.variant == VARIANT_CTW:
        run = ctw_fit(views, train_config)
    else:
        run = transience_fit(views, loss_config, train_config)
        run.variant = variant_label(loss_config)

    save_run(out / CHECKPOINT_FILE, run,
             {"seed": settings.seed, "context_width": feature_config.context_width,
              "use_deltas": feature_config.use_deltas}, pca_tensors(pca))
    write_paths(out / PATHS_DIR, run.paths)
    write_history(out / HISTORY_FILE, run.history)

    report = pooled_alignment_error(run.paths, [p.true_map for p in pairs])
    logger("commands").info("initial uniform-path cost %.6g", run.initial_path_cost)
    print(
        f"{run.variant}: {len(run.history)} iterations, final dtw cost {run.final_dtw_cost:.6g}, "
        f"mean deviation {report.mean_abs_deviation:.3f} frames"
    )
    return EXIT_OK


def cmd_eval(settings: RunSettings, args: argparse.Namespace) -> int:
    eval_config = settings.eval_config()
    train_config = settings.train_config()
    dataset = None
    if settings.data_dir:
        dataset = split_dataset(read_dataset(settings.data_dir), eval_config.n_test_pairs)
    out = _out_dir(settings)
    seeds = [settings.seed + k for k in range(eval_config.n_seeds)]
    comparison = compare_variants(
        settings.synth_spec(), list(eval_config.variants), seeds, train_config,
        settings.feature_config(), eval_config, base_loss=settings.loss_config(),
        out_path=out / REPORT_FILE, dataset=dataset,
    )
    for rank, (label, deviation) in enumerate(comparison.ranking, start=1):
        print(f"{rank}. {label}: median mean deviation {deviation:.3f} frames")
    for rank, (label, mse) in enumerate(comparison.mse_ranking, start=1):
        print(f"{rank}. {label}: median downstream mse {mse:.4f}")
    if any(label.startswith("contrastive") for label in eval_config.variants):
        print(f"contrastive ranks first: {'yes' if comparison.contrastive_first else 'no'}")
        print(f"contrastive lowest mse: {'yes' if comparison.contrastive_lowest_mse else 'no'}")
    return EXIT_OK


def cmd_align(settings: RunSettings, args: argparse.Namespace) -> int:
    run, pca, meta = load_run(args.checkpoint)
    # Features are rebuilt the way the checkpoint was trained, with its PCA.
    feature_config = FeatureConfig(
        context_width=int(meta.get("context_width", settings.context_width)),
        pca_retained=0 if pca is None else pca.retained,
        use_deltas=bool(meta.get("use_deltas", settings.use_deltas)),
    )
    pairs = _dataset(settings)
    out = _out_dir(settings)

    views, _ = prepare_views([(p.X, p.Y) for p in pairs], feature_config, pca=pca)
    results = align_pairs(run, views, settings.dtw_metric)
    paths = [r.path for r in results]
    write_paths(out / PATHS_DIR, paths)

    report = pooled_alignment_error(paths, [p.true_map for p in pairs])
    cost = sum(r.total_cost for r in results)
    print(
        f"{run.variant}: aligned {len(paths)} pairs, dtw cost {cost:.6g}, "
        f"mean deviation {report.mean_abs_deviation:.3f} frames"
    )
    return EXIT_OK


def cmd_gradcheck(settings: RunSettings, args: argparse.Namespace) -> int:
    result = run_gradient_suite(make_rng(settings.seed, STREAM_CHECKS), families=args.families,
                                tolerance=args.tolerance, configs=args.configs)
    width = max((len(name) for name in result.errors), default=0)
    for name, error in result.errors.items():
        status = "ok" if error <= result.tolerance else "FAIL"
        print(f"{name:<{width}}  {error:.3e}  {status}")
    if not result.passed:
        log_error("gradient check failed", ", ".join(result.failures))
        print(f"gradient check failed: {', '.join(result.failures)}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_dtw_test(settings: RunSettings, args: argparse.Namespace) -> int:
    result = dtw_self_test(make_rng(settings.seed, STREAM_CHECKS), args.trials, args.max_size)
    matched = result.trials - len(result.mismatches)
    print(f"dtw-test: {matched}/{result.trials} matched exhaustive search")
    if not result.passed:
        shapes = ", ".join(f"{tx}x{ty}" for tx, ty in result.mismatches)
        print(f"dtw-test failed on shapes: {shapes}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.verbose)
    try:
        settings = load_settings(args.config, _overrides(args))
        return args.handler(settings, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged at outer iteration {exc.iteration}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    except NumericalError as exc:
        log_error("numerical failure", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
