# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Alignment quality against the synthetic ground truth.

Two proxies replace the spectral-distortion scores a speech system would
report:

* frame deviation between a learned path and the generator's y→x map;
* downstream MSE of a small x→y regressor trained on the frames a path pairs
  up, next to the same regressor trained on truth-aligned frames.

:func:`compare_variants` runs a list of variants over several seeds on the
same data and writes one report row per (variant, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from transience.api.align import TrainConfig, TrainRun, ctw_fit, transience_fit
from transience.api.synth import (
    FeatureConfig,
    SynthPair,
    SynthSpec,
    gen_dataset,
    gen_observation_model,
    prepare_views,
)
from transience.networks.losses import DEPENDENCES, LossConfig
from transience.networks.net import AdamState, Mlp, adam_step, backward, forward
from transience.utils.common import STREAM_DATA, STREAM_REGRESSOR, logger, make_rng, throw
from transience.utils.seqcore import (
    FeatureSequence,
    WarpingPathPair,
    gather_aligned,
    uniform_init_path,
)

WITHIN_FRAMES = 3

VARIANT_CTW = "ctw"
VARIANT_UNIFORM = "uniform"
SUFFIX_AUTOENC = "+autoenc"
SUFFIX_PRIV = "+priv"

REPORT_COLUMNS = [
    "variant", "seed", "mean_abs_dev", "median_abs_dev", "pct_within_3", "dtw_cost",
    "downstream_mse", "oracle_mse",
]
REPORT_NOTE = (
    "# proxy metrics: frame deviation from the synthetic warp and downstream regression MSE;"
    " not comparable to spectral distortion scores"
)


@dataclass(frozen=True)
class AlignmentReport:
    mean_abs_deviation: float
    median_abs_deviation: float
    pct_within_3: float
    dtw_cost: float = float("nan")
    variant: str = ""
    seed: int = 0
    downstream_mse: float = float("nan")
    oracle_mse: float = float("nan")

    def row(self) -> list[str]:
        return [
            self.variant, str(self.seed), _fmt(self.mean_abs_deviation),
            _fmt(self.median_abs_deviation), _fmt(self.pct_within_3), _fmt(self.dtw_cost),
            _fmt(self.downstream_mse), _fmt(self.oracle_mse),
        ]


@dataclass(frozen=True)
class EvalConfig:
    regressor_hidden: tuple[int, ...] = (64, 64)
    regressor_epochs: int = 30
    regressor_lr: float = 1e-3
    regressor_batch: int = 128
    n_train_pairs: int = 8
    n_test_pairs: int = 4
    variants: tuple[str, ...] = ("contrastive", "cca", "mmi", "ctw")
    n_seeds: int = 5

    def __post_init__(self):
        for key in ("regressor_epochs", "regressor_batch", "n_train_pairs", "n_test_pairs",
                    "n_seeds"):
            if int(getattr(self, key)) < 1:
                throw(f"{key} must be at least 1, got {getattr(self, key)}")
        if self.regressor_lr <= 0:
            throw(f"regressor_lr must be positive, got {self.regressor_lr}")
        for label in self.variants:
            parse_variant(label)


@dataclass(frozen=True)
class DownstreamResult:
    mse: float
    oracle_mse: float


@dataclass
class VariantComparison:
    reports: list[AlignmentReport]
    ranking: list[tuple[str, float]] = field(default_factory=list)
    mse_ranking: list[tuple[str, float]] = field(default_factory=list)

    @property
    def contrastive_first(self) -> bool:
        return bool(self.ranking) and self.ranking[0][0].startswith("contrastive")

    @property
    def contrastive_lowest_mse(self) -> bool:
        return bool(self.mse_ranking) and self.mse_ranking[0][0].startswith("contrastive")


def _fmt(value: float) -> str:
    return "nan" if not np.isfinite(value) else f"{value:.10g}"


# ---------------------------------------------------------------------------
# Path metrics
# ---------------------------------------------------------------------------
def path_to_correspondence(path: WarpingPathPair, length_y: int | None = None) -> np.ndarray:
    """Mean aligned (1-based) x index for every y frame."""
    length_y = path.length_y if length_y is None else length_y
    counts = np.bincount(path.phi_y - 1, minlength=length_y).astype(float)
    sums = np.bincount(path.phi_y - 1, weights=path.phi_x.astype(float), minlength=length_y)
    if np.any(counts == 0):
        throw("path does not visit every y frame")
    return sums / counts


def truth_to_path(true_map) -> WarpingPathPair:
    """Warping path through every (map[s], s) cell, with x-steps filled in."""
    m = np.asarray(true_map, dtype=np.int64)
    if m.size == 0 or m[0] != 1 or np.any(np.diff(m) < 0):
        throw("truth map must be non-decreasing and start at 1")
    ix, iy = [1], [1]
    for s in range(1, m.size):
        x_prev, x = int(m[s - 1]), int(m[s])
        if x == x_prev:
            ix.append(x)
            iy.append(s + 1)
            continue
        # diagonal onto the new y frame, then walk x forward on it
        for xi in range(x_prev + 1, x + 1):
            ix.append(xi)
            iy.append(s + 1)
    return WarpingPathPair(ix, iy)


def _deviations(path: WarpingPathPair, true_map) -> np.ndarray:
    truth = np.asarray(true_map, dtype=float)
    if path.length_y != truth.size:
        throw(f"path covers {path.length_y} y frames but truth covers {truth.size}")
    return np.abs(path_to_correspondence(path, truth.size) - truth)


def _summarise(dev: np.ndarray, **extra) -> AlignmentReport:
    return AlignmentReport(
        mean_abs_deviation=float(dev.mean()),
        median_abs_deviation=float(np.median(dev)),
        pct_within_3=float(np.mean(dev <= WITHIN_FRAMES)),
        **extra,
    )


def alignment_error(path: WarpingPathPair, true_map) -> AlignmentReport:
    return _summarise(_deviations(path, true_map))


def pooled_alignment_error(paths: list[WarpingPathPair], truths: list[np.ndarray],
                           **extra) -> AlignmentReport:
    """Deviation statistics over the frames of several pairs at once."""
    if len(paths) != len(truths) or not paths:
        throw("need one truth map per path")
    return _summarise(np.concatenate([_deviations(p, t) for p, t in zip(paths, truths)]), **extra)


# ---------------------------------------------------------------------------
# Downstream regression
# ---------------------------------------------------------------------------
def _train_regressor(X: np.ndarray, Y: np.ndarray, config: EvalConfig, seed: int) -> Mlp:
    rng = make_rng(seed, STREAM_REGRESSOR)
    net = Mlp.build([X.shape[0], *config.regressor_hidden, Y.shape[0]], rng)
    params = net.params()
    adam = AdamState(lr=config.regressor_lr)
    total = X.shape[1]
    n_batches = max(1, total // config.regressor_batch)
    for _ in range(config.regressor_epochs):
        for idx in np.array_split(rng.permutation(total), n_batches):
            out, cache = forward(net, X[:, idx])
            grads, _ = backward(net, cache, 2.0 * (out - Y[:, idx]) / idx.size)
            adam_step(params, grads, adam)
    return net


def _mse(net: Mlp, X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean((net(X) - Y) ** 2))


def _truth_frames(pairs: list[SynthPair]) -> tuple[np.ndarray, np.ndarray]:
    gathered = [gather_aligned(p.X, p.Y, truth_to_path(p.true_map)) for p in pairs]
    return np.hstack([g[0] for g in gathered]), np.hstack([g[1] for g in gathered])


def downstream_eval(train_pairs: list[SynthPair], train_paths: list[WarpingPathPair],
                    test_pairs: list[SynthPair], config: EvalConfig,
                    seed: int = 0) -> DownstreamResult:
    """Test MSE of an x→y regressor trained on path-aligned frames, and the oracle bound.

    Both regressors start from the same initial weights and see the same
    batch order; only the pairing of training frames differs.
    """
    if not train_pairs or len(train_pairs) != len(train_paths):
        throw("downstream_eval needs one path per training pair")
    if not test_pairs:
        throw("downstream_eval needs test pairs")
    gathered = [gather_aligned(p.X, p.Y, path) for p, path in zip(train_pairs, train_paths)]
    Xa = np.hstack([g[0] for g in gathered])
    Ya = np.hstack([g[1] for g in gathered])
    Xo, Yo = _truth_frames(train_pairs)
    Xt, Yt = _truth_frames(test_pairs)

    learned = _train_regressor(Xa, Ya, config, seed)
    oracle = _train_regressor(Xo, Yo, config, seed)
    return DownstreamResult(mse=_mse(learned, Xt, Yt), oracle_mse=_mse(oracle, Xt, Yt))


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------
def parse_variant(label: str) -> tuple[str, LossConfig | None]:
    """``(kind, loss_config)`` for a variant label such as ``mmi+priv`` or ``ctw``."""
    if label in (VARIANT_CTW, VARIANT_UNIFORM):
        return label, None
    base, ae, priv = label, False, False
    if base.endswith(SUFFIX_PRIV):
        base, ae, priv = base[: -len(SUFFIX_PRIV)], True, True
    elif base.endswith(SUFFIX_AUTOENC):
        base, ae = base[: -len(SUFFIX_AUTOENC)], True
    if base not in DEPENDENCES:
        throw(
            f"unknown variant {label!r}; use one of {', '.join(DEPENDENCES)} "
            f"(optionally {SUFFIX_AUTOENC} or {SUFFIX_PRIV}), {VARIANT_CTW} or {VARIANT_UNIFORM}"
        )
    return "transience", LossConfig(dependence=base, use_autoencoder=ae, use_private=priv)


def variant_label(loss: LossConfig) -> str:
    """Report label of a network loss configuration (``cca``, ``mmi+priv``, ...)."""
    if loss.use_private:
        return loss.dependence + SUFFIX_PRIV
    if loss.use_autoencoder:
        return loss.dependence + SUFFIX_AUTOENC
    return loss.dependence


def fit_variant(label: str, pairs: list[tuple[FeatureSequence, FeatureSequence]],
                train_config: TrainConfig, base_loss: LossConfig | None = None) -> TrainRun:
    """Train one variant; loss hyperparameters other than the variant's own come from ``base_loss``."""
    kind, loss = parse_variant(label)
    if kind == VARIANT_UNIFORM:
        return TrainRun(variant=label,
                        paths=[uniform_init_path(X.length, Y.length) for X, Y in pairs])
    if kind == VARIANT_CTW:
        return ctw_fit(pairs, train_config)
    if base_loss is not None:
        loss = replace(base_loss, dependence=loss.dependence,
                       use_autoencoder=loss.use_autoencoder, use_private=loss.use_private)
    run = transience_fit(pairs, loss, train_config)
    run.variant = label
    return run


def split_dataset(pairs: list[SynthPair],
                  n_test: int) -> tuple[list[SynthPair], list[SynthPair]]:
    """The last ``n_test`` pairs are held out for the downstream test."""
    if not 1 <= n_test < len(pairs):
        throw(f"n_test_pairs={n_test} must leave at least one of {len(pairs)} pairs for training")
    return pairs[:-n_test], pairs[-n_test:]


def _seed_dataset(spec: SynthSpec, eval_config: EvalConfig,
                  seed: int) -> tuple[list[SynthPair], list[SynthPair]]:
    data_rng = make_rng(seed, STREAM_DATA)
    model = gen_observation_model(spec, data_rng)
    _, train = gen_dataset(spec, eval_config.n_train_pairs, data_rng, model)
    _, test = gen_dataset(spec, eval_config.n_test_pairs, data_rng, model)
    return train, test


def compare_variants(spec: SynthSpec, variants: list[str], seeds: list[int],
                     train_config: TrainConfig, feature_config: FeatureConfig,
                     eval_config: EvalConfig, base_loss: LossConfig | None = None,
                     out_path: str | Path | None = None,
                     dataset: tuple[list[SynthPair], list[SynthPair]] | None = None,
                     ) -> VariantComparison:
    """Every variant on identical data per seed; median rankings by mean deviation and MSE.

    Each seed draws fresh train and test pairs from ``spec`` unless a fixed
    ``(train, test)`` dataset is given, in which case the seed only varies the
    training streams.
    """
    if not variants:
        throw("compare_variants needs at least one variant")
    if not seeds:
        throw("compare_variants needs at least one seed")
    for label in variants:
        parse_variant(label)

    log = logger("evaluation")
    reports: list[AlignmentReport] = []
    for seed in seeds:
        if dataset is None:
            train, test = _seed_dataset(spec, eval_config, seed)
        else:
            train, test = dataset
        views, _ = prepare_views([(p.X, p.Y) for p in train], feature_config)
        config = replace(train_config, seed=seed)

        for label in variants:
            run = fit_variant(label, views, config, base_loss)
            downstream = downstream_eval(train, run.paths, test, eval_config, seed)
            report = pooled_alignment_error(
                run.paths, [p.true_map for p in train], dtw_cost=run.final_dtw_cost,
                variant=label, seed=seed, downstream_mse=downstream.mse,
                oracle_mse=downstream.oracle_mse,
            )
            log.info("%s seed %d: mean dev %.3f, mse %.4f (oracle %.4f)", label, seed,
                     report.mean_abs_deviation, downstream.mse, downstream.oracle_mse)
            reports.append(report)

    comparison = VariantComparison(
        reports=reports,
        ranking=median_ranking(reports, variants, "mean_abs_deviation"),
        mse_ranking=median_ranking(reports, variants, "downstream_mse"),
    )
    if out_path is not None:
        write_report(out_path, reports)
    return comparison


def median_ranking(reports: list[AlignmentReport], variants: list[str],
                   metric: str) -> list[tuple[str, float]]:
    """(variant, median metric) pairs, best (lowest) first; NaN medians sort last."""
    ranking = []
    for label in dict.fromkeys(variants):
        values = [getattr(r, metric) for r in reports if r.variant == label]
        ranking.append((label, float(np.median(values))))
    ranking.sort(key=lambda item: (not np.isfinite(item[1]), item[1]))
    return ranking


def write_report(path: str | Path, reports: list[AlignmentReport]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(REPORT_NOTE + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerow(report.row())


def read_report(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
