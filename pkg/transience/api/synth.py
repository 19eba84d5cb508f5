# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Synthetic two-view sequence pairs with a known time warp.

A smooth latent trajectory ``h`` drives both views through different
nonlinear observation maps::

    X[:, t] = tanh(A_x h_t) + b_x + noise
    Y[:, s] = tanh(A_y h_{map(s)}) + b_y + noise

where ``map`` is a monotone y→x correspondence. The map is kept as ground
truth (``truth.csv``: ``y_index,x_index``, 0-based on disk). Every pair of a
dataset shares one observation model, the way every utterance of a corpus
shares one speaker.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from transience.utils.common import child_seed, logger, throw
from transience.utils.seqcore import (
    DEFAULT_CONTEXT_WIDTH,
    DEFAULT_PCA_RETAINED,
    FeatureSequence,
    PcaModel,
    add_deltas,
    context_window,
    pca_apply,
    pca_fit,
    read_sequence,
    write_sequence,
    zscore_fit_apply,
)

WARP_ROUNDING_SLACK = 1e-9


@dataclass(frozen=True)
class SynthSpec:
    dim_x: int = 12
    dim_y: int = 25
    latent_k: int = 6
    length_x: int = 200
    length_y: int = 240
    length_spread: int = 10
    obs_noise: float = 0.1
    warp_jitter: float = 0.5
    smoothness: float = 4.0
    shared_map: bool = False

    def __post_init__(self):
        for key in ("dim_x", "dim_y", "latent_k"):
            if int(getattr(self, key)) < 1:
                throw(f"{key} must be at least 1, got {getattr(self, key)}")
        if self.latent_k > min(self.dim_x, self.dim_y):
            throw(f"latent_k={self.latent_k} exceeds min(dim_x, dim_y)={min(self.dim_x, self.dim_y)}")
        if self.length_spread < 0:
            throw(f"length_spread must be non-negative, got {self.length_spread}")
        for key in ("length_x", "length_y"):
            if getattr(self, key) - self.length_spread < 2:
                throw(f"{key} minus length_spread must be at least 2, got {getattr(self, key)}")
        if self.obs_noise < 0:
            throw(f"obs_noise must be non-negative, got {self.obs_noise}")
        if not 0 <= self.warp_jitter < 1:
            throw(f"warp_jitter must lie in [0, 1), got {self.warp_jitter}")
        if self.smoothness <= 0:
            throw(f"smoothness must be positive, got {self.smoothness}")
        if self.shared_map and self.dim_x != self.dim_y:
            throw("shared_map needs dim_x == dim_y")


@dataclass(frozen=True)
class ObservationModel:
    A_x: np.ndarray  # dim_x × k
    b_x: np.ndarray
    A_y: np.ndarray  # dim_y × k
    b_y: np.ndarray


@dataclass(frozen=True)
class SynthPair:
    X: FeatureSequence
    Y: FeatureSequence
    true_map: np.ndarray  # length T_y, 1-based x index per y frame
    seed: int = 0

    def __post_init__(self):
        m = np.asarray(self.true_map, dtype=np.int64)
        if m.shape != (self.Y.length,):
            throw(f"true_map has {m.size} entries for {self.Y.length} y frames")
        if m[0] != 1 or m[-1] != self.X.length or np.any(np.diff(m) < 0):
            throw("true_map must be non-decreasing from 1 to the x length")
        object.__setattr__(self, "true_map", m)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------
def gen_latent(length: int, k: int, smoothness: float, rng: np.random.Generator) -> np.ndarray:
    """Smoothed Gaussian random walk, standardised per dimension (k × length)."""
    if length < 2:
        throw(f"latent trajectory needs at least 2 frames, got {length}")
    walk = np.cumsum(rng.normal(size=(k, length)), axis=1)
    smooth = gaussian_filter1d(walk, sigma=smoothness, axis=1, mode="nearest")
    smooth -= smooth.mean(axis=1, keepdims=True)
    std = smooth.std(axis=1, keepdims=True)
    return smooth / np.where(std > 0, std, 1.0)


def gen_warp(length_x: int, length_y: int, jitter: float,
             rng: np.random.Generator) -> np.ndarray:
    """Monotone 1-based map from each of ``length_y`` frames onto 1..length_x."""
    if length_x < 2 or length_y < 2:
        throw(f"warp needs both lengths ≥ 2, got ({length_x}, {length_y})")
    if not 0 <= jitter < 1:
        throw(f"warp_jitter must lie in [0, 1), got {jitter}")
    steps = rng.uniform(1.0 - jitter, 1.0 + jitter, size=length_y - 1)
    position = np.concatenate([[0.0], np.cumsum(steps)])
    scaled = position / position[-1] * (length_x - 1)
    warp = np.ceil(scaled - WARP_ROUNDING_SLACK).astype(np.int64) + 1
    warp[0], warp[-1] = 1, length_x
    return np.maximum.accumulate(np.clip(warp, 1, length_x))


def gen_observation_model(spec: SynthSpec, rng: np.random.Generator) -> ObservationModel:
    k = spec.latent_k
    A_x = rng.normal(size=(spec.dim_x, k)) / np.sqrt(k)
    b_x = rng.normal(scale=0.1, size=spec.dim_x)
    if spec.shared_map:
        return ObservationModel(A_x, b_x, A_x.copy(), b_x.copy())
    A_y = rng.normal(size=(spec.dim_y, k)) / np.sqrt(k)
    b_y = rng.normal(scale=0.1, size=spec.dim_y)
    return ObservationModel(A_x, b_x, A_y, b_y)


def gen_pair(spec: SynthSpec, rng: np.random.Generator, model: ObservationModel | None = None,
             lengths: tuple[int, int] | None = None, seed: int = 0) -> SynthPair:
    """One pair of views of a shared trajectory; ``seed`` only labels the result."""
    if model is None:
        model = gen_observation_model(spec, rng)
    length_x, length_y = lengths or (spec.length_x, spec.length_y)
    h = gen_latent(length_x, spec.latent_k, spec.smoothness, rng)
    true_map = gen_warp(length_x, length_y, spec.warp_jitter, rng)

    X = np.tanh(model.A_x @ h) + model.b_x[:, None]
    Y = np.tanh(model.A_y @ h[:, true_map - 1]) + model.b_y[:, None]
    if spec.obs_noise > 0:
        X = X + rng.normal(scale=spec.obs_noise, size=X.shape)
        Y = Y + rng.normal(scale=spec.obs_noise, size=Y.shape)
    X, _, _ = zscore_fit_apply(FeatureSequence(X))
    Y, _, _ = zscore_fit_apply(FeatureSequence(Y))
    return SynthPair(X=X, Y=Y, true_map=true_map, seed=seed)


def gen_dataset(spec: SynthSpec, n_pairs: int, rng: np.random.Generator,
                model: ObservationModel | None = None) -> tuple[ObservationModel, list[SynthPair]]:
    """``n_pairs`` pairs under one observation model, lengths jittered by ``length_spread``."""
    if n_pairs < 1:
        throw(f"n_pairs must be at least 1, got {n_pairs}")
    if model is None:
        model = gen_observation_model(spec, rng)
    pairs = []
    for _ in range(n_pairs):
        spread = spec.length_spread
        lengths = (
            spec.length_x + int(rng.integers(-spread, spread + 1)),
            spec.length_y + int(rng.integers(-spread, spread + 1)),
        )
        seed = child_seed(rng)
        pairs.append(gen_pair(spec, np.random.default_rng(seed), model, lengths, seed=seed))
    logger("synth").debug("generated %d pairs", n_pairs)
    return model, pairs


# ---------------------------------------------------------------------------
# Feature preparation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FeatureConfig:
    context_width: int = DEFAULT_CONTEXT_WIDTH
    pca_retained: int = DEFAULT_PCA_RETAINED  # 0 disables PCA
    use_deltas: bool = True

    def __post_init__(self):
        if self.context_width < 1 or self.context_width % 2 == 0:
            throw(f"context_width must be an odd positive integer, got {self.context_width}")
        if self.pca_retained < 0:
            throw(f"pca_retained must be non-negative, got {self.pca_retained}")


def prepare_views(pairs: list[tuple[FeatureSequence, FeatureSequence]], config: FeatureConfig,
                  pca: PcaModel | None = None):
    """Network inputs for each pair: context-windowed, PCA-reduced X; delta-augmented Y.

    The PCA is fitted on every X frame of ``pairs`` unless ``pca`` is given.
    Each prepared sequence is z-scored on its own; lengths are preserved.
    Returns ``(prepared_pairs, pca)``.
    """
    if not pairs:
        throw("prepare_views needs at least one pair")
    stacked = [context_window(X, config.context_width) for X, _ in pairs]
    if config.pca_retained and pca is None:
        frames = np.hstack([s.data for s in stacked])
        bound = min(frames.shape[1] - 1, frames.shape[0])
        retained = min(config.pca_retained, bound)
        if retained < config.pca_retained:
            logger("synth").info("pca_retained clipped from %d to %d", config.pca_retained, retained)
        pca = pca_fit(frames, retained)

    prepared = []
    for ctx, (_, Y) in zip(stacked, pairs):
        X = FeatureSequence(pca_apply(pca, ctx.data)) if pca is not None else ctx
        Y = add_deltas(Y) if config.use_deltas else Y
        prepared.append((zscore_fit_apply(X)[0], zscore_fit_apply(Y)[0]))
    return prepared, pca


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------
def write_truth(path: str | Path, true_map: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y_index", "x_index"])
        for s, x in enumerate(np.asarray(true_map).tolist()):
            writer.writerow([s, x - 1])


def read_truth(path: str | Path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        throw(f"{path}: empty truth file")
    if [int(r["y_index"]) for r in rows] != list(range(len(rows))):
        throw(f"{path}: y_index must run 0..{len(rows) - 1}")
    return np.array([int(r["x_index"]) + 1 for r in rows], dtype=np.int64)


def write_dataset(out_dir: str | Path, pairs: list[SynthPair]) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for k, pair in enumerate(pairs):
        pair_dir = out_dir / f"pair_{k:03d}"
        pair_dir.mkdir(parents=True, exist_ok=True)
        write_sequence(pair_dir / "x.seq", pair.X)
        write_sequence(pair_dir / "y.seq", pair.Y)
        write_truth(pair_dir / "truth.csv", pair.true_map)
        written.append(pair_dir)
    return written


def read_dataset(data_dir: str | Path) -> list[SynthPair]:
    """Pairs in directory order; ``seed`` is set to the pair's position."""
    pair_dirs = sorted(p for p in Path(data_dir).glob("pair_*") if p.is_dir())
    if not pair_dirs:
        throw(f"no pair_* directories under {data_dir}")
    return [
        SynthPair(
            X=read_sequence(d / "x.seq"), Y=read_sequence(d / "y.seq"),
            true_map=read_truth(d / "truth.csv"), seed=k,
        )
        for k, d in enumerate(pair_dirs)
    ]
