# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""DTW engine and the alternating alignment loops.

Both loops start from the uniform diagonal path and alternate two phases:

1. fit the projection on the frame pairs selected by the current paths
   (Adam on :func:`total_objective` for TRANSIENCE, closed-form linear CCA for
   CTW);
2. re-run DTW for every sequence pair on the frozen projections.

They stop once fewer than ``convergence_threshold`` of the path cells change
between iterations, or after ``max_outer_iterations``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

from transience.exceptions import DivergenceError, NonFiniteError, NotPSDError, NumericalError
from transience.networks.losses import (
    BANDWIDTHS,
    DEFAULT_BANDWIDTH,
    DEPENDENCE_MMI,
    KdeBandwidths,
    LossConfig,
    total_objective,
)
from transience.networks.net import (
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_EPS,
    DEFAULT_HIDDEN,
    DEFAULT_LATENT_DIM,
    DEFAULT_LR,
    DEFAULT_NOISE_SIGMA,
    DEFAULT_PRIVATE_DIM,
    DEFAULT_SLOPE,
    AdamState,
    EncoderStack,
    adam_step,
    flatten_groups,
    log_topology,
)
from transience.utils.common import (
    STREAM_BATCHING,
    STREAM_INIT,
    STREAM_NOISE,
    STREAM_SHUFFLE,
    log_error,
    logger,
    make_rng,
    throw,
)
from transience.utils.matkernel import (
    DEFAULT_COV_REGULARIZER,
    DEFAULT_EIGEN_FLOOR,
    covariance,
    inv_sqrt_psd,
)
from transience.utils.seqcore import (
    FeatureSequence,
    WarpingPathPair,
    gather_aligned,
    uniform_init_path,
    write_path,
)

METRIC_COSINE = "cosine"
METRIC_EUCLIDEAN = "euclidean"
METRICS = (METRIC_COSINE, METRIC_EUCLIDEAN)

NORM_GUARD = 1e-12
BRUTE_FORCE_MAX = 8

HISTORY_COLUMNS = ["outer_iter", "objective", "dtw_cost_total", "path_change_fraction"]


@dataclass(frozen=True)
class DtwResult:
    path: WarpingPathPair
    total_cost: float
    cost_matrix: np.ndarray | None = None


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    slope: float = DEFAULT_SLOPE
    latent_dim: int = DEFAULT_LATENT_DIM
    private_dim: int = DEFAULT_PRIVATE_DIM
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    learning_rate: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    batch_size: int = 512
    epochs_per_phase: int = 10
    min_updates_per_phase: int = 200
    max_outer_iterations: int = 20
    convergence_threshold: float = 0.01
    dtw_metric: str = METRIC_COSINE
    kde_bandwidth_init: float = DEFAULT_BANDWIDTH
    cca_regularizer: float = DEFAULT_COV_REGULARIZER
    eigen_floor: float = DEFAULT_EIGEN_FLOOR
    seed: int = 0

    def __post_init__(self):
        for key in ("latent_dim", "private_dim", "batch_size", "epochs_per_phase",
                    "max_outer_iterations"):
            if int(getattr(self, key)) < 1:
                throw(f"{key} must be at least 1, got {getattr(self, key)}")
        if not self.hidden or min(self.hidden) < 1:
            throw(f"hidden_layers must be positive sizes, got {self.hidden}")
        if self.min_updates_per_phase < 0:
            throw(f"min_updates_per_phase must be non-negative, got {self.min_updates_per_phase}")
        if self.dtw_metric not in METRICS:
            throw(f"dtw_metric must be one of {METRICS}, got {self.dtw_metric!r}")
        if not 0 <= self.convergence_threshold <= 1:
            throw(f"convergence_threshold must lie in [0, 1], got {self.convergence_threshold}")
        if self.noise_sigma < 0:
            throw(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.kde_bandwidth_init <= 0:
            throw(f"kde_bandwidth_init must be positive, got {self.kde_bandwidth_init}")
        if self.seed < 0:
            throw(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class HistoryRecord:
    outer_iter: int
    objective: float
    dtw_cost_total: float
    path_change_fraction: float


@dataclass(frozen=True)
class LinearProjection:
    """Linear CCA projection: ``z = W (v - mean)`` for each view."""

    mean_x: np.ndarray
    mean_y: np.ndarray
    weights_x: np.ndarray  # k × d_x
    weights_y: np.ndarray  # k × d_y
    correlations: np.ndarray

    def project(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.weights_x @ (X - self.mean_x[:, None]),
            self.weights_y @ (Y - self.mean_y[:, None]),
        )


@dataclass
class TrainRun:
    variant: str
    paths: list[WarpingPathPair]
    history: list[HistoryRecord] = field(default_factory=list)
    stack: EncoderStack | None = None
    bandwidths: KdeBandwidths | None = None
    projection: LinearProjection | None = None
    initial_path_cost: float = float("nan")

    def project(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.stack is not None:
            return self.stack.encode(X, Y)
        if self.projection is not None:
            return self.projection.project(X, Y)
        throw("this run carries no trained projection")

    @property
    def final_dtw_cost(self) -> float:
        return self.history[-1].dtw_cost_total if self.history else float("nan")


# ---------------------------------------------------------------------------
# DTW
# ---------------------------------------------------------------------------
def pairwise_distance(Zx: np.ndarray, Zy: np.ndarray, metric: str = METRIC_COSINE) -> np.ndarray:
    """Frame-by-frame distances between two latent sequences (T_x × T_y)."""
    Zx = np.asarray(Zx, dtype=float)
    Zy = np.asarray(Zy, dtype=float)
    if Zx.ndim != 2 or Zy.ndim != 2 or Zx.shape[0] != Zy.shape[0]:
        throw(f"latent dims differ: {Zx.shape} vs {Zy.shape}")
    if metric == METRIC_COSINE:
        norms = np.outer(np.linalg.norm(Zx, axis=0), np.linalg.norm(Zy, axis=0))
        # 1 - cos rounds a few ulps below zero on parallel columns.
        return np.maximum(1.0 - (Zx.T @ Zy) / np.maximum(norms, NORM_GUARD), 0.0)
    if metric == METRIC_EUCLIDEAN:
        return cdist(Zx.T, Zy.T, metric="euclidean")
    throw(f"dtw_metric must be one of {METRICS}, got {metric!r}")


def _check_cost_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.size == 0:
        throw(f"cost matrix must be a non-empty 2-D array, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        throw("cost matrix contains NaN or Inf", NumericalError)
    if D.min() < 0:
        throw("cost matrix must be non-negative")
    return D


def dtw(D) -> DtwResult:
    """Minimal-cost monotone path through ``D`` with steps (1,1), (1,0), (0,1).

    Backtrace ties prefer the diagonal, then the x-advance, then the y-advance.
    """
    D = _check_cost_matrix(D)
    tx, ty = D.shape
    # Python floats are float64; plain lists keep the inner loop fast.
    cost = D.tolist()
    acc = [[0.0] * ty for _ in range(tx)]
    first = acc[0]
    first[0] = cost[0][0]
    for j in range(1, ty):
        first[j] = cost[0][j] + first[j - 1]
    for i in range(1, tx):
        prev, row, c = acc[i - 1], acc[i], cost[i]
        row[0] = c[0] + prev[0]
        for j in range(1, ty):
            row[j] = c[j] + min(prev[j - 1], prev[j], row[j - 1])

    i, j = tx - 1, ty - 1
    ix, iy = [i], [j]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1][j - 1], acc[i - 1][j], acc[i][j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        ix.append(i)
        iy.append(j)
    path = WarpingPathPair.from_zero_based(ix[::-1], iy[::-1])
    return DtwResult(path=path, total_cost=float(acc[-1][-1]), cost_matrix=D)


def brute_force_dtw(D) -> DtwResult:
    """Exhaustive search over every valid path; small matrices only."""
    D = _check_cost_matrix(D)
    tx, ty = D.shape
    if tx > BRUTE_FORCE_MAX or ty > BRUTE_FORCE_MAX:
        throw(f"brute_force_dtw is limited to {BRUTE_FORCE_MAX}×{BRUTE_FORCE_MAX}, got {tx}×{ty}")

    best_cost = np.inf
    best_cells: list[tuple[int, int]] = []
    stack = [((0, 0), float(D[0, 0]), [(0, 0)])]
    while stack:
        (i, j), cost, cells = stack.pop()
        if (i, j) == (tx - 1, ty - 1):
            if cost < best_cost:
                best_cost, best_cells = cost, cells
            continue
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            ni, nj = i + di, j + dj
            if ni < tx and nj < ty:
                stack.append(((ni, nj), cost + D[ni, nj], cells + [(ni, nj)]))
    ix, iy = zip(*best_cells)
    return DtwResult(WarpingPathPair.from_zero_based(ix, iy), float(best_cost), D)


@dataclass(frozen=True)
class DtwSelfTest:
    trials: int
    mismatches: list[tuple[int, int]]

    @property
    def passed(self) -> bool:
        return not self.mismatches


def dtw_self_test(rng: np.random.Generator, trials: int = 200, max_size: int = 6) -> DtwSelfTest:
    """Compare :func:`dtw` with exhaustive search on random cost matrices.

    Costs must agree exactly and every returned path must be valid; the
    shapes of the failing matrices are collected.
    """
    if trials < 1:
        throw(f"trials must be at least 1, got {trials}")
    if not 1 <= max_size <= BRUTE_FORCE_MAX:
        throw(f"max_size must lie in 1..{BRUTE_FORCE_MAX}, got {max_size}")
    mismatches = []
    for _ in range(trials):
        tx, ty = (int(v) for v in rng.integers(1, max_size + 1, size=2))
        D = rng.uniform(0.0, 1.0, size=(tx, ty))
        fast = dtw(D)
        if fast.total_cost != brute_force_dtw(D).total_cost or not fast.path.is_valid(tx, ty):
            mismatches.append((tx, ty))
    return DtwSelfTest(trials=trials, mismatches=mismatches)


def path_cost(D: np.ndarray, path: WarpingPathPair) -> float:
    cost = 0.0
    for v in D[path.phi_x - 1, path.phi_y - 1]:
        cost += v
    return float(cost)


def path_change_fraction(old: list[WarpingPathPair], new: list[WarpingPathPair]) -> float:
    """Share of the new paths' cells that were not on the old paths."""
    changed = sum(len(n.cells() - o.cells()) for o, n in zip(old, new))
    return changed / sum(n.T for n in new)


# ---------------------------------------------------------------------------
# Shared loop plumbing
# ---------------------------------------------------------------------------
def _check_pairs(pairs: list[tuple[FeatureSequence, FeatureSequence]]) -> tuple[int, int]:
    if not pairs:
        throw("training needs at least one sequence pair")
    dim_x, dim_y = pairs[0][0].dim, pairs[0][1].dim
    for k, (X, Y) in enumerate(pairs):
        if X.dim != dim_x or Y.dim != dim_y:
            throw(f"pair {k} has dims ({X.dim}, {Y.dim}), expected ({dim_x}, {dim_y})")
    return dim_x, dim_y


def _pooled_frames(pairs, paths) -> tuple[np.ndarray, np.ndarray]:
    gathered = [gather_aligned(X, Y, p) for (X, Y), p in zip(pairs, paths)]
    return np.hstack([g[0] for g in gathered]), np.hstack([g[1] for g in gathered])


def align_pairs(run: TrainRun, pairs: list[tuple[FeatureSequence, FeatureSequence]],
                metric: str = METRIC_COSINE) -> list[DtwResult]:
    """DTW of every pair on the frozen projections of a trained run."""
    results = []
    for X, Y in pairs:
        Zx, Zy = run.project(X.data, Y.data)
        result = dtw(pairwise_distance(Zx, Zy, metric))
        result.path.check(X.length, Y.length)
        results.append(result)
    return results


def _realign(run: TrainRun, pairs, metric: str) -> tuple[list[WarpingPathPair], float, float]:
    """DTW for every pair on frozen projections.

    Returns the new paths, their total cost and the cost of the current paths.
    """
    new_paths, total, current = [], 0.0, 0.0
    for (X, Y), old in zip(pairs, run.paths):
        Zx, Zy = run.project(X.data, Y.data)
        D = pairwise_distance(Zx, Zy, metric)
        result = dtw(D)
        result.path.check(X.length, Y.length)
        new_paths.append(result.path)
        total += result.total_cost
        current += path_cost(D, old)
    return new_paths, total, current


def _alternate(run: TrainRun, pairs, config: TrainConfig, fit_phase) -> TrainRun:
    log = logger("align")
    for outer in range(1, config.max_outer_iterations + 1):
        objective = fit_phase(outer)
        if not np.isfinite(objective):
            message = f"objective diverged ({objective}) at outer iteration {outer}"
            log_error("training diverged", message)
            raise DivergenceError(message, iteration=outer)

        new_paths, cost, current = _realign(run, pairs, config.dtw_metric)
        if outer == 1:
            run.initial_path_cost = current
        change = path_change_fraction(run.paths, new_paths)
        run.paths = new_paths
        run.history.append(HistoryRecord(outer, float(objective), cost, change))
        log.info(
            "%s iter %d: objective %.6g, dtw cost %.6g, path change %.4f",
            run.variant, outer, objective, cost, change,
        )
        if change < config.convergence_threshold:
            break
    return run


# ---------------------------------------------------------------------------
# TRANSIENCE
# ---------------------------------------------------------------------------
def transience_fit(pairs: list[tuple[FeatureSequence, FeatureSequence]], loss_config: LossConfig,
                   config: TrainConfig, stack: EncoderStack | None = None) -> TrainRun:
    """Alternate encoder training on aligned frames with DTW re-alignment.

    ``stack`` replaces the randomly initialised networks when given; its
    autoencoder and private flags must match ``loss_config``.
    """
    dim_x, dim_y = _check_pairs(pairs)
    if stack is None:
        stack = EncoderStack.build(
            dim_x, dim_y, make_rng(config.seed, STREAM_INIT),
            latent_dim=config.latent_dim, private_dim=config.private_dim,
            hidden=config.hidden, slope=config.slope,
            use_autoencoder=loss_config.use_autoencoder,
            use_private=loss_config.use_private,
        )
    log_topology(stack)

    bandwidths = None
    groups = stack.parameters()
    if loss_config.dependence == DEPENDENCE_MMI:
        s = config.kde_bandwidth_init
        bandwidths = KdeBandwidths.from_sigmas(s, s, s)
        groups[BANDWIDTHS] = bandwidths.params()
    params = flatten_groups(groups)
    adam = AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
                     eps=config.eps)

    batching = make_rng(config.seed, STREAM_BATCHING)
    shuffle = make_rng(config.seed, STREAM_SHUFFLE)
    noise = make_rng(config.seed, STREAM_NOISE)

    run = TrainRun(
        variant=loss_config.dependence, stack=stack, bandwidths=bandwidths,
        paths=[uniform_init_path(X.length, Y.length) for X, Y in pairs],
    )

    def fit_phase(outer: int) -> float:
        Xa, Ya = _pooled_frames(pairs, run.paths)
        total = Xa.shape[1]
        n_batches = math.ceil(total / config.batch_size)
        # Few pooled frames mean few batches; stretch the phase to a minimum of Adam updates.
        epochs = max(config.epochs_per_phase, math.ceil(config.min_updates_per_phase / n_batches))
        values: list[float] = []
        for _ in range(epochs):
            values = []
            for idx in np.array_split(batching.permutation(total), n_batches):
                try:
                    value, grads = total_objective(
                        stack, Xa[:, idx], Ya[:, idx], loss_config, shuffle, bandwidths,
                        noise_sigma=config.noise_sigma, noise_rng=noise,
                    )
                    if not np.isfinite(value):
                        return value
                    if set(grads) != set(groups):
                        throw(f"objective returned gradients for {sorted(grads)}, "
                              f"expected {sorted(groups)}")
                    adam_step(params, flatten_groups(grads), adam)
                except (NonFiniteError, NotPSDError) as exc:
                    log_error("training diverged", str(exc))
                    raise DivergenceError(
                        f"{exc} (outer iteration {outer})", iteration=outer
                    ) from exc
                values.append(value)
        return float(np.mean(values))

    return _alternate(run, pairs, config, fit_phase)


# ---------------------------------------------------------------------------
# CTW baseline
# ---------------------------------------------------------------------------
def fit_linear_cca(X: np.ndarray, Y: np.ndarray, components: int,
                   regularizer: float = DEFAULT_COV_REGULARIZER,
                   floor: float = DEFAULT_EIGEN_FLOOR) -> LinearProjection:
    """Closed-form CCA on paired columns: whiten both views, SVD of the cross term."""
    d_x, d_y = X.shape[0], Y.shape[0]
    k = min(components, d_x, d_y)
    Sx = inv_sqrt_psd(covariance(X, X, regularizer, same_view=True), floor)
    Sy = inv_sqrt_psd(covariance(Y, Y, regularizer, same_view=True), floor)
    U, s, Vt = la.svd(Sx @ covariance(X, Y) @ Sy)
    return LinearProjection(
        mean_x=X.mean(axis=1),
        mean_y=Y.mean(axis=1),
        weights_x=U[:, :k].T @ Sx,
        weights_y=Vt[:k] @ Sy,
        correlations=s[:k],
    )


def ctw_fit(pairs: list[tuple[FeatureSequence, FeatureSequence]],
            config: TrainConfig) -> TrainRun:
    _check_pairs(pairs)
    run = TrainRun(variant="ctw", paths=[uniform_init_path(X.length, Y.length) for X, Y in pairs])

    def fit_phase(outer: int) -> float:
        Xa, Ya = _pooled_frames(pairs, run.paths)
        run.projection = fit_linear_cca(
            Xa, Ya, config.latent_dim, config.cca_regularizer, config.eigen_floor
        )
        return -float(np.sqrt(np.sum(run.projection.correlations ** 2)))

    return _alternate(run, pairs, config, fit_phase)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------
def write_history(path: str | Path, history: list[HistoryRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([
                rec.outer_iter, f"{rec.objective:.17g}", f"{rec.dtw_cost_total:.17g}",
                f"{rec.path_change_fraction:.17g}",
            ])


def write_paths(out_dir: str | Path, paths: list[WarpingPathPair]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, p in enumerate(paths):
        target = out_dir / f"path_{k:03d}.csv"
        write_path(target, p)
        written.append(target)
    return written
