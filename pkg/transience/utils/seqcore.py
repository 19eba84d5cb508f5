# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Sequence containers, warping paths and the feature pipeline.

Conventions
-----------
* A sequence is a ``dim × length`` matrix: one column per frame.
* Warping path indices are **1-based** in memory (``phi_x[0] == 1``) and
  **0-based** on disk (``t,phi_x,phi_y`` CSV).
* Sequence files are a ``dim=<d> len=<T>`` header followed by ``T`` lines of
  ``d`` space-separated floats (one frame per line).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d

from transience.utils.common import throw
from transience.utils.matkernel import covariance, sym_eig

# Dimensions whose spread falls below this are centred but not scaled.
STD_FLOOR = 1e-12
DEFAULT_CONTEXT_WIDTH = 11
DEFAULT_PCA_RETAINED = 30

DELTA_STENCIL = np.array([-0.5, 0.0, 0.5])
ACCEL_STENCIL = np.array([1.0, -2.0, 1.0])


@dataclass(frozen=True)
class FeatureSequence:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            throw(f"sequence data must be 2-D (dim × length), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            throw(f"sequence must have dim ≥ 1 and length ≥ 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            throw("sequence contains NaN or Inf entries")
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class WarpingPathPair:
    phi_x: np.ndarray
    phi_y: np.ndarray

    def __post_init__(self):
        phi_x = np.asarray(self.phi_x, dtype=np.int64).ravel()
        phi_y = np.asarray(self.phi_y, dtype=np.int64).ravel()
        if phi_x.shape != phi_y.shape or phi_x.size == 0:
            throw("warping path index sequences must be non-empty and of equal length")
        object.__setattr__(self, "phi_x", phi_x)
        object.__setattr__(self, "phi_y", phi_y)

    @property
    def T(self) -> int:
        return self.phi_x.size

    @property
    def length_x(self) -> int:
        return int(self.phi_x[-1])

    @property
    def length_y(self) -> int:
        return int(self.phi_y[-1])

    def check(self, length_x: int | None = None, length_y: int | None = None) -> None:
        """Raise unless the boundary and step conditions hold."""
        if self.phi_x[0] != 1 or self.phi_y[0] != 1:
            throw("warping path must start at (1, 1)")
        if length_x is not None and self.phi_x[-1] != length_x:
            throw(f"warping path must end at x index {length_x}, ends at {self.phi_x[-1]}")
        if length_y is not None and self.phi_y[-1] != length_y:
            throw(f"warping path must end at y index {length_y}, ends at {self.phi_y[-1]}")
        dx = np.diff(self.phi_x)
        dy = np.diff(self.phi_y)
        ok = ((dx == 0) | (dx == 1)) & ((dy == 0) | (dy == 1)) & ((dx + dy) > 0)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            throw(f"invalid warping step at t={bad + 1}: ({dx[bad]}, {dy[bad]})")

    def is_valid(self, length_x: int | None = None, length_y: int | None = None) -> bool:
        try:
            self.check(length_x, length_y)
        except Exception:
            return False
        return True

    def cells(self) -> set[tuple[int, int]]:
        return set(zip(self.phi_x.tolist(), self.phi_y.tolist()))

    @classmethod
    def from_zero_based(cls, ix, iy) -> "WarpingPathPair":
        return cls(np.asarray(ix) + 1, np.asarray(iy) + 1)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # components × input-dim, orthonormal rows
    retained: int
    explained: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# Warping paths
# ---------------------------------------------------------------------------
def _ceil_div(a: np.ndarray, b: int) -> np.ndarray:
    return -((-a) // b)


def uniform_init_path(length_x: int, length_y: int) -> WarpingPathPair:
    """Uniform diagonal alignment of two sequences over ``T = max(T_x, T_y)`` steps."""
    if int(length_x) < 1 or int(length_y) < 1:
        throw(f"sequence lengths must be positive, got ({length_x}, {length_y})")
    T = max(length_x, length_y)
    if T == 1:
        return WarpingPathPair(np.array([1]), np.array([1]))
    steps = np.arange(T, dtype=np.int64)  # t - 1
    # Integer ceiling keeps exact grid points exact.
    phi_x = 1 + _ceil_div(steps * (length_x - 1), T - 1)
    phi_y = 1 + _ceil_div(steps * (length_y - 1), T - 1)
    return WarpingPathPair(phi_x, phi_y)


def gather_aligned(X: FeatureSequence, Y: FeatureSequence,
                   path: WarpingPathPair) -> tuple[np.ndarray, np.ndarray]:
    """Frame pairs along ``path``: column t is (X[:, φx_t], Y[:, φy_t])."""
    if path.phi_x.min() < 1 or path.phi_x.max() > X.length:
        throw(f"path x indices out of range 1..{X.length}")
    if path.phi_y.min() < 1 or path.phi_y.max() > Y.length:
        throw(f"path y indices out of range 1..{Y.length}")
    return X.data[:, path.phi_x - 1], Y.data[:, path.phi_y - 1]


# ---------------------------------------------------------------------------
# Feature pipeline
# ---------------------------------------------------------------------------
def add_deltas(X: FeatureSequence) -> FeatureSequence:
    """Stack static, delta and acceleration features (edge-replicated)."""
    delta = correlate1d(X.data, DELTA_STENCIL, axis=1, mode="nearest")
    accel = correlate1d(X.data, ACCEL_STENCIL, axis=1, mode="nearest")
    return FeatureSequence(np.vstack([X.data, delta, accel]))


def zscore_fit_apply(X: FeatureSequence) -> tuple[FeatureSequence, np.ndarray, np.ndarray]:
    """Standardise every dimension; returns the sequence plus per-dim mean and scale."""
    if X.length < 2:
        throw(f"z-scoring needs at least 2 frames, got {X.length}")
    mean = X.data.mean(axis=1)
    std = X.data.std(axis=1)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return zscore_apply(X, mean, std), mean, std


def zscore_apply(X: FeatureSequence, mean: np.ndarray, std: np.ndarray) -> FeatureSequence:
    return FeatureSequence((X.data - mean[:, None]) / std[:, None])


def context_window(X: FeatureSequence, width: int = DEFAULT_CONTEXT_WIDTH) -> FeatureSequence:
    """Stack frames ``t-h … t+h`` (``h = (width-1)/2``) into one column per frame."""
    if width < 1 or width % 2 == 0:
        throw(f"context width must be an odd positive integer, got {width}")
    half = (width - 1) // 2
    padded = np.pad(X.data, ((0, 0), (half, half)), mode="edge")
    windows = sliding_window_view(padded, width, axis=1)  # dim × length × width
    stacked = windows.transpose(2, 0, 1).reshape(width * X.dim, X.length)
    return FeatureSequence(np.ascontiguousarray(stacked))


def pca_fit(X: np.ndarray, retained: int = DEFAULT_PCA_RETAINED) -> PcaModel:
    """Principal components of the column samples of ``X`` (dim × N)."""
    X = np.asarray(X, dtype=float)
    dim, n = X.shape
    bound = min(n - 1, dim)
    if retained < 1 or retained > bound:
        throw(f"pca retained={retained} must lie in 1..{bound} (samples-1, input dim)")
    eig = sym_eig(covariance(X, X, 0.0))
    order = np.argsort(eig.eigenvalues)[::-1][:retained]
    basis = eig.eigenvectors[:, order].T
    # Sign convention: the largest-magnitude loading of each component is positive.
    pivots = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(retained), pivots])
    basis = basis * np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(
        mean=X.mean(axis=1),
        basis=basis,
        retained=retained,
        explained=np.maximum(eig.eigenvalues[order], 0.0),
    )


def pca_apply(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[0] != model.basis.shape[1]:
        throw(f"pca input dim {X.shape[0]} does not match model dim {model.basis.shape[1]}")
    return model.basis @ (X - model.mean[:, None])


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------
def write_sequence(path: str | Path, X: FeatureSequence) -> None:
    np.savetxt(
        path, X.data.T, fmt="%.17g", delimiter=" ",
        header=f"dim={X.dim} len={X.length}", comments="",
    )


def read_sequence(path: str | Path) -> FeatureSequence:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
    try:
        meta = dict(item.split("=", 1) for item in header)
        dim, length = int(meta["dim"]), int(meta["len"])
    except (ValueError, KeyError):
        throw(f"{path}: malformed sequence header {' '.join(header)!r}")
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    if data.shape != (length, dim):
        throw(f"{path}: header says {dim}×{length}, body holds {data.shape[1]}×{data.shape[0]}")
    return FeatureSequence(data.T)


def write_path(path: str | Path, warp: WarpingPathPair) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "phi_x", "phi_y"])
        for t, (ix, iy) in enumerate(zip(warp.phi_x.tolist(), warp.phi_y.tolist())):
            writer.writerow([t, ix - 1, iy - 1])


def read_path(path: str | Path) -> WarpingPathPair:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        throw(f"{path}: empty warping path file")
    return WarpingPathPair.from_zero_based(
        [int(r["phi_x"]) for r in rows], [int(r["phi_y"]) for r in rows]
    )
