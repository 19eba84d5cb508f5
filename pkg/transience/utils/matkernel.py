# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Dense symmetric linear algebra for CCA and PCA.

Matrices here are small (latent and feature dimensions of a few dozen), so
everything goes through ``scipy.linalg.eigh`` on the full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from transience.exceptions import NonFiniteError, NotPSDError
from transience.utils.common import throw

DEFAULT_EIGEN_FLOOR = 1e-6
DEFAULT_COV_REGULARIZER = 1e-4
# Numerically negative eigenvalues down to this are treated as zero.
PSD_TOLERANCE = 1e-8


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def covariance(A: np.ndarray, B: np.ndarray, regularizer: float = 0.0,
               same_view: bool | None = None) -> np.ndarray:
    """Sample cross-covariance of column-sample matrices ``A`` (d_a×N) and ``B`` (d_b×N).

    ``regularizer·I`` is added when both arguments are the same view; pass
    ``same_view`` to override the identity check.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[1]
    if n != B.shape[1]:
        throw(f"covariance views disagree on sample count: {n} vs {B.shape[1]}")
    if n < 2:
        throw(f"covariance needs at least 2 samples, got {n}")
    if regularizer < 0:
        throw(f"regularizer must be non-negative, got {regularizer}")
    if same_view is None:
        same_view = A is B

    a0 = A - A.mean(axis=1, keepdims=True)
    b0 = B - B.mean(axis=1, keepdims=True)
    cov = a0 @ b0.T / (n - 1)
    if same_view:
        if cov.shape[0] != cov.shape[1]:
            throw("same_view covariance requires views of equal dimension")
        cov = cov + regularizer * np.eye(cov.shape[0])
    return cov


def sym_eig(M: np.ndarray) -> SymmetricEigen:
    """Eigendecomposition of the symmetric part of ``M``, eigenvalues ascending."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        throw(f"sym_eig expects a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        throw("matrix contains NaN or Inf", NonFiniteError)
    sym = (M + M.T) / 2.0
    values, vectors = la.eigh(sym)
    return SymmetricEigen(eigenvalues=values, eigenvectors=vectors)


def inv_sqrt_psd(M: np.ndarray, floor: float = DEFAULT_EIGEN_FLOOR) -> np.ndarray:
    """``M^{-1/2}`` for a symmetric PSD matrix, eigenvalues floored at ``floor``."""
    if floor <= 0:
        throw(f"eigenvalue floor must be positive, got {floor}")
    eig = sym_eig(M)
    if eig.eigenvalues.size and eig.eigenvalues[0] < -PSD_TOLERANCE:
        throw(
            f"matrix is not positive semi-definite (smallest eigenvalue {eig.eigenvalues[0]:.3e})",
            NotPSDError,
        )
    scale = np.maximum(eig.eigenvalues, floor) ** -0.5
    v = eig.eigenvectors
    out = (v * scale) @ v.T
    return (out + out.T) / 2.0

