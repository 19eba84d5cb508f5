# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Dependence, reconstruction and prior losses with exact gradients.

Every loss takes column-sample latent matrices (d × N) and returns its value
together with the gradient with respect to each latent input.
``total_objective`` chains those gradients back through the networks of an
:class:`~transience.networks.net.EncoderStack`.

Sign conventions: the CCA and MMI values are *maximised* and the contrastive
value is *minimised*; ``total_objective`` is always minimised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from transience.exceptions import IllConditionedBatchError, NonFiniteError
from transience.networks.net import (
    DECODER_X,
    DECODER_Y,
    ENCODER_X,
    ENCODER_Y,
    PRIVATE_X,
    PRIVATE_Y,
    EncoderStack,
    backward,
    forward,
    inject_noise,
)
from transience.utils.common import logger, throw
from transience.utils.matkernel import DEFAULT_COV_REGULARIZER, DEFAULT_EIGEN_FLOOR, inv_sqrt_psd

DEPENDENCE_CCA = "cca"
DEPENDENCE_MMI = "mmi"
DEPENDENCE_CONTRASTIVE = "contrastive"
DEPENDENCES = (DEPENDENCE_CCA, DEPENDENCE_MMI, DEPENDENCE_CONTRASTIVE)

MMI_LITERAL = "literal"
MMI_SAMPLE_MEAN = "sample_mean"
MMI_MODES = (MMI_LITERAL, MMI_SAMPLE_MEAN)

DEFAULT_MARGIN = 0.5
DEFAULT_AE_WEIGHT = 1.0
DEFAULT_KL_WEIGHT = 1.0
DEFAULT_BANDWIDTH = 1.0

NORM_GUARD = 1e-12
MIN_BANDWIDTH = 1e-6
KL_VARIANCE_FLOOR = 1e-8

BANDWIDTHS = "bandwidths"


@dataclass(frozen=True)
class LossConfig:
    dependence: str = DEPENDENCE_CONTRASTIVE
    margin: float = DEFAULT_MARGIN
    ae_weight: float = DEFAULT_AE_WEIGHT  # lambda
    kl_weight: float = DEFAULT_KL_WEIGHT  # kappa
    cca_regularizer: float = DEFAULT_COV_REGULARIZER
    mmi_mode: str = MMI_SAMPLE_MEAN
    use_autoencoder: bool = False
    use_private: bool = False

    def __post_init__(self):
        if self.dependence not in DEPENDENCES:
            throw(f"loss must be one of {DEPENDENCES}, got {self.dependence!r}")
        if self.mmi_mode not in MMI_MODES:
            throw(f"mmi_mode must be one of {MMI_MODES}, got {self.mmi_mode!r}")
        if self.margin < 0:
            throw(f"margin must be non-negative, got {self.margin}")
        if self.ae_weight < 0:
            throw(f"ae_weight must be non-negative, got {self.ae_weight}")
        if self.kl_weight < 0:
            throw(f"kl_weight must be non-negative, got {self.kl_weight}")
        if self.cca_regularizer <= 0:
            throw(f"cca_regularizer must be positive, got {self.cca_regularizer}")


@dataclass
class KdeBandwidths:
    """Joint, x-marginal and y-marginal kernel widths, stored as logs."""

    log_sigma: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_sigmas(cls, joint: float = DEFAULT_BANDWIDTH, x: float = DEFAULT_BANDWIDTH,
                    y: float = DEFAULT_BANDWIDTH) -> "KdeBandwidths":
        sigmas = np.array([joint, x, y], dtype=float)
        if np.any(sigmas <= 0):
            throw(f"KDE bandwidths must be positive, got {sigmas.tolist()}")
        return cls(log_sigma=np.log(sigmas))

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def params(self) -> list[np.ndarray]:
        return [self.log_sigma]


# ---------------------------------------------------------------------------
# CCA
# ---------------------------------------------------------------------------
def cca_loss(Zx: np.ndarray, Zy: np.ndarray, reg: float = DEFAULT_COV_REGULARIZER,
             floor: float = DEFAULT_EIGEN_FLOOR):
    """Total canonical correlation ``sqrt(tr(TᵀT))``, T = Σxx^-½ Σxy Σyy^-½.

    Returns ``(value, grad_Zx, grad_Zy)``. With A = Σxx, B = Σyy, C = Σxy the
    squared value is tr(A⁻¹ C B⁻¹ Cᵀ), which the gradients differentiate.
    """
    d_x, n = Zx.shape
    d_y = Zy.shape[0]
    if Zy.shape[1] != n:
        throw(f"views disagree on batch size: {n} vs {Zy.shape[1]}")
    if n <= max(d_x, d_y):
        throw(
            f"batch of {n} frames is too small for latent dim {max(d_x, d_y)}",
            IllConditionedBatchError,
        )
    if reg <= 0:
        throw(f"cca regularizer must be positive, got {reg}")

    Hx = Zx - Zx.mean(axis=1, keepdims=True)
    Hy = Zy - Zy.mean(axis=1, keepdims=True)
    scale = 1.0 / (n - 1)
    A = scale * Hx @ Hx.T + reg * np.eye(d_x)
    B = scale * Hy @ Hy.T + reg * np.eye(d_y)
    C = scale * Hx @ Hy.T

    Ax = inv_sqrt_psd(A, floor)
    By = inv_sqrt_psd(B, floor)
    T = Ax @ C @ By
    value = float(np.sqrt(np.sum(T * T)))

    if value < NORM_GUARD:
        return value, np.zeros_like(Zx), np.zeros_like(Zy)

    A_inv = Ax @ Ax
    B_inv = By @ By
    AiCBi = A_inv @ C @ B_inv
    grad_A = -AiCBi @ C.T @ A_inv
    grad_B = -B_inv @ C.T @ AiCBi
    # d(value²)/dH, then chain through sqrt.
    g_hx = 2.0 * scale * (grad_A @ Hx + AiCBi @ Hy)
    g_hy = 2.0 * scale * (grad_B @ Hy + AiCBi.T @ Hx)
    factor = 1.0 / (2.0 * value)
    return value, factor * g_hx, factor * g_hy


# ---------------------------------------------------------------------------
# MMI with leave-one-out Gaussian KDE
# ---------------------------------------------------------------------------
def _sq_dists(Z: np.ndarray) -> np.ndarray:
    sq = np.sum(Z * Z, axis=0)
    D = sq[:, None] + sq[None, :] - 2.0 * Z.T @ Z
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _loo_log_density(D: np.ndarray, sigma: float, dim: int):
    """Leave-one-out log densities and the softmax weights over neighbours."""
    n = D.shape[0]
    logits = -D / (2.0 * sigma * sigma)
    np.fill_diagonal(logits, -np.inf)
    lse = logsumexp(logits, axis=1)
    weights = np.exp(logits - lse[:, None])
    log_p = lse - np.log(n - 1) - 0.5 * dim * np.log(2.0 * np.pi * sigma * sigma)
    return log_p, weights


def kde_log_density(Z: np.ndarray, sigma: float, query: np.ndarray | None = None) -> np.ndarray:
    """Gaussian-kernel density of the columns of ``Z``.

    Without ``query`` the leave-one-out density at each sample is returned;
    with ``query`` the full mixture density at each query column.
    """
    dim, n = Z.shape
    if query is None:
        return _loo_log_density(_sq_dists(Z), sigma, dim)[0]
    D = (
        np.sum(query * query, axis=0)[:, None]
        + np.sum(Z * Z, axis=0)[None, :]
        - 2.0 * query.T @ Z
    )
    np.maximum(D, 0.0, out=D)
    return (
        logsumexp(-D / (2.0 * sigma * sigma), axis=1)
        - np.log(n)
        - 0.5 * dim * np.log(2.0 * np.pi * sigma * sigma)
    )


def _effective_sigmas(bw: KdeBandwidths):
    raw = bw.sigmas
    clamped = raw < MIN_BANDWIDTH
    if np.any(clamped):
        logger("losses").warning(
            "KDE bandwidth below %.0e clamped: %s", MIN_BANDWIDTH, raw.tolist()
        )
    return np.maximum(raw, MIN_BANDWIDTH), clamped


def _density_grads(Z_list, D, weights, coef, sigma, dim):
    """Gradient contributions of ``Σ_i coef_i · log p_i`` for one density."""
    G = -(coef[:, None] * weights) / (2.0 * sigma * sigma)
    S = G + G.T
    row = S.sum(axis=1)
    grads = [2.0 * (Z * row[None, :] - Z @ S) for Z in Z_list]
    grad_log_sigma = float(np.sum(coef * (np.sum(weights * D, axis=1) / (sigma * sigma) - dim)))
    return grads, grad_log_sigma


def mmi_loss(Zx: np.ndarray, Zy: np.ndarray, bw: KdeBandwidths, mode: str = MMI_SAMPLE_MEAN):
    """Mutual information of paired latents from leave-one-out KDE densities.

    ``sample_mean``: (1/N) Σ log(p_joint / (p_x p_y)).
    ``literal``: Σ p_joint · log(p_joint / (p_x p_y)), each term weighted by
    the joint density value.

    Returns ``(value, grad_Zx, grad_Zy, grad_log_sigma)``; the last is ordered
    (joint, x, y) like :class:`KdeBandwidths`.
    """
    if mode not in MMI_MODES:
        throw(f"mmi_mode must be one of {MMI_MODES}, got {mode!r}")
    d_x, n = Zx.shape
    d_y = Zy.shape[0]
    if Zy.shape[1] != n:
        throw(f"views disagree on batch size: {n} vs {Zy.shape[1]}")
    if n < 3:
        throw(f"mmi_loss needs at least 3 samples, got {n}")

    sigmas, clamped = _effective_sigmas(bw)
    Dx = _sq_dists(Zx)
    Dy = _sq_dists(Zy)
    Dj = Dx + Dy
    log_pj, wj = _loo_log_density(Dj, sigmas[0], d_x + d_y)
    log_px, wx = _loo_log_density(Dx, sigmas[1], d_x)
    log_py, wy = _loo_log_density(Dy, sigmas[2], d_y)
    ratio = log_pj - log_px - log_py

    if mode == MMI_SAMPLE_MEAN:
        value = float(ratio.mean())
        cj = np.full(n, 1.0 / n)
        cx = cy = np.full(n, -1.0 / n)
    else:
        pj = np.exp(log_pj)
        value = float(np.sum(pj * ratio))
        cj = pj * (ratio + 1.0)
        cx = cy = -pj

    (gj_x, gj_y), gs_j = _density_grads([Zx, Zy], Dj, wj, cj, sigmas[0], d_x + d_y)
    (gx,), gs_x = _density_grads([Zx], Dx, wx, cx, sigmas[1], d_x)
    (gy,), gs_y = _density_grads([Zy], Dy, wy, cy, sigmas[2], d_y)
    grad_log_sigma = np.array([gs_j, gs_x, gs_y])
    grad_log_sigma[clamped] = 0.0
    return value, gj_x + gx, gj_y + gy, grad_log_sigma


# ---------------------------------------------------------------------------
# Contrastive
# ---------------------------------------------------------------------------
def sample_negatives(n: int, rng: np.random.Generator) -> np.ndarray:
    """0-based derangement: a circular shift by a uniform offset in [1, n-1]."""
    if n < 2:
        throw(f"negative sampling needs at least 2 samples, got {n}")
    offset = int(rng.integers(1, n))
    return (np.arange(n) + offset) % n


def _cosine_with_grads(U: np.ndarray, V: np.ndarray):
    """Column-wise cosine similarity and its gradients wrt U and V."""
    nu_raw = np.linalg.norm(U, axis=0)
    nv_raw = np.linalg.norm(V, axis=0)
    nu = np.maximum(nu_raw, NORM_GUARD)
    nv = np.maximum(nv_raw, NORM_GUARD)
    dot = np.sum(U * V, axis=0)
    cos = dot / (nu * nv)
    # Guarded norms are constants, so their normalisation term drops out.
    live_u = (nu_raw >= NORM_GUARD).astype(float)
    live_v = (nv_raw >= NORM_GUARD).astype(float)
    grad_u = V / (nu * nv) - live_u * cos * U / (nu * nu)
    grad_v = U / (nu * nv) - live_v * cos * V / (nv * nv)
    guarded = int(np.sum(nu_raw < NORM_GUARD) + np.sum(nv_raw < NORM_GUARD))
    return cos, grad_u, grad_v, guarded


def contrastive_loss(Zx: np.ndarray, Zy: np.ndarray, negatives: np.ndarray,
                     margin: float = DEFAULT_MARGIN):
    """Hinge on cosine distances of positive vs shuffled negative pairs.

    ``negatives`` is a 0-based permutation without fixed points: sample i is
    contrasted with ``Zy[:, negatives[i]]``. Returns ``(value, grad_Zx, grad_Zy)``.
    """
    n = Zx.shape[1]
    if Zy.shape != (Zx.shape[0], n):
        throw(f"latent shapes differ: {Zx.shape} vs {Zy.shape}")
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.shape != (n,) or not np.array_equal(np.sort(negatives), np.arange(n)):
        throw("negatives must be a permutation of the batch indices")
    if np.any(negatives == np.arange(n)):
        throw("negatives must not map any sample to itself")

    Zneg = Zy[:, negatives]
    cos_pos, gpx, gpy, guard_pos = _cosine_with_grads(Zx, Zy)
    cos_neg, gnx, gny, guard_neg = _cosine_with_grads(Zx, Zneg)
    if guard_pos or guard_neg:
        logger("losses").warning(
            "contrastive_loss: %d zero-norm latent vectors guarded", guard_pos + guard_neg
        )

    hinge = margin + (1.0 - cos_pos) - (1.0 - cos_neg)
    active = (hinge > 0).astype(float)
    value = float(np.mean(np.maximum(hinge, 0.0)))

    # d hinge / d cos_pos = -1, d hinge / d cos_neg = +1
    w = active / n
    grad_x = w * (gnx - gpx)
    grad_y = -w * gpy
    np.add.at(grad_y.T, negatives, (w * gny).T)
    return value, grad_x, grad_y


# ---------------------------------------------------------------------------
# Reconstruction and KL
# ---------------------------------------------------------------------------
def reconstruction_loss(X, Y, Xhat, Yhat, lam: float = DEFAULT_AE_WEIGHT):
    """``(λ/N)(Σ‖x − x̂‖² + Σ‖y − ŷ‖²)``; returns ``(value, grad_Xhat, grad_Yhat)``."""
    if X.shape != Xhat.shape or Y.shape != Yhat.shape:
        throw("reconstruction shapes do not match their targets")
    if X.shape[1] != Y.shape[1]:
        throw("views disagree on batch size")
    n = X.shape[1]
    rx = Xhat - X
    ry = Yhat - Y
    value = lam / n * (float(np.sum(rx * rx)) + float(np.sum(ry * ry)))
    return value, 2.0 * lam / n * rx, 2.0 * lam / n * ry


def kl_loss(Zpriv: np.ndarray):
    """KL of the batch's diagonal Gaussian from N(0, I); returns ``(value, grad)``."""
    n = Zpriv.shape[1]
    if n < 2:
        throw(f"kl_loss needs at least 2 samples, got {n}")
    mu = Zpriv.mean(axis=1)
    centred = Zpriv - mu[:, None]
    var_raw = np.mean(centred * centred, axis=1)
    var = np.maximum(var_raw, KL_VARIANCE_FLOOR)
    value = 0.5 * float(np.sum(var + mu * mu - 1.0 - np.log(var)))
    dvar = np.where(var_raw > KL_VARIANCE_FLOOR, 0.5 * (1.0 - 1.0 / var), 0.0)
    grad = mu[:, None] / n + 2.0 * dvar[:, None] * centred / n
    return value, grad


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------
def dependence_term(Zx, Zy, config: LossConfig, rng: np.random.Generator,
                    bandwidths: KdeBandwidths | None = None):
    """Signed dependence term to minimise: ``(value, grad_Zx, grad_Zy, grad_bw)``."""
    if config.dependence == DEPENDENCE_CCA:
        v, gx, gy = cca_loss(Zx, Zy, config.cca_regularizer)
        return -v, -gx, -gy, None
    if config.dependence == DEPENDENCE_MMI:
        if bandwidths is None:
            throw("mmi loss requires KDE bandwidths")
        v, gx, gy, gbw = mmi_loss(Zx, Zy, bandwidths, config.mmi_mode)
        return -v, -gx, -gy, -gbw
    negatives = sample_negatives(Zx.shape[1], rng)
    v, gx, gy = contrastive_loss(Zx, Zy, negatives, config.margin)
    return v, gx, gy, None


def _accumulate(total: list[np.ndarray] | None, grads: list[np.ndarray]) -> list[np.ndarray]:
    if total is None:
        return grads
    return [a + b for a, b in zip(total, grads)]


def total_objective(stack: EncoderStack, X: np.ndarray, Y: np.ndarray, config: LossConfig,
                    rng: np.random.Generator, bandwidths: KdeBandwidths | None = None,
                    noise_sigma: float = 0.0, noise_rng: np.random.Generator | None = None):
    """Objective minimised in the network phase, with gradients for every network.

    ``dep_term + reconstruction + κ·KL`` where the reconstruction term already
    carries its λ weight. The dependence pathway sees clean inputs; the
    reconstruction pathway encodes inputs corrupted with ``noise_sigma``.
    Negatives come from ``rng``; noise from ``noise_rng`` (default ``rng``,
    drawn after the negatives).

    Returns ``(value, grads)`` with ``grads`` keyed by network name (plus
    ``"bandwidths"`` for the MMI loss).
    """
    if X.shape[1] == 0 or X.shape[1] != Y.shape[1]:
        throw("batch must be non-empty with matching sample counts")

    Zx, cache_x = forward(stack.encoder_x, X)
    Zy, cache_y = forward(stack.encoder_y, Y)
    if not (np.all(np.isfinite(Zx)) and np.all(np.isfinite(Zy))):
        throw("encoder outputs are not finite", NonFiniteError)
    value, gzx, gzy, gbw = dependence_term(Zx, Zy, config, rng, bandwidths)

    grads: dict[str, list[np.ndarray]] = {}
    grads[ENCODER_X] = backward(stack.encoder_x, cache_x, gzx)[0]
    grads[ENCODER_Y] = backward(stack.encoder_y, cache_y, gzy)[0]
    if gbw is not None:
        grads[BANDWIDTHS] = [gbw]

    use_ae = config.use_autoencoder and stack.use_autoencoder
    use_priv = config.use_private and stack.use_private
    if use_ae:
        noise_rng = rng if noise_rng is None else noise_rng
        Xn = inject_noise(X, noise_sigma, noise_rng)
        Yn = inject_noise(Y, noise_sigma, noise_rng)
        Zxn, cxn = forward(stack.encoder_x, Xn)
        Zyn, cyn = forward(stack.encoder_y, Yn)
        code_x, code_y = Zxn, Zyn
        if use_priv:
            Px, cpx = forward(stack.private_x, Xn)
            Py, cpy = forward(stack.private_y, Yn)
            code_x = np.vstack([Zxn, Px])
            code_y = np.vstack([Zyn, Py])
        Xhat, cdx = forward(stack.decoder_x, code_x)
        Yhat, cdy = forward(stack.decoder_y, code_y)
        rec, g_xhat, g_yhat = reconstruction_loss(X, Y, Xhat, Yhat, config.ae_weight)
        value += rec

        grads[DECODER_X], g_code_x = backward(stack.decoder_x, cdx, g_xhat)
        grads[DECODER_Y], g_code_y = backward(stack.decoder_y, cdy, g_yhat)
        d_z = stack.latent_dim
        grads[ENCODER_X] = _accumulate(grads[ENCODER_X],
                                       backward(stack.encoder_x, cxn, g_code_x[:d_z])[0])
        grads[ENCODER_Y] = _accumulate(grads[ENCODER_Y],
                                       backward(stack.encoder_y, cyn, g_code_y[:d_z])[0])
        if use_priv:
            kx, gkx = kl_loss(Px)
            ky, gky = kl_loss(Py)
            value += config.kl_weight * (kx + ky)
            g_px = g_code_x[d_z:] + config.kl_weight * gkx
            g_py = g_code_y[d_z:] + config.kl_weight * gky
            grads[PRIVATE_X] = backward(stack.private_x, cpx, g_px)[0]
            grads[PRIVATE_Y] = backward(stack.private_y, cpy, g_py)[0]
    elif use_priv:
        # Private codes without a decoder only feel the prior.
        Px, cpx = forward(stack.private_x, X)
        Py, cpy = forward(stack.private_y, Y)
        kx, gkx = kl_loss(Px)
        ky, gky = kl_loss(Py)
        value += config.kl_weight * (kx + ky)
        grads[PRIVATE_X] = backward(stack.private_x, cpx, config.kl_weight * gkx)[0]
        grads[PRIVATE_Y] = backward(stack.private_y, cpy, config.kl_weight * gky)[0]

    return float(value), grads
