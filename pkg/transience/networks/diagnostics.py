# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Finite-difference gradient suite over every loss and objective variant.

Each case builds a small random problem, wraps its loss as a closure over
its own parameters and hands it to :func:`transience.networks.net.gradcheck`.
Cases belong to a family (``cca``, ``mmi``, ``contrastive``,
``reconstruction``, ``kl``) so a run can be narrowed to one loss path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from transience.networks.losses import (
    BANDWIDTHS,
    DEPENDENCE_CCA,
    DEPENDENCE_CONTRASTIVE,
    DEPENDENCE_MMI,
    MMI_LITERAL,
    MMI_SAMPLE_MEAN,
    KdeBandwidths,
    LossConfig,
    cca_loss,
    contrastive_loss,
    kl_loss,
    mmi_loss,
    reconstruction_loss,
    sample_negatives,
    total_objective,
)
from transience.networks.net import EncoderStack, flatten_groups, gradcheck
from transience.utils.common import child_seed, logger, throw

SUITE_BATCH = 32
SUITE_LATENT = 4
SUITE_PRIVATE = 3
SUITE_DIM_X = 5
SUITE_DIM_Y = 6
SUITE_HIDDEN = (8,)
SUITE_CONFIGS = 5
DEFAULT_TOLERANCE = 1e-4

FAMILY_RECONSTRUCTION = "reconstruction"
FAMILY_KL = "kl"
FAMILIES = (DEPENDENCE_CCA, DEPENDENCE_MMI, DEPENDENCE_CONTRASTIVE, FAMILY_RECONSTRUCTION, FAMILY_KL)

Closure = Callable[[], tuple[float, list[np.ndarray]]]


@dataclass(frozen=True)
class GradientCase:
    name: str
    family: str
    build: Callable[[np.random.Generator], tuple[Closure, list[np.ndarray]]]


@dataclass
class SuiteResult:
    errors: dict[str, float]
    tolerance: float

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


def _analytic_hook(case: str, grads: list[np.ndarray]) -> list[np.ndarray]:
    """Seam for tests that need to inject a wrong gradient."""
    return grads


def _latent_pair(rng: np.random.Generator, dim: int = SUITE_LATENT, n: int = SUITE_BATCH):
    Zx = rng.normal(size=(dim, n))
    mix = rng.normal(size=(dim, dim))
    Zy = 0.8 * mix @ Zx / np.sqrt(dim) + 0.6 * rng.normal(size=(dim, n))
    return Zx, Zy


# ---------------------------------------------------------------------------
# Cases on latent variables
# ---------------------------------------------------------------------------
def _cca_case(rng):
    Zx, Zy = _latent_pair(rng)

    def loss():
        v, gx, gy = cca_loss(Zx, Zy)
        return v, [gx, gy]

    return loss, [Zx, Zy]


def _mmi_case(mode):
    def build(rng):
        Zx, Zy = _latent_pair(rng)
        Zx *= 0.5
        Zy *= 0.5
        bw = KdeBandwidths.from_sigmas(*rng.uniform(0.6, 1.2, size=3))

        def loss():
            v, gx, gy, gbw = mmi_loss(Zx, Zy, bw, mode)
            return v, [gx, gy, gbw]

        return loss, [Zx, Zy, bw.log_sigma]

    return build


def _contrastive_case(rng):
    Zx, Zy = _latent_pair(rng)
    negatives = sample_negatives(SUITE_BATCH, rng)

    def loss():
        v, gx, gy = contrastive_loss(Zx, Zy, negatives)
        return v, [gx, gy]

    return loss, [Zx, Zy]


def _reconstruction_case(rng):
    X = rng.normal(size=(SUITE_DIM_X, SUITE_BATCH))
    Y = rng.normal(size=(SUITE_DIM_Y, SUITE_BATCH))
    Xhat = X + rng.normal(size=X.shape)
    Yhat = Y + rng.normal(size=Y.shape)

    def loss():
        v, gx, gy = reconstruction_loss(X, Y, Xhat, Yhat, 0.7)
        return v, [gx, gy]

    return loss, [Xhat, Yhat]


def _kl_case(rng):
    Z = rng.normal(0.3, 1.4, size=(SUITE_PRIVATE, SUITE_BATCH))

    def loss():
        v, g = kl_loss(Z)
        return v, [g]

    return loss, [Z]


# ---------------------------------------------------------------------------
# Cases on the combined objective
# ---------------------------------------------------------------------------
def _objective_case(dependence: str, use_autoencoder: bool, use_private: bool):
    def build(rng):
        stack = EncoderStack.build(
            SUITE_DIM_X, SUITE_DIM_Y, rng, latent_dim=SUITE_LATENT, private_dim=SUITE_PRIVATE,
            hidden=SUITE_HIDDEN, use_autoencoder=use_autoencoder, use_private=use_private,
        )
        X = rng.normal(size=(SUITE_DIM_X, SUITE_BATCH))
        Y = rng.normal(size=(SUITE_DIM_Y, SUITE_BATCH))
        Y[:SUITE_DIM_X] += X
        config = LossConfig(dependence=dependence, use_autoencoder=use_autoencoder,
                            use_private=use_private)
        groups = stack.parameters()
        bandwidths = None
        if dependence == DEPENDENCE_MMI:
            bandwidths = KdeBandwidths()
            groups[BANDWIDTHS] = bandwidths.params()
        seed = child_seed(rng)

        def loss():
            # Same negatives and noise on every evaluation.
            value, grads = total_objective(
                stack, X, Y, config, np.random.default_rng(seed), bandwidths, noise_sigma=0.5,
            )
            return value, flatten_groups(grads)

        return loss, flatten_groups(groups)

    return build


def default_cases() -> list[GradientCase]:
    cases = [
        GradientCase(DEPENDENCE_CCA, DEPENDENCE_CCA, _cca_case),
        GradientCase(f"mmi_{MMI_LITERAL}", DEPENDENCE_MMI, _mmi_case(MMI_LITERAL)),
        GradientCase(f"mmi_{MMI_SAMPLE_MEAN}", DEPENDENCE_MMI, _mmi_case(MMI_SAMPLE_MEAN)),
        GradientCase(DEPENDENCE_CONTRASTIVE, DEPENDENCE_CONTRASTIVE, _contrastive_case),
        GradientCase(FAMILY_RECONSTRUCTION, FAMILY_RECONSTRUCTION, _reconstruction_case),
        GradientCase(FAMILY_KL, FAMILY_KL, _kl_case),
    ]
    for dependence in (DEPENDENCE_CCA, DEPENDENCE_MMI, DEPENDENCE_CONTRASTIVE):
        for suffix, ae, priv in (("", False, False), ("+autoenc", True, False),
                                 ("+priv", True, True)):
            cases.append(GradientCase(
                f"total:{dependence}{suffix}", dependence, _objective_case(dependence, ae, priv)
            ))
    return cases


def run_gradient_suite(rng: np.random.Generator, families: list[str] | None = None,
                       tolerance: float = DEFAULT_TOLERANCE, configs: int = SUITE_CONFIGS,
                       cases: list[GradientCase] | None = None) -> SuiteResult:
    """Worst relative gradient error per case over ``configs`` random problems."""
    if families:
        unknown = sorted(set(families) - set(FAMILIES))
        if unknown:
            throw(f"unknown loss {unknown[0]!r}; choose from {', '.join(FAMILIES)}")
    if tolerance <= 0:
        throw(f"gradcheck_tolerance must be positive, got {tolerance}")
    selected = [
        c for c in (cases if cases is not None else default_cases())
        if not families or c.family in families
    ]

    log = logger("diagnostics")
    errors: dict[str, float] = {}
    for case in selected:
        worst = 0.0
        for _ in range(configs):
            closure, params = case.build(rng)

            def hooked(closure=closure, name=case.name):
                value, grads = closure()
                return value, _analytic_hook(name, grads)

            report = gradcheck(hooked, params, rng)
            worst = max(worst, report.max_rel_error)
        errors[case.name] = worst
        log.info("gradcheck %-26s max rel error %.3e", case.name, worst)
    return SuiteResult(errors=errors, tolerance=tolerance)

