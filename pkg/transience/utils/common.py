# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Logging, error raising and seeded random streams shared by every module."""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from transience.exceptions import ValidationError

APP_LOGGER = "transience"

# Named sub-streams drawn from the master seed.
STREAM_DATA = "data"
STREAM_INIT = "init"
STREAM_BATCHING = "batching"
STREAM_SHUFFLE = "shuffle"
STREAM_NOISE = "noise"
STREAM_REGRESSOR = "regressor"
STREAM_CHECKS = "checks"


def logger(module: str | None = None) -> logging.Logger:
    """Application logger, optionally scoped to a module (``transience.<module>``)."""
    return logging.getLogger(f"{APP_LOGGER}.{module}" if module else APP_LOGGER)


def log_error(title: str, message: str) -> None:
    logger().error("%s: %s", title, message)


def throw(message: str, exc: type[Exception] = ValidationError):
    """Raise ``exc`` with ``message``."""
    raise exc(message)


def setup_logging(verbose: bool = False) -> None:
    """Attach a single stderr handler to the application logger."""
    log = logger()
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
        log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for ``stream`` derived from the master ``seed``.

    The same (seed, stream) always yields the same sequence, and changing one
    stream never shifts another.
    """
    if seed < 0:
        throw(f"seed must be non-negative, got {seed}")
    return np.random.default_rng([int(seed), _stream_key(stream)])


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))
