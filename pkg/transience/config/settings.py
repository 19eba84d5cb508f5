# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Run settings: one schema, a key=value file, command-line overrides.

``run_settings.json`` declares every key the commands read, the way a Single
DocType declares its fields. Values are coerced per ``fieldtype``; unknown
keys, bad ``Select`` values and negative ``non_negative`` values are rejected
with a :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

from transience.api.align import TrainConfig
from transience.api.evaluation import EvalConfig
from transience.api.synth import FeatureConfig, SynthSpec
from transience.exceptions import ConfigError
from transience.networks.losses import LossConfig
from transience.utils.common import throw

SCHEMA_PATH = Path(__file__).with_name("run_settings.json")

SECTION_BREAK = "Section Break"
TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def fields() -> list[dict]:
    """Value fields in ``field_order`` (section breaks excluded)."""
    by_name = {f["fieldname"]: f for f in schema()["fields"]}
    return [
        by_name[name] for name in schema()["field_order"]
        if by_name[name]["fieldtype"] != SECTION_BREAK
    ]


def sections() -> list[tuple[str, list[dict]]]:
    """``(label, fields)`` groups in schema order."""
    by_name = {f["fieldname"]: f for f in schema()["fields"]}
    out: list[tuple[str, list[dict]]] = []
    for name in schema()["field_order"]:
        field = by_name[name]
        if field["fieldtype"] == SECTION_BREAK:
            out.append((field["label"], []))
        else:
            out[-1][1].append(field)
    return out


def _coerce(field: dict, raw) -> object:
    key, fieldtype = field["fieldname"], field["fieldtype"]
    text = str(raw).strip()
    try:
        if fieldtype == "Int":
            value = int(text)
        elif fieldtype == "Float":
            value = float(text)
        elif fieldtype == "Check":
            if isinstance(raw, bool):
                return raw
            if text.lower() not in TRUE_WORDS | FALSE_WORDS:
                raise ValueError(text)
            return text.lower() in TRUE_WORDS
        elif fieldtype == "Select":
            options = field["options"].split("\n")
            if text not in options:
                throw(f"{key}: {text!r} is not one of {', '.join(options)}", ConfigError)
            return text
        else:
            return text
    except ValueError:
        throw(f"{key}: cannot read {text!r} as {fieldtype}", ConfigError)
    if field.get("non_negative") and value < 0:
        throw(f"{key} must be non-negative, got {value}", ConfigError)
    return value


def _int_list(key: str, text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        throw(f"{key}: expected comma-separated integers, got {text!r}", ConfigError)
    if not values or min(values) < 1:
        throw(f"{key}: expected positive layer widths, got {text!r}", ConfigError)
    return values


def read_settings_file(path: str | Path) -> dict[str, str]:
    """Raw ``key=value`` pairs; ``#`` starts a comment, blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        throw(f"config file {path} not found", ConfigError)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            throw(f"{path}:{lineno}: expected key=value, got {line!r}", ConfigError)
        raw[key.strip()] = value.strip()
    return raw


class RunSettings:
    """Typed settings with attribute access by field name."""

    def __init__(self, values: dict[str, object]):
        self._values = dict(values)

    def __getattr__(self, key: str):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def as_dict(self) -> dict[str, object]:
        return dict(self._values)

    def to_text(self) -> str:
        lines = []
        for label, group in sections():
            lines.append(f"# {label}")
            for field in group:
                value = self._values[field["fieldname"]]
                if isinstance(value, bool):
                    value = int(value)
                lines.append(f"{field['fieldname']} = {value}")
        return "\n".join(lines) + "\n"

    # typed views ------------------------------------------------------------
    def loss_config(self) -> LossConfig:
        return LossConfig(
            dependence=self.loss, margin=self.margin, ae_weight=self.ae_weight,
            kl_weight=self.kl_weight, cca_regularizer=self.cca_regularizer,
            mmi_mode=self.mmi_mode, use_autoencoder=self.use_autoencoder,
            use_private=self.use_private,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            hidden=_int_list("hidden_layers", self.hidden_layers), slope=self.slope,
            latent_dim=self.latent_dim, private_dim=self.private_dim,
            noise_sigma=self.noise_sigma, learning_rate=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps, batch_size=self.batch_size,
            epochs_per_phase=self.epochs_per_phase,
            min_updates_per_phase=self.min_updates_per_phase,
            max_outer_iterations=self.max_outer_iterations,
            convergence_threshold=self.convergence_threshold, dtw_metric=self.dtw_metric,
            kde_bandwidth_init=self.kde_bandwidth_init, cca_regularizer=self.cca_regularizer,
            eigen_floor=self.eigen_floor, seed=self.seed,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            dim_x=self.dim_x, dim_y=self.dim_y, latent_k=self.latent_k,
            length_x=self.length_x, length_y=self.length_y, length_spread=self.length_spread,
            obs_noise=self.obs_noise, warp_jitter=self.warp_jitter,
            smoothness=self.smoothness, shared_map=self.shared_map,
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(context_width=self.context_width, pca_retained=self.pca_retained,
                             use_deltas=self.use_deltas)

    def eval_config(self) -> EvalConfig:
        variants = tuple(v.strip() for v in self.variants.split(",") if v.strip())
        if not variants:
            throw("variants: expected at least one variant", ConfigError)
        return EvalConfig(
            regressor_hidden=_int_list("regressor_hidden", self.regressor_hidden),
            regressor_epochs=self.regressor_epochs, regressor_lr=self.regressor_lr,
            regressor_batch=self.regressor_batch, n_train_pairs=self.n_train_pairs,
            n_test_pairs=self.n_test_pairs, variants=variants, n_seeds=self.n_seeds,
        )


def load_settings(path: str | Path | None = None,
                  overrides: dict[str, object] | None = None) -> RunSettings:
    """Schema defaults, then ``path``, then ``overrides`` (``None`` values skipped)."""
    known = {f["fieldname"]: f for f in fields()}
    raw: dict[str, object] = {key: f.get("default", "") for key, f in known.items()}
    layers = [read_settings_file(path)] if path is not None else []
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})
    for layer in layers:
        for key, value in layer.items():
            if key not in known:
                throw(f"unknown setting {key!r}", ConfigError)
            raw[key] = value
    return RunSettings({key: _coerce(known[key], value) for key, value in raw.items()})
