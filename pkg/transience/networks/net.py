# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Feed-forward networks with hand-written backpropagation.

Every network is an :class:`Mlp`: affine layers with leaky-ReLU between them
and a linear output layer. Data are column-sample matrices (features × N) in
float64 throughout. Parameters are exposed as a flat list
``[W1, b1, W2, b2, ...]`` and gradients come back in the same order, which is
what :func:`adam_step` and :func:`gradcheck` consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from transience.exceptions import NonFiniteError
from transience.utils.common import logger, throw

DEFAULT_HIDDEN = (200, 100, 100)
DEFAULT_SLOPE = 0.03
DEFAULT_LATENT_DIM = 20
DEFAULT_PRIVATE_DIM = 10
DEFAULT_NOISE_SIGMA = 0.5

DEFAULT_LR = 1e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8

GRADCHECK_STEP = 1e-5
GRADCHECK_COORDS = 20
# Absolute disagreement below this, scaled by max(1, |loss|), is central-difference rounding.
GRADCHECK_ABS_FLOOR = 1e-8
GRADCHECK_RETRIES = 2

ENCODER_X = "encoder_x"
ENCODER_Y = "encoder_y"
PRIVATE_X = "private_x"
PRIVATE_Y = "private_y"
DECODER_X = "decoder_x"
DECODER_Y = "decoder_y"
NETWORK_NAMES = (ENCODER_X, ENCODER_Y, PRIVATE_X, PRIVATE_Y, DECODER_X, DECODER_Y)


@dataclass
class Layer:
    weights: np.ndarray  # out × in
    bias: np.ndarray  # out


@dataclass
class Mlp:
    layers: list[Layer]
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if not self.layers:
            throw("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                throw(
                    f"layer shapes do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        for layer in self.layers:
            if layer.bias.shape != (layer.weights.shape[0],):
                throw(f"bias shape {layer.bias.shape} does not match weights {layer.weights.shape}")

    @classmethod
    def build(cls, sizes, rng: np.random.Generator, slope: float = DEFAULT_SLOPE) -> "Mlp":
        """Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            throw(f"invalid layer sizes {sizes}")
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Layer(
                weights=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
            ))
        return cls(layers=layers, slope=slope)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weights.shape[0] for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X)[0]


@dataclass
class ForwardCache:
    owner: int
    shapes: list[tuple[int, ...]]
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each hidden layer


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def forward(net: Mlp, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != net.input_dim:
        throw(f"network expects input dim {net.input_dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        throw("network input contains NaN or Inf")
    inputs, preacts = [], []
    h = X
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        inputs.append(h)
        z = layer.weights @ h + layer.bias[:, None]
        if k < last:
            preacts.append(z)
            h = leaky_relu(z, net.slope)
        else:
            h = z
    cache = ForwardCache(
        owner=id(net), shapes=[p.shape for p in net.params()], inputs=inputs, preacts=preacts,
    )
    return h, cache


def backward(net: Mlp, cache: ForwardCache,
             grad_output: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients: ``(grads in params() order, grad wrt input)``."""
    if cache.owner != id(net) or cache.shapes != [p.shape for p in net.params()]:
        throw("forward cache does not belong to this network")
    n = cache.inputs[0].shape[1]
    if grad_output.shape != (net.output_dim, n):
        throw(f"grad_output shape {grad_output.shape} != {(net.output_dim, n)}")

    grads: list[np.ndarray] = []
    delta = grad_output
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        grads.append(delta.sum(axis=1))
        grads.append(delta @ cache.inputs[k].T)
        delta = layer.weights.T @ delta
        if k > 0:
            z = cache.preacts[k - 1]
            delta = delta * np.where(z > 0, 1.0, net.slope)
    grads.reverse()  # now [W1, b1, W2, b2, ...]
    return grads, delta


def inject_noise(X: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian corruption for denoising training."""
    if sigma < 0:
        throw(f"noise sigma must be non-negative, got {sigma}")
    X = np.asarray(X, dtype=float)
    if sigma == 0:
        return X.copy()
    return X + rng.normal(0.0, sigma, size=X.shape)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            throw(f"learning_rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            throw(f"Adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A non-finite gradient leaves parameters and moments untouched and raises
    :class:`NonFiniteError`.
    """
    if len(params) != len(grads):
        throw(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            throw(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        throw("non-finite gradient; update rejected", NonFiniteError)

    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif [m.shape for m in state.m] != [p.shape for p in params]:
        throw("Adam state does not match the parameter shapes")

    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------
@dataclass
class GradcheckReport:
    max_rel_error: float
    per_tensor: list[float]
    checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def gradcheck(loss: Callable[[], tuple[float, list[np.ndarray]]], params: list[np.ndarray],
              rng: np.random.Generator, coords: int = GRADCHECK_COORDS,
              step: float = GRADCHECK_STEP) -> GradcheckReport:
    """Compare analytic gradients with central differences of step ``step``.

    ``loss()`` evaluates the objective at the current contents of ``params``
    and returns ``(value, grads)``; parameters are perturbed in place and
    restored. Up to ``coords`` random coordinates per tensor are checked.

    A coordinate's error is ``|g_a - g_n| / max(|g_a|, |g_n|)``, and zero when
    ``|g_a - g_n|`` is below ``GRADCHECK_ABS_FLOOR * max(1, |loss|)``. When the
    one-sided slopes disagree by at least ``|g_a - g_n|`` a kink lies inside
    the stencil; only then is the coordinate re-measured with the step shrunk
    tenfold (at most ``GRADCHECK_RETRIES`` times), and the last measurement
    counts.
    """
    value, analytic = loss()
    if not np.isfinite(value):
        throw(f"loss is not finite at the evaluation point ({value})", NonFiniteError)
    analytic = [np.array(g, dtype=float, copy=True) for g in analytic]
    if len(analytic) != len(params):
        throw(f"loss returned {len(analytic)} gradients for {len(params)} parameters")
    abs_floor = GRADCHECK_ABS_FLOOR * max(1.0, abs(value))

    def perturbed(flat: np.ndarray, idx: int, h: float) -> tuple[float, float]:
        orig = flat[idx]
        flat[idx] = orig + h
        plus = loss()[0]
        flat[idx] = orig - h
        minus = loss()[0]
        flat[idx] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            throw(f"loss became non-finite while perturbing coordinate {idx}", NonFiniteError)
        return plus, minus

    per_tensor = []
    checked = 0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        worst = 0.0
        for idx in picks:
            ga = g.reshape(-1)[idx]
            for k in range(GRADCHECK_RETRIES + 1):
                h = step * 0.1 ** k
                plus, minus = perturbed(flat, idx, h)
                numeric = (plus - minus) / (2.0 * h)
                diff = abs(ga - numeric)
                err = 0.0 if diff <= abs_floor else diff / max(abs(ga), abs(numeric))
                one_sided_gap = abs((plus - value) - (value - minus)) / h
                if err == 0.0 or one_sided_gap < diff:
                    break
            worst = max(worst, err)
            checked += 1
        per_tensor.append(worst)
    return GradcheckReport(max_rel_error=max(per_tensor, default=0.0),
                           per_tensor=per_tensor, checked=checked)


# ---------------------------------------------------------------------------
# EncoderStack
# ---------------------------------------------------------------------------
@dataclass
class EncoderStack:
    encoder_x: Mlp
    encoder_y: Mlp
    private_x: Mlp | None = None
    private_y: Mlp | None = None
    decoder_x: Mlp | None = None
    decoder_y: Mlp | None = None
    use_autoencoder: bool = False
    use_private: bool = False

    def __post_init__(self):
        d_z = self.encoder_x.output_dim
        if self.encoder_y.output_dim != d_z:
            throw(f"encoders disagree on latent dim: {d_z} vs {self.encoder_y.output_dim}")
        if self.use_private and (self.private_x is None or self.private_y is None):
            throw("use_private requires both private networks")
        if self.use_private and self.private_x.output_dim != self.private_y.output_dim:
            throw("private networks disagree on private dim")
        if self.use_autoencoder:
            if self.decoder_x is None or self.decoder_y is None:
                throw("use_autoencoder requires both decoder networks")
            expected = d_z + (self.private_dim if self.use_private else 0)
            for name, dec, target in (
                (DECODER_X, self.decoder_x, self.encoder_x.input_dim),
                (DECODER_Y, self.decoder_y, self.encoder_y.input_dim),
            ):
                if dec.input_dim != expected or dec.output_dim != target:
                    throw(
                        f"{name} maps {dec.input_dim}->{dec.output_dim}, "
                        f"expected {expected}->{target}"
                    )

    @classmethod
    def build(cls, dim_x: int, dim_y: int, rng: np.random.Generator,
              latent_dim: int = DEFAULT_LATENT_DIM, private_dim: int = DEFAULT_PRIVATE_DIM,
              hidden=DEFAULT_HIDDEN, slope: float = DEFAULT_SLOPE,
              use_autoencoder: bool = False, use_private: bool = False) -> "EncoderStack":
        hidden = list(hidden)
        nets = {
            ENCODER_X: Mlp.build([dim_x, *hidden, latent_dim], rng, slope),
            ENCODER_Y: Mlp.build([dim_y, *hidden, latent_dim], rng, slope),
        }
        if use_private:
            nets[PRIVATE_X] = Mlp.build([dim_x, *hidden, private_dim], rng, slope)
            nets[PRIVATE_Y] = Mlp.build([dim_y, *hidden, private_dim], rng, slope)
        if use_autoencoder:
            code = latent_dim + (private_dim if use_private else 0)
            nets[DECODER_X] = Mlp.build([code, *hidden[::-1], dim_x], rng, slope)
            nets[DECODER_Y] = Mlp.build([code, *hidden[::-1], dim_y], rng, slope)
        return cls(**nets, use_autoencoder=use_autoencoder, use_private=use_private)

    @property
    def latent_dim(self) -> int:
        return self.encoder_x.output_dim

    @property
    def private_dim(self) -> int:
        return self.private_x.output_dim if self.private_x is not None else 0

    def networks(self) -> Iterator[tuple[str, Mlp]]:
        for name in NETWORK_NAMES:
            net = getattr(self, name)
            if net is not None:
                yield name, net

    def parameters(self) -> dict[str, list[np.ndarray]]:
        return {name: net.params() for name, net in self.networks()}

    def encode(self, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Shared latents of clean inputs (no noise, no private codes)."""
        return self.encoder_x(X), self.encoder_y(Y)


def flatten_groups(groups: dict[str, list[np.ndarray]]) -> list[np.ndarray]:
    """Deterministic flat order over named parameter (or gradient) groups."""
    return [t for name in sorted(groups) for t in groups[name]]


def log_topology(stack: EncoderStack) -> None:
    log = logger("net")
    for name, net in stack.networks():
        log.debug("%s: %s", name, "x".join(str(s) for s in net.sizes()))
