"""Dense-network numerical core: parameter tensors, MLP forward/backward, AdamW.

Everything is float64 and deterministic given a seed. Backward passes are
explicit per-layer tapes rather than a general autodiff graph: the model only
ever needs three small fixed MLPs, and tapes keep the gradient flow auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


class ShapeError(ValueError):
    """An array does not have the shape a layer or loss expects."""


class NonFiniteGradientError(FloatingPointError):
    """A parameter gradient contains NaN or infinity."""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient in tensor '{tensor_name}'")
        self.tensor_name = tensor_name


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ParamTensor:
    """A named trainable array with paired gradient and Adam moment buffers.

    values, grad, adam_m and adam_v always share one shape. Backward passes
    accumulate into grad (+=); the training loop calls zero_grad() after each
    optimizer step. ``decay=False`` exempts the tensor from weight decay.
    """

    def __init__(self, name: str, values, decay: bool = True):
        self.name = name
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.adam_m = np.zeros_like(self.values)
        self.adam_v = np.zeros_like(self.values)
        self.step_count = 0
        self.decay = decay

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy_values(self) -> np.ndarray:
        return self.values.copy()

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.values.shape})"


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes and activations of a dense network.

    layer_dims lists the input dimension first; every consecutive pair is one
    affine layer. Hidden layers share one activation, the last layer its own.
    """

    layer_dims: tuple
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("layer_dims needs at least an input and an output size")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer sizes must be >= 1, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def activation_for(self, layer: int) -> str:
        return self.output_activation if layer == self.n_layers - 1 else self.hidden_activation


@dataclass
class AdamConfig:
    learning_rate: float = 5e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator, prefix: str) -> list:
    """Create weight/bias ParamTensors for every layer of ``spec``.

    Weights use a uniform kaiming-like init scaled by fan-in; biases start at
    zero. Order is W0, b0, W1, b1, ...
    """
    params = []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_dims[i], spec.layer_dims[i + 1]
        limit = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.append(ParamTensor(f"{prefix}.W{i}", w))
        params.append(ParamTensor(f"{prefix}.b{i}", np.zeros(fan_out)))
    return params


def _apply_activation(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    return a  # identity


def _activation_grad(kind: str, a: np.ndarray, out: np.ndarray) -> np.ndarray:
    # a is the pre-activation, out the post-activation value at a.
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(a)


@dataclass
class MlpTape:
    """Per-layer activation cache produced by mlp_forward, consumed by mlp_backward."""

    spec: MlpSpec
    inputs: list          # input to each layer (post-activation of the previous one)
    preacts: list         # affine outputs before the activation
    outputs: list         # post-activation values
    squeezed: bool        # original x was 1-D


def _check_params(spec: MlpSpec, params) -> None:
    if len(params) != 2 * spec.n_layers:
        raise ShapeError(
            f"expected {2 * spec.n_layers} parameter tensors for {spec.n_layers} layers, got {len(params)}"
        )
    for i in range(spec.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        want_w = (spec.layer_dims[i], spec.layer_dims[i + 1])
        if w.shape != want_w:
            raise ShapeError(f"layer {i}: weight '{w.name}' has shape {w.shape}, expected {want_w}")
        if b.shape != (spec.layer_dims[i + 1],):
            raise ShapeError(f"layer {i}: bias '{b.name}' has shape {b.shape}, expected ({spec.layer_dims[i + 1]},)")


def mlp_forward(spec: MlpSpec, params, x):
    """Run the network on ``x`` (a vector or a batch of row vectors).

    Returns (y, tape); the tape holds every pre/post activation so that
    mlp_backward can replay the chain rule without recomputing.
    """
    _check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.layer_dims[0]:
        raise ShapeError(f"layer 0: input has {x.shape[-1] if x.ndim else 0} features, expected {spec.layer_dims[0]}")

    inputs, preacts, outputs = [], [], []
    h = x
    for i in range(spec.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        a = h @ w.values + b.values
        out = _apply_activation(spec.activation_for(i), a)
        inputs.append(h)
        preacts.append(a)
        outputs.append(out)
        h = out
    tape = MlpTape(spec, inputs, preacts, outputs, squeezed)
    y = h[0] if squeezed else h
    return y, tape


def mlp_backward(tape: MlpTape, upstream, params):
    """Accumulate parameter gradients (+=) and return the input gradient.

    ``upstream`` is dLoss/dOutput with the same shape as the forward output.
    """
    spec = tape.spec
    _check_params(spec, params)
    if len(tape.inputs) != spec.n_layers:
        raise ShapeError("tape does not match the network spec")
    g = np.asarray(upstream, dtype=np.float64)
    if tape.squeezed:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"upstream gradient has shape {g.shape}, expected {tape.outputs[-1].shape}")

    for i in reversed(range(spec.n_layers)):
        w, b = params[2 * i], params[2 * i + 1]
        dpre = g * _activation_grad(spec.activation_for(i), tape.preacts[i], tape.outputs[i])
        w.grad += tape.inputs[i].T @ dpre
        b.grad += dpre.sum(axis=0)
        g = dpre @ w.values.T
    return g[0] if tape.squeezed else g


class Mlp:
    """An MlpSpec bundled with its parameters; thin wrapper over forward/backward."""

    def __init__(self, spec: MlpSpec, params):
        _check_params(spec, params)
        self.spec = spec
        self.params = list(params)

    @classmethod
    def create(cls, spec: MlpSpec, rng: np.random.Generator, prefix: str) -> "Mlp":
        return cls(spec, init_mlp_params(spec, rng, prefix))

    def forward(self, x):
        y, _ = mlp_forward(self.spec, self.params, x)
        return y

    def forward_tape(self, x):
        return mlp_forward(self.spec, self.params, x)

    def backward(self, tape: MlpTape, upstream):
        return mlp_backward(tape, upstream, self.params)

    @property
    def in_dim(self) -> int:
        return self.spec.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.spec.layer_dims[-1]


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def adam_step(params, config: AdamConfig) -> None:
    """One AdamW update (decoupled weight decay) on every tensor in ``params``.

    Gradients are left untouched; the caller zeroes them. Raises
    NonFiniteGradientError before mutating anything if any grad is NaN/inf.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(p.name)
    for p in params:
        t = p.step_count + 1
        p.adam_m = config.beta1 * p.adam_m + (1.0 - config.beta1) * p.grad
        p.adam_v = config.beta2 * p.adam_v + (1.0 - config.beta2) * (p.grad * p.grad)
        m_hat = p.adam_m / (1.0 - config.beta1 ** t)
        v_hat = p.adam_v / (1.0 - config.beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + config.epsilon)
        if p.decay and config.weight_decay > 0.0:
            update = update + config.weight_decay * p.values
        p.values -= config.learning_rate * update
        p.step_count = t
