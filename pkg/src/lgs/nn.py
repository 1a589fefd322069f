"""Fully-connected networks with hand-written backward passes, plus Adam."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError, StaleTapeError

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    activation: str = "tanh"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {self.layer_dims!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        object.__setattr__(self, "layer_dims", dims)


@dataclass(eq=False)
class MlpParams:
    """Weights are ``(out, in)``; a layer computes ``x @ W.T + b``."""

    spec: MlpSpec
    weights: list
    biases: list

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, spec, arrays):
        return cls(spec, list(arrays[0::2]), list(arrays[1::2]))

    def scaled_output(self, c):
        """Copy with the final layer multiplied by ``c``."""
        w = [x.copy() for x in self.weights]
        b = [x.copy() for x in self.biases]
        w[-1] *= c
        b[-1] *= c
        return MlpParams(self.spec, w, b)


def init_mlp(spec, rng, *, zero_output=False):
    """Uniform ``+-1/sqrt(fan_in)`` initialization for weights and biases."""
    weights, biases = [], []
    dims = spec.layer_dims
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        if zero_output and i == len(dims) - 2:
            w[:] = 0.0
            b[:] = 0.0
        weights.append(w)
        biases.append(b)
    return MlpParams(spec, weights, biases)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0.0).astype(np.float64)


@dataclass
class Tape:
    params: MlpParams
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activation of each hidden layer
    post: list = field(default_factory=list)
    squeeze: bool = False


def mlp_forward(params, x):
    """Evaluate the network on one input vector or a ``(B, d)`` batch.

    Hidden layers use ``params.spec.activation``; the output layer is affine.
    Returns ``(output, tape)``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.spec.layer_dims[0]:
        raise ShapeError(f"input shape {x.shape} does not match first layer size "
                         f"{params.spec.layer_dims[0]}")
    tape = Tape(params, squeeze=squeeze)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w.T + b
        if i == last:
            h = z
        else:
            h = _act(params.spec.activation, z)
            tape.pre.append(z)
            tape.post.append(h)
    return (h[0] if squeeze else h), tape


def mlp_backward(params, tape, upstream):
    """Reverse pass for ``<upstream, output>``.

    Returns ``(param_grads, input_grad)``; ``param_grads`` follows the layout
    of :meth:`MlpParams.arrays`.  Gradients are summed over the batch.
    """
    if tape.params is not params:
        raise StaleTapeError("tape was recorded with a different parameter set")
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if tape.squeeze else g
    out_dim = params.spec.layer_dims[-1]
    if g.shape != (tape.inputs[0].shape[0], out_dim):
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match network output")
    grads = [None] * (2 * len(params.weights))
    for i in reversed(range(len(params.weights))):
        if i < len(params.weights) - 1:
            g = g * _act_grad(params.spec.activation, tape.pre[i], tape.post[i])
        grads[2 * i] = g.T @ tape.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i]
    return grads, (g[0] if tape.squeeze else g)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                     0, lr, beta1, beta2, eps)


def adam_step(state, arrays, grads):
    """One bias-corrected Adam update; returns ``(new_arrays, new_state)``.

    Inputs are not modified.
    """
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for a, g in zip(arrays, grads):
        if np.shape(a) != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(a)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient passed to the optimizer")
    step = state.step + 1
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, step, state.lr, state.beta1, state.beta2, state.eps)
