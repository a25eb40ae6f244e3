"""Multilayer perceptrons and time-feature embeddings on the tensor engine.

``Mlp.forward_jvp`` propagates a tangent vector alongside the forward pass
(forward-mode through the layers, expressed in taped primitives), so
Jacobian-vector products remain differentiable with respect to the
parameters by the ordinary reverse pass. The likelihood module relies on
this for trainable Jacobian traces.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, concat

_ACTIVATIONS = ("tanh", "sin")


class GaussianFourier:
    """Random Fourier features of scalar time, fixed at construction.

    emb(t) = [sin(2 pi w_i t), cos(2 pi w_i t)] with w ~ N(0, scale^2).
    The frequencies are part of the model state (saved in checkpoints)
    but are never trained.
    """

    def __init__(self, width: int, rng: np.random.Generator, scale: float = 1.0):
        if width % 2 != 0 or width < 2:
            raise ValueError("time-embedding width must be a positive even number")
        self.width = width
        self.freqs = rng.standard_normal(width // 2) * scale

    def __call__(self, t: Tensor) -> Tensor:
        ang = t * (2.0 * math.pi * self.freqs)  # (B,1)*(half,) -> (B,half)
        return concat([ang.sin(), ang.cos()], axis=1)


class Mlp:
    """Fully connected net: linear output, tanh (default) hidden layers.

    Parameter count is sum over layers of (fan_in + 1) * fan_out. A
    zero-weight network returns its output bias for any input.
    """

    def __init__(self, sizes, rng: np.random.Generator, activation: str = "tanh"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.sizes = list(sizes)
        self.activation = activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    @property
    def param_count(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def _act(self, z: Tensor) -> Tensor:
        return z.tanh() if self.activation == "tanh" else z.sin()

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_jvp(self, x: Tensor, u: Tensor) -> tuple[Tensor, Tensor]:
        """Forward pass plus the Jacobian-vector product d(out)/dx @ u.

        Both results stay on the tape, so the JVP can itself be
        differentiated with respect to the parameters.
        """
        h, dh = x, u
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            dz = dh @ w
            if self.activation == "tanh":
                h = z.tanh()
                dh = (1.0 - h * h) * dz
            else:
                h = z.sin()
                dh = z.cos() * dz
        return h @ self.weights[-1] + self.biases[-1], dh @ self.weights[-1]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True


class FieldNetwork:
    """Conditional network over (x, t [, condition]) used as v/eps/score head.

    Input layout: time-embedding || condition || x. ``condition`` may be
    omitted for unconditional density models (state_dim = 0).
    """

    def __init__(self, x_dim: int, state_dim: int, hidden, rng: np.random.Generator,
                 t_emb_width: int = 32, activation: str = "tanh", t_emb_scale: float = 1.0):
        self.x_dim = x_dim
        self.state_dim = state_dim
        self.t_emb = GaussianFourier(t_emb_width, rng, scale=t_emb_scale)
        self.mlp = Mlp([t_emb_width + state_dim + x_dim, *hidden, x_dim], rng, activation)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def _lift_t(self, t, batch: int) -> Tensor:
        if isinstance(t, Tensor):
            return t
        return Tensor(np.full((batch, 1), float(t)))

    def _inputs(self, x: Tensor, t, condition) -> Tensor:
        parts = [self._lift_t(t, x.shape[0])]
        if self.state_dim:
            if condition is None:
                raise ValueError("conditional network called without a condition")
            parts.append(condition if isinstance(condition, Tensor) else Tensor(condition))
        parts.append(x)
        return concat([self.t_emb(parts[0])] + parts[1:], axis=1)

    def __call__(self, x: Tensor, t, condition=None) -> Tensor:
        return self.mlp(self._inputs(x, t, condition))

    def jvp(self, x: Tensor, t, condition, u: Tensor) -> tuple[Tensor, Tensor]:
        """(output, d(output)/dx @ u); the tangent enters through x only."""
        inp = self._inputs(x, t, condition)
        pad = inp.shape[1] - self.x_dim
        du = concat([Tensor(np.zeros((x.shape[0], pad))), u], axis=1)
        return self.mlp.forward_jvp(inp, du)

    def freeze(self) -> None:
        self.mlp.freeze()

    def unfreeze(self) -> None:
        self.mlp.unfreeze()

    def clone(self) -> "FieldNetwork":
        other = object.__new__(FieldNetwork)
        other.x_dim = self.x_dim
        other.state_dim = self.state_dim
        other.t_emb = object.__new__(GaussianFourier)
        other.t_emb.width = self.t_emb.width
        other.t_emb.freqs = self.t_emb.freqs.copy()
        other.mlp = object.__new__(Mlp)
        other.mlp.sizes = list(self.mlp.sizes)
        other.mlp.activation = self.mlp.activation
        other.mlp.weights = [Tensor(w.data.copy(), requires_grad=True) for w in self.mlp.weights]
        other.mlp.biases = [Tensor(b.data.copy(), requires_grad=True) for b in self.mlp.biases]
        return other
