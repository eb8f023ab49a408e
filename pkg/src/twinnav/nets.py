"""From-scratch fully connected networks: forward, exact backprop, Adam.

Everything runs in double precision on plain numpy arrays. A network is a
fixed stack of affine layers with per-layer activations; the parameter list
alternates weights and biases so optimizers and checkpoints can treat it as
a flat sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


class Mlp:
    """Multilayer perceptron over float64 arrays.

    Forward and backward are pure with respect to the parameters; training
    code mutates parameters only through optimizer steps or Polyak blending.
    """

    def __init__(
        self,
        layer_sizes: list[int],
        hidden_activation: str = "relu",
        output_activation: str = "identity",
        rng: np.random.Generator | None = None,
    ):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        for name in (hidden_activation, output_activation):
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.layer_sizes = list(layer_sizes)
        self.activations = [hidden_activation] * (len(layer_sizes) - 2) + [output_activation]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out, act in zip(layer_sizes, layer_sizes[1:], self.activations):
            scale = np.sqrt(2.0 / fan_in) if act == "relu" else np.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def describe(self) -> dict:
        """Architecture descriptor used to guard checkpoint loads."""
        return {"layer_sizes": self.layer_sizes, "activations": self.activations}

    def _check_input(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.in_dim:
            raise ValueError(f"input shape {np.shape(x)} does not match in_dim {self.in_dim}")
        return arr, single

    def forward(self, x) -> np.ndarray:
        """Evaluate the network; accepts one vector or a (B, in_dim) batch."""
        arr, single = self._check_input(x)
        for W, b, act in zip(self.weights, self.biases, self.activations):
            arr = _act(act, arr @ W + b)
        return arr[0] if single else arr

    def forward_cached(self, x) -> tuple[np.ndarray, dict]:
        """Forward pass retaining per-layer pre- and post-activations."""
        arr, single = self._check_input(x)
        inputs = [arr]
        zs = []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            z = inputs[-1] @ W + b
            zs.append(z)
            inputs.append(_act(act, z))
        cache = {"inputs": inputs, "zs": zs, "single": single}
        out = inputs[-1]
        return (out[0] if single else out), cache

    def backward(
        self, cache: dict, upstream
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Exact gradients of sum(upstream * output) w.r.t. parameters and input.

        Returns ([(dW, db) per layer], dinput) with shapes matching the
        parameters and the cached input batch.
        """
        up = np.asarray(upstream, dtype=float)
        if cache["single"]:
            up = up[None, :]
        if up.shape != cache["inputs"][-1].shape:
            raise ValueError(
                f"upstream shape {np.shape(upstream)} does not match output "
                f"shape {cache['inputs'][-1].shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        delta = up
        for i in reversed(range(len(self.weights))):
            z = cache["zs"][i]
            a = cache["inputs"][i + 1]
            dz = delta * _act_grad(self.activations[i], z, a)
            dW = cache["inputs"][i].T @ dz
            db = dz.sum(axis=0)
            grads[i] = (dW, db)
            delta = dz @ self.weights[i].T
        dinput = delta[0] if cache["single"] else delta
        return grads, dinput

    def param_list(self) -> list[np.ndarray]:
        """Parameters as [W0, b0, W1, b1, ...]; live views, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        expected = [p.shape for p in self.param_list()]
        got = [np.shape(p) for p in params]
        if expected != got:
            raise ValueError(f"parameter shapes {got} do not match network {expected}")
        for i in range(len(self.weights)):
            self.weights[i] = np.array(params[2 * i], dtype=float)
            self.biases[i] = np.array(params[2 * i + 1], dtype=float)

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.layer_sizes = list(self.layer_sizes)
        dup.activations = list(self.activations)
        dup.weights = [W.copy() for W in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def polyak_update_from(self, online: "Mlp", tau: float) -> None:
        """theta_target <- tau * theta_online + (1 - tau) * theta_target."""
        if self.describe() != online.describe():
            raise ValueError("polyak update between mismatched architectures")
        for i in range(len(self.weights)):
            self.weights[i] *= 1.0 - tau
            self.weights[i] += tau * online.weights[i]
            self.biases[i] *= 1.0 - tau
            self.biases[i] += tau * online.biases[i]


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def mlp_gradients(net: Mlp, x, upstream) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backprop gradients of sum(upstream * net(x)) w.r.t. all parameters."""
    _, cache = net.forward_cached(x)
    grads, _ = net.backward(cache, upstream)
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int


class Adam:
    """Adam over a flat parameter list, matching Mlp.param_list order."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """One in-place Adam update; grads must align with params."""
        if len(params) != len(self.state.m) or len(grads) != len(params):
            raise ValueError("params/grads do not match optimizer state")
        s = self.state
        s.t += 1
        c1 = 1.0 - self.beta1**s.t
        c2 = 1.0 - self.beta2**s.t
        for p, g, m, v in zip(params, grads, s.m, s.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    """[(dW, db), ...] -> [dW0, db0, dW1, db1, ...] to match param_list."""
    out = []
    for dW, db in grads:
        out.extend((dW, db))
    return out
