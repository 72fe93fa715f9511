"""Small numpy core: tanh MLPs with manual backprop, Adam, polyak averaging,
running input normalizers and a seeded random stream.

Everything is float64. Parameters of a network live in a single flat array;
per-layer weight and bias arrays are views into it, so in-place optimizer
updates are immediately visible to forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError

DTYPE = np.float64
_ACTIVATIONS = ("identity", "tanh")


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


class SeededRng:
    """Deterministic random stream backed by PCG64.

    Identical seed and identical call sequence give identical draws. The
    full generator state round-trips through ``get_state``/``set_state``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "SeededRng":
        """Independent child stream; depends only on (seed, key)."""
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        child._gen = np.random.Generator(np.random.PCG64(seq))
        return child

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


class Mlp:
    """Fully connected network with tanh hidden layers.

    ``layer_sizes`` lists the width of every layer including input and
    output, e.g. ``[4, 8, 2]``. Weights for layer ``i`` are stored as an
    ``(n_in, n_out)`` block followed by the ``n_out`` biases.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        output_activation: str = "identity",
        params: np.ndarray | None = None,
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"layer sizes must be >= 2 positive ints, got {layer_sizes}")
        if output_activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.output_activation = output_activation
        self.n_params = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        if params is None:
            params = np.zeros(self.n_params, dtype=DTYPE)
        params = np.asarray(params, dtype=DTYPE)
        if params.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params = params.copy()
        self._bind()

    def _bind(self) -> None:
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[off:off + n_in * n_out].reshape(n_in, n_out))
            off += n_in * n_out
            self.biases.append(self.params[off:off + n_out])
            off += n_out

    @classmethod
    def initialized(cls, layer_sizes, rng: SeededRng, output_activation="identity") -> "Mlp":
        """Weights and biases uniform in +-1/sqrt(fan_in) of their layer."""
        net = cls(layer_sizes, output_activation)
        for w, b in zip(net.weights, net.biases):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return net

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.output_activation, self.params)

    def set_params(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=DTYPE)
        if values.shape != self.params.shape:
            raise ConfigurationError(f"expected {self.params.shape}, got {values.shape}")
        self.params[...] = values

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=DTYPE)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ConfigurationError(f"input width {x.shape[-1]} does not match first layer {self.n_in}")
        return x, single

    def forward_trace(self, x) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that also returns every layer's activation (input first)."""
        h, single = self._as_batch(x)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last or self.output_activation == "tanh":
                z = np.tanh(z)
            acts.append(z)
            h = z
        out = h[0] if single else h
        return out, acts

    def forward(self, x) -> np.ndarray:
        return self.forward_trace(x)[0]

    def backward(self, x, upstream, trace=None, param_grads=True):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(param_grad, input_grad)``; ``param_grad`` is a flat array
        laid out like ``params`` (or None when ``param_grads`` is False).
        Pass the ``trace`` from :meth:`forward_trace` to skip recomputing
        the forward pass.
        """
        if trace is None:
            _, trace = self.forward_trace(x)
        single = np.asarray(upstream).ndim == 1
        delta = np.asarray(upstream, dtype=DTYPE)
        if single:
            delta = delta[None, :]
        if delta.shape != trace[-1].shape:
            raise ConfigurationError(f"upstream shape {delta.shape} != output shape {trace[-1].shape}")
        grad = np.empty(self.n_params, dtype=DTYPE) if param_grads else None
        last = len(self.weights) - 1
        offsets = self._offsets()
        for i in range(last, -1, -1):
            out = trace[i + 1]
            if i < last or self.output_activation == "tanh":
                delta = delta * (1.0 - out * out)
            if not np.all(np.isfinite(delta)):
                raise NumericalError(f"non-finite gradient at layer {i}")
            if grad is not None:
                w_off, b_off, b_end = offsets[i]
                grad[w_off:b_off] = (trace[i].T @ delta).ravel()
                grad[b_off:b_end] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        input_grad = delta[0] if single else delta
        return grad, input_grad

    def _offsets(self) -> list[tuple[int, int, int]]:
        out, off = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append((off, off + n_in * n_out, off + n_in * n_out + n_out))
            off += (n_in + 1) * n_out
        return out


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size, dtype=DTYPE)
        if self.v is None:
            self.v = np.zeros(self.size, dtype=DTYPE)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ConfigurationError("Adam moment arrays must match parameter count")

    def copy(self) -> "AdamState":
        return AdamState(self.size, self.lr, self.beta1, self.beta2, self.eps,
                         self.step, self.m.copy(), self.v.copy())


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ConfigurationError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    _check_finite(grads, "Adam gradients")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def polyak_update(target: np.ndarray, main: np.ndarray, tau: float) -> np.ndarray:
    """``target <- tau * target + (1 - tau) * main`` in place.

    ``tau`` is the fraction of the old target that is retained.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"polyak coefficient must lie in [0, 1], got {tau}")
    if target.shape != main.shape:
        raise ConfigurationError(f"shape mismatch {target.shape} vs {main.shape}")
    target *= tau
    target += (1.0 - tau) * main
    return target


class RunningNormalizer:
    """Per-dimension running mean/std from accumulated sums.

    Uses the population standard deviation, floored at ``eps_std``. With no
    data the mean is 0 and std is 1. Outputs are clipped to +-``clip``.
    """

    def __init__(self, size: int, eps_std: float = 1e-2, clip: float = 5.0):
        if size <= 0:
            raise ConfigurationError("normalizer size must be positive")
        self.size = int(size)
        self.eps_std = float(eps_std)
        self.clip = float(clip)
        self.sum = np.zeros(self.size, dtype=DTYPE)
        self.sumsq = np.zeros(self.size, dtype=DTYPE)
        self.count = 0
        self.mean = np.zeros(self.size, dtype=DTYPE)
        self.std = np.ones(self.size, dtype=DTYPE)

    def update(self, batch) -> None:
        batch = np.asarray(batch, dtype=DTYPE).reshape(-1, self.size)
        _check_finite(batch, "normalizer batch")
        self.sum += batch.sum(axis=0)
        self.sumsq += (batch * batch).sum(axis=0)
        self.count += batch.shape[0]
        self._recompute()

    def _recompute(self) -> None:
        if self.count == 0:
            self.mean = np.zeros(self.size, dtype=DTYPE)
            self.std = np.ones(self.size, dtype=DTYPE)
            return
        self.mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - self.mean * self.mean, 0.0)
        self.std = np.maximum(np.sqrt(var), self.eps_std)

    def normalize(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=DTYPE)
        if v.shape[-1] != self.size:
            raise ConfigurationError(f"expected last dimension {self.size}, got {v.shape[-1]}")
        return np.clip((v - self.mean) / self.std, -self.clip, self.clip)

    def load(self, count: int, total: np.ndarray, total_sq: np.ndarray) -> None:
        self.count = int(count)
        self.sum = np.array(total, dtype=DTYPE)
        self.sumsq = np.array(total_sq, dtype=DTYPE)
        self._recompute()
