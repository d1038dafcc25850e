"""Small float64 neural engine: one LSTM layer, an MLP head and Adam.

Everything the nowcasting predictor needs and nothing more.  Gradients are
exact reverse-mode (backpropagation through time), checked against finite
differences in the test suite.

Parameters of a :class:`Network` live in one flat buffer ``theta``; the
:class:`LstmParams` and :class:`MlpParams` arrays are views into it, so a
gradient is simply a flat array aligned with ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "LstmParams",
    "MlpParams",
    "AdamState",
    "Network",
    "lstm_forward",
    "mlp_forward",
    "backward",
    "adam_step",
    "softplus",
]

# gate blocks along the 4*hidden axis: input, forget, output, candidate


@numba.njit(cache=True, fastmath=True)
def _lstm_forward_kernel(x, W_x, W_h, b):
    n_batch, n_steps, n_in = x.shape
    H = W_h.shape[0]
    G = 4 * H
    hs = np.zeros((n_batch, n_steps + 1, H))
    cs = np.zeros((n_batch, n_steps + 1, H))
    gates = np.empty((n_batch, n_steps, G))
    tcs = np.empty((n_batch, n_steps, H))
    z = np.empty(G)
    for n in range(n_batch):
        for t in range(n_steps):
            for k in range(G):
                z[k] = b[k]
            for d in range(n_in):
                xv = x[n, t, d]
                for k in range(G):
                    z[k] += xv * W_x[d, k]
            for j in range(H):
                hv = hs[n, t, j]
                for k in range(G):
                    z[k] += hv * W_h[j, k]
            # clipped so exp never overflows under fastmath
            for k in range(3 * H):
                z[k] = 1.0 / (1.0 + np.exp(-min(max(z[k], -40.0), 40.0)))
            for k in range(3 * H, G):
                z[k] = np.tanh(z[k])
            for j in range(H):
                c = z[H + j] * cs[n, t, j] + z[j] * z[3 * H + j]
                tc = np.tanh(c)
                cs[n, t + 1, j] = c
                tcs[n, t, j] = tc
                hs[n, t + 1, j] = z[2 * H + j] * tc
            for k in range(G):
                gates[n, t, k] = z[k]
    return hs, cs, gates, tcs


@numba.njit(cache=True, fastmath=True)
def _lstm_backward_kernel(x, W_h, hs, cs, gates, tcs, dhs, dW_x, dW_h, db):
    n_batch, n_steps, n_in = x.shape
    H = W_h.shape[0]
    G = 4 * H
    dz = np.empty(G)
    dh = np.empty(H)
    dc = np.empty(H)
    for n in range(n_batch):
        for j in range(H):
            dh[j] = 0.0
            dc[j] = 0.0
        for t in range(n_steps - 1, -1, -1):
            for j in range(H):
                dh[j] += dhs[n, t, j]
                i = gates[n, t, j]
                f = gates[n, t, H + j]
                o = gates[n, t, 2 * H + j]
                g = gates[n, t, 3 * H + j]
                tc = tcs[n, t, j]
                dcj = dc[j] + dh[j] * o * (1.0 - tc * tc)
                dz[j] = dcj * g * i * (1.0 - i)
                dz[H + j] = dcj * cs[n, t, j] * f * (1.0 - f)
                dz[2 * H + j] = dh[j] * tc * o * (1.0 - o)
                dz[3 * H + j] = dcj * i * (1.0 - g * g)
                dc[j] = dcj * f
            for k in range(G):
                db[k] += dz[k]
            for d in range(n_in):
                xv = x[n, t, d]
                for k in range(G):
                    dW_x[d, k] += xv * dz[k]
            for j in range(H):
                hv = hs[n, t, j]
                s = 0.0
                for k in range(G):
                    dW_h[j, k] += hv * dz[k]
                    s += W_h[j, k] * dz[k]
                dh[j] = s


@numba.njit(cache=True)
def _adam_kernel(params, grad, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i in range(params.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTIVATIONS = ("tanh", "relu", "identity", "softplus")


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return softplus(z)
    return z


def _activation_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    if name == "softplus":
        return _sigmoid(z)
    return np.ones_like(z)


@dataclass
class LstmParams:
    """Gate weights ``W_x (input, 4H)``, ``W_h (H, 4H)`` and bias ``b (4H,)``.

    Gate blocks are ordered input, forget, output, candidate.
    """

    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.W_h.shape[0]
        if self.W_h.shape != (H, 4 * H) or self.W_x.ndim != 2 or self.W_x.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ValueError(
                f"inconsistent LSTM shapes: W_x {self.W_x.shape}, W_h {self.W_h.shape}, b {self.b.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.W_x.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[0]


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)) or not self.weights:
            raise ValueError("MLP needs one weight, bias and activation per layer")
        for k, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: bias {b.shape} does not match weight {W.shape}")
            if k and self.weights[k - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {k}: input {W.shape[0]} does not chain")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("final MLP layer must have output dimension 1")

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]


def lstm_forward(params: LstmParams, sequence) -> np.ndarray:
    """Hidden state after every step, shape ``(T, H)``; zero initial state."""
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != params.input_size:
        raise ValueError(f"expected sequence of shape (T, {params.input_size}), got {x.shape}")
    hs, _, _, _ = _lstm_forward_kernel(x[None], params.W_x, params.W_h, params.b)
    return hs[0, 1:]


def _mlp_forward(params: MlpParams, a):
    trace = [a]
    zs = []
    for W, b, act in zip(params.weights, params.biases, params.activations):
        z = a @ W + b
        a = _activate(act, z)
        zs.append(z)
        trace.append(a)
    return trace, zs


def mlp_forward(params: MlpParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_size,):
        raise ValueError(f"expected input of length {params.input_size}, got shape {x.shape}")
    trace, _ = _mlp_forward(params, x[None])
    return float(trace[-1][0, 0])


class Network:
    """LSTM over a lag sequence, then an MLP over ``[h_T, extras]``.

    ``forward`` keeps the intermediates of its batch; ``backward`` consumes
    them.  One instance is not safe to share between threads.
    """

    def __init__(
        self,
        input_size: int = 1,
        hidden_size: int = 32,
        extra_size: int = 0,
        mlp_hidden: tuple[int, ...] = (32,),
        hidden_activation: str = "tanh",
        output: str = "softplus",
        seed: int | None = 0,
    ):
        if output not in ("softplus", "identity"):
            raise ValueError(f"output must be 'softplus' or 'identity', got {output!r}")
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.extra_size = int(extra_size)
        self.mlp_hidden = tuple(int(k) for k in mlp_hidden)
        self.hidden_activation = hidden_activation
        self.output = output
        H = self.hidden_size
        dims = [H + self.extra_size, *self.mlp_hidden, 1]
        shapes = [("lstm.W_x", (self.input_size, 4 * H)), ("lstm.W_h", (H, 4 * H)), ("lstm.b", (4 * H,))]
        for k in range(len(dims) - 1):
            shapes.append((f"mlp.W{k}", (dims[k], dims[k + 1])))
            shapes.append((f"mlp.b{k}", (dims[k + 1],)))
        self.shapes = dict(shapes)
        self.theta = np.zeros(sum(int(np.prod(s)) for _, s in shapes))
        self._bind()
        self._cache = None
        if seed is not None:
            self.initialize(seed)

    def _views(self, flat):
        out, offset = {}, 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            out[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return out

    def _bind(self):
        v = self._views(self.theta)
        self.lstm = LstmParams(v["lstm.W_x"], v["lstm.W_h"], v["lstm.b"])
        n = len(self.mlp_hidden) + 1
        acts = [self.hidden_activation] * (n - 1) + [self.output]
        self.mlp = MlpParams([v[f"mlp.W{k}"] for k in range(n)], [v[f"mlp.b{k}"] for k in range(n)], acts)

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        """Named views of a flat parameter-aligned vector (e.g. a gradient)."""
        if flat.shape != self.theta.shape:
            raise ValueError(f"expected flat vector of shape {self.theta.shape}, got {flat.shape}")
        return self._views(flat)

    def initialize(self, seed: int) -> None:
        """Uniform ``±1/sqrt(fan_in)`` weights, zero biases, forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        for name, arr in self._views(self.theta).items():
            if ".W" in name:
                bound = 1.0 / np.sqrt(arr.shape[0])
                arr[...] = rng.uniform(-bound, bound, size=arr.shape)
            else:
                arr[...] = 0.0
        H = self.hidden_size
        self.lstm.b[H : 2 * H] = 1.0
        self._cache = None

    def copy(self) -> "Network":
        other = Network.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.theta = self.theta.copy()
        other._bind()
        other._cache = None
        return other

    def config(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "extra_size": self.extra_size,
            "mlp_hidden": list(self.mlp_hidden),
            "hidden_activation": self.hidden_activation,
            "output": self.output,
        }

    def _run(self, sequences, extras):
        x = np.ascontiguousarray(sequences, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ValueError(f"expected sequences of shape (B, T, {self.input_size}), got {x.shape}")
        B = x.shape[0]
        e = np.zeros((B, 0)) if extras is None else np.asarray(extras, dtype=np.float64).reshape(B, -1)
        if e.shape[1] != self.extra_size:
            raise ValueError(f"expected {self.extra_size} extra features, got {e.shape[1]}")
        hs, cs, gates, tcs = _lstm_forward_kernel(x, self.lstm.W_x, self.lstm.W_h, self.lstm.b)
        a0 = np.concatenate([hs[:, -1], e], axis=1)
        trace, zs = _mlp_forward(self.mlp, a0)
        return trace[-1][:, 0].copy(), (x, hs, cs, gates, tcs, trace, zs)

    def forward(self, sequences, extras=None) -> np.ndarray:
        """Outputs for a batch: ``sequences (B, T, input)``, ``extras (B, extra)``."""
        out, self._cache = self._run(sequences, extras)
        return out

    def predict(self, sequences, extras=None) -> np.ndarray:
        """Like :meth:`forward` but keeps no state, so it is safe to call concurrently."""
        return self._run(sequences, extras)[0]

    def backward(self, upstream, out=None) -> np.ndarray:
        """Gradient of ``sum(upstream * outputs)`` with respect to ``theta``.

        ``out`` may be a preallocated flat buffer, overwritten in place.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward pass")
        x, hs, cs, gates, tcs, trace, zs = self._cache
        g = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
        if g.shape[0] != x.shape[0]:
            raise RuntimeError(f"upstream has {g.shape[0]} entries but the cached batch has {x.shape[0]}")
        if out is None:
            grad = np.zeros_like(self.theta)
            views = self._views(grad)
        else:
            grad = out
            grad[...] = 0.0
            if getattr(self, "_out_views", (None,))[0] is not out:
                self._out_views = (out, self._views(out))
            views = self._out_views[1]
        n = len(self.mlp.weights)
        for k in range(n - 1, -1, -1):
            act = self.mlp.activations[k]
            g = g * _activation_grad(act, zs[k], trace[k + 1])
            views[f"mlp.W{k}"][...] = trace[k].T @ g
            views[f"mlp.b{k}"][...] = g.sum(axis=0)
            g = g @ self.mlp.weights[k].T
        H = self.hidden_size
        dhs = np.zeros((x.shape[0], x.shape[1], H))
        dhs[:, -1] = g[:, :H]
        _lstm_backward_kernel(
            x, self.lstm.W_h, hs, cs, gates, tcs, dhs, views["lstm.W_x"], views["lstm.W_h"], views["lstm.b"]
        )
        return grad


def backward(network: Network, upstream) -> np.ndarray:
    return network.backward(upstream)


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for :func:`adam_step`."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **hyper)


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray):
    """Bias-corrected Adam, no weight decay.  Updates ``params`` and ``state`` in place."""
    if gradient.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, gradient {gradient.shape}, state {state.m.shape}")
    arrays = (params, gradient, state.m, state.v)
    if not all(a.flags.c_contiguous for a in arrays):
        raise ValueError("adam_step needs C-contiguous arrays")
    state.step += 1
    flat = [a.reshape(-1) for a in arrays]
    _adam_kernel(*flat, state.lr, state.beta1, state.beta2, state.eps, state.step)
    return params, state
