"""Feed-forward dense networks: forward passes, gradients, layer Jacobians.

Layer k (1-indexed in the math, 0-indexed in code) computes
``h_k = phi(W_k h_{k-1} + b_k)``; the final layer always has the identity
activation so that the outputs are raw regression values or pre-softmax
logits. Activations live in a registry together with their first and second
derivatives -- the second derivatives feed the tape when the Jacobian
penalty is differentiated.

The layer Jacobian ``J_k = d h_L / d h_k`` (evaluated on the clean,
noise-free trace) is obtained by one reverse recursion
``J_{k-1} = J_k . diag(phi'(z_k)) W_k`` starting from the identity, which is
the batched equivalent of one reverse sweep per output unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError, UnsupportedError
from .linalg import RandomSource


def _sigmoid(x):
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def _sigmoid_prime(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _sigmoid_second(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


# name -> (phi, phi', phi''); relu's subgradient at the kink is taken as 0
ACTIVATIONS = {
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda x: (x > 0).astype(np.float64),
        lambda x: np.zeros_like(x),
    ),
    "elu": (
        lambda x: np.where(x > 0, x, np.expm1(x)),
        lambda x: np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0))),
        lambda x: np.where(x > 0, 0.0, np.exp(np.minimum(x, 0.0))),
    ),
    "sigmoid": (_sigmoid, _sigmoid_prime, _sigmoid_second),
    "softplus": (
        lambda x: np.logaddexp(0.0, x),
        _sigmoid,
        _sigmoid_prime,
    ),
    "identity": (
        lambda x: x,
        lambda x: np.ones_like(x),
        lambda x: np.zeros_like(x),
    ),
}

RELU_LIKE = ("relu", "elu", "softplus")


@dataclass
class Layer:
    w: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)
    activation: str

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ShapeError(f"layer shapes inconsistent: w{self.w.shape}, b{self.b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation '{self.activation}'")


@dataclass
class Network:
    """Ordered dense layers; immutable by convention once built."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ArgumentError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.w.shape[1] != a.w.shape[0]:
                raise ShapeError(
                    f"layer dims do not chain: {a.w.shape} -> {b.w.shape}"
                )
        if self.layers[-1].activation != "identity":
            raise ArgumentError("final layer activation must be identity")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].w.shape[1]] + [l.w.shape[0] for l in self.layers]

    @property
    def n_params(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)

    def copy(self) -> "Network":
        return Network([Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


def mlp(dims, activation="relu", rs: RandomSource | None = None, init_scale=1.0) -> Network:
    """Fan-in uniform init U(-s/sqrt(d_in), +s/sqrt(d_in)); zero biases.

    Hidden layers use `activation`; the output layer is always identity.
    """
    if len(dims) < 2:
        raise ArgumentError("dims must list at least input and output sizes")
    rs = rs if rs is not None else RandomSource(0)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        bound = init_scale / np.sqrt(d_in)
        w = rs.uniform((d_out, d_in), -bound, bound)
        b = np.zeros(d_out)
        act = "identity" if i == len(dims) - 2 else activation
        layers.append(Layer(w, b, act))
    return Network(layers)


@dataclass
class ForwardTrace:
    """Clean activations of one input: h_0 = x, pre-activations z, post h."""

    x: np.ndarray
    zs: list[np.ndarray]  # zs[i] = z of layer i
    hs: list[np.ndarray]  # hs[0] = x, hs[i+1] = phi(zs[i])

    @property
    def output(self) -> np.ndarray:
        return self.hs[-1]


@dataclass
class BatchTrace:
    """Same as ForwardTrace but rows are batch elements."""

    x: np.ndarray
    zs: list[np.ndarray]
    hs: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.hs[-1]


def forward_batch(net: Network, x: np.ndarray) -> BatchTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch input must be 2-D, got shape {x.shape}")
    if x.shape[1] != net.dims[0]:
        raise ShapeError(f"input dim {x.shape[1]} != network input dim {net.dims[0]}")
    h = x
    zs, hs = [], [x]
    for layer in net.layers:
        z = h @ layer.w.T + layer.b
        h = ACTIVATIONS[layer.activation][0](z)
        zs.append(z)
        hs.append(h)
    return BatchTrace(x, zs, hs)


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"input must be a vector, got shape {x.shape}")
    bt = forward_batch(net, x[None, :])
    return ForwardTrace(x, [z[0] for z in bt.zs], [h[0] for h in bt.hs])


def batch_jacobians(net: Network, trace: BatchTrace) -> list[np.ndarray]:
    """J_k = d h_L / d h_k per batch element, k = 0..L-1; entry k is (B, d_L, d_k)."""
    b, d_l = trace.output.shape
    if len(trace.zs) != net.depth:
        raise ShapeError("trace does not match network depth")
    m = np.broadcast_to(np.eye(d_l), (b, d_l, d_l)).copy()
    jacs: list[np.ndarray | None] = [None] * net.depth
    for i in reversed(range(net.depth)):
        layer = net.layers[i]
        f1 = ACTIVATIONS[layer.activation][1](trace.zs[i])  # (B, d_out)
        t = m * f1[:, None, :]
        d_in = layer.w.shape[1]
        m = (t.reshape(b * d_l, -1) @ layer.w).reshape(b, d_l, d_in)
        jacs[i] = m
    return jacs  # type: ignore[return-value]


@dataclass
class JacobianSet:
    """Per-layer Jacobians of one clean trace, index k in [0, L-1]."""

    jacobians: list[np.ndarray]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.jacobians[k]

    def __len__(self) -> int:
        return len(self.jacobians)


def layer_jacobians(net: Network, trace: ForwardTrace) -> JacobianSet:
    if len(trace.zs) != net.depth or trace.x.shape[0] != net.dims[0]:
        raise ShapeError("trace does not match network")
    bt = BatchTrace(trace.x[None, :], [z[None, :] for z in trace.zs],
                    [h[None, :] for h in trace.hs])
    return JacobianSet([j[0] for j in batch_jacobians(net, bt)])


def masked_weights(net: Network, trace: ForwardTrace | BatchTrace,
                   layer: int | None = None) -> dict[int, np.ndarray]:
    """Active-row masked weights of relu layers: rows of W_k for inactive units zeroed.

    The mask follows the layer-map derivative d h_k / d h_{k-1} = diag(z_k > 0) W_k,
    so inactive output units zero *rows*. For a batch trace the mask is the
    per-element one of the first row; use layer_stats for batch-averaged norms.
    """
    relu_idx = [i for i, l in enumerate(net.layers) if l.activation == "relu"]
    if layer is not None:
        if net.layers[layer].activation != "relu":
            raise UnsupportedError(f"layer {layer} is not relu")
        relu_idx = [layer]
    elif not relu_idx:
        raise UnsupportedError("network has no relu layers")
    out = {}
    for i in relu_idx:
        z = trace.zs[i]
        mask = (z > 0).astype(np.float64)
        if mask.ndim == 2:
            mask = mask[0]
        out[i] = mask[:, None] * net.layers[i].w
    return out


def _loss_head(h_out: np.ndarray, y: np.ndarray, loss_kind: str):
    """Mean batch loss and its gradient w.r.t. the outputs (gradient includes 1/B)."""
    b = h_out.shape[0]
    if loss_kind == "mse":
        y = np.asarray(y, dtype=np.float64).reshape(h_out.shape)
        diff = h_out - y
        return 0.5 * float(np.sum(diff * diff)) / b, diff / b
    if loss_kind == "cross_entropy":
        y_onehot = _as_onehot(y, h_out.shape[1])
        m = h_out.max(axis=1, keepdims=True)
        e = np.exp(h_out - m)
        p = e / e.sum(axis=1, keepdims=True)
        lse = np.log(e.sum(axis=1)) + m[:, 0]
        loss = float(np.mean(lse - np.sum(h_out * y_onehot, axis=1)))
        return loss, (p - y_onehot) / b
    raise ArgumentError(f"unknown loss_kind '{loss_kind}'")


def _as_onehot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 1:
        onehot = np.zeros((y.shape[0], n_classes))
        onehot[np.arange(y.shape[0]), y.astype(int)] = 1.0
        return onehot
    return np.asarray(y, dtype=np.float64)


def backprop(net: Network, trace: BatchTrace, g_out: np.ndarray,
             post_scale: list[np.ndarray] | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse pass from an output gradient to (dW, db) per layer.

    `post_scale[k]`, when given, is the elementwise factor d h~_k / d h^_k of a
    noised forward pass (ones for additive noise, 1 + sigma*xi for
    multiplicative); `trace` then holds the noised activations.
    """
    g = g_out
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.depth  # type: ignore
    for i in reversed(range(net.depth)):
        layer = net.layers[i]
        if post_scale is not None and post_scale[i + 1] is not None:
            g = g * post_scale[i + 1]
        gz = g * ACTIVATIONS[layer.activation][1](trace.zs[i])
        grads[i] = (gz.T @ trace.hs[i], gz.sum(axis=0))
        g = gz @ layer.w
    return grads


def param_gradient(net: Network, x: np.ndarray, y: np.ndarray,
                   loss_kind: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradient of the mean batch loss over all (W_k, b_k), by reverse mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("batch must be a non-empty 2-D array")
    trace = forward_batch(net, x)
    _, g_out = _loss_head(trace.output, y, loss_kind)
    return backprop(net, trace, g_out)


def flatten_params(net: Network) -> np.ndarray:
    return np.concatenate([np.concatenate([l.w.ravel(), l.b]) for l in net.layers])


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])


def with_params(net: Network, flat: np.ndarray) -> Network:
    """New network with parameters taken from a flat vector (ordering of flatten_params)."""
    layers, off = [], 0
    for l in net.layers:
        w = flat[off:off + l.w.size].reshape(l.w.shape)
        off += l.w.size
        b = flat[off:off + l.b.size].copy()
        off += l.b.size
        layers.append(Layer(w.copy(), b, l.activation))
    if off != flat.size:
        raise ShapeError(f"flat parameter vector length {flat.size}, expected {off}")
    return Network(layers)


def forward_graph(net: Network, x: np.ndarray):
    """Forward pass on the autodiff tape.

    Returns (params, zs, hs): per-layer (W, b) leaf tensors, pre-activation
    nodes, and activation nodes with hs[0] the constant input.
    """
    params = [(ad.Tensor(l.w), ad.Tensor(l.b)) for l in net.layers]
    h = ad.constant(np.asarray(x, dtype=np.float64))
    zs, hs = [], [h]
    for (tw, tb), layer in zip(params, net.layers):
        z = h @ ad.transpose(tw) + tb
        f, f1, _ = ACTIVATIONS[layer.activation]
        h = ad.elementwise(z, f, f1)
        zs.append(z)
        hs.append(h)
    return params, zs, hs


def save_checkpoint(net: Network, path, seed=None, extra: dict | None = None):
    """Weight checkpoint: layer dims, activations, row-major weights, biases, seed."""
    payload = {
        "dims": net.dims,
        "activations": [l.activation for l in net.layers],
        "layers": [{"w": l.w.tolist(), "b": l.b.tolist()} for l in net.layers],
        "seed": seed,
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[Network, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    layers = [
        Layer(np.array(spec["w"], dtype=np.float64), np.array(spec["b"], dtype=np.float64), act)
        for spec, act in zip(payload["layers"], payload["activations"])
    ]
    return Network(layers), payload
