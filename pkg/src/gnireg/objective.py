"""Losses, output Hessians, and the Jacobian-trace regulariser.

Marginalising the injected noise out of the perturbed loss leaves, to second
order, the penalty

    R = E_batch[ 1/2 sum_k sigma_k^2 Tr(J_k^T H_L J_k) ]

where J_k is the layer-k Jacobian of the outputs and H_L the loss Hessian in
the outputs. For MSE H_L is the identity and R reduces to weighted squared
Frobenius norms of the Jacobians; for cross-entropy H_L = diag(p) - p p^T
depends only on the softmax probabilities, and dropping its off-diagonal
part against J_k J_k^T gives the cheaper `diag` variant used for training.
R is always evaluated on clean (noise-free) activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, DomainError, ShapeError, UnsupportedError
from .network import (ACTIVATIONS, RELU_LIKE, Network, batch_jacobians,
                      forward_batch)
from .noise import NoiseSpec


def mse_loss(h_out: np.ndarray, y: np.ndarray) -> float:
    """0.5 * ||y - h||^2 for a single prediction."""
    h_out = np.asarray(h_out, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if h_out.shape != y.shape:
        raise ShapeError(f"prediction {h_out.shape} vs target {y.shape}")
    d = y - h_out
    return 0.5 * float(d @ d)


def softmax(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    e = np.exp(h - h.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(h_out: np.ndarray, y_onehot: np.ndarray) -> float:
    """Cross-entropy of the softmax of logits against a one-hot target."""
    h_out = np.asarray(h_out, dtype=np.float64)
    y = np.asarray(y_onehot, dtype=np.float64)
    if y.shape != h_out.shape:
        raise ShapeError(f"logits {h_out.shape} vs target {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and y.sum() == 1):
        raise ArgumentError("target must be one-hot")
    m = h_out.max()
    lse = m + np.log(np.exp(h_out - m).sum())
    return float(lse - h_out @ y)


def per_example_loss(h_out: np.ndarray, y, loss_kind: str) -> np.ndarray:
    """Loss per batch row; the batch loss everywhere is the mean of these."""
    h_out = np.asarray(h_out, dtype=np.float64)
    if loss_kind == "mse":
        y = np.asarray(y, dtype=np.float64).reshape(h_out.shape)
        return 0.5 * np.sum((y - h_out) ** 2, axis=1)
    if loss_kind == "cross_entropy":
        y = np.asarray(y)
        idx = y.argmax(axis=1) if y.ndim == 2 else y.astype(int)
        m = h_out.max(axis=1)
        lse = m + np.log(np.exp(h_out - m[:, None]).sum(axis=1))
        return lse - h_out[np.arange(h_out.shape[0]), idx]
    raise ArgumentError(f"unknown loss_kind '{loss_kind}'")


def batch_loss(net: Network, x, y, loss_kind: str) -> float:
    return float(per_example_loss(forward_batch(net, x).output, y, loss_kind).mean())


def ce_hessian(p: np.ndarray) -> np.ndarray:
    """Hessian of softmax cross-entropy w.r.t. the logits: diag(p) - p p^T.

    Symmetric, positive semi-definite, rows summing to zero; independent of
    the label.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeError("p must be a vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise DomainError("p must be a probability distribution")
    return np.diag(p) - np.outer(p, p)


@dataclass
class RegBreakdown:
    """Total penalty and the per-layer contributions it sums."""

    total: float
    per_layer: list[float]
    variant: str

    def __post_init__(self):
        assert abs(self.total - sum(self.per_layer)) <= 1e-9 * max(1.0, abs(self.total))


def _per_unit_variances(trace, spec: NoiseSpec, k: int) -> np.ndarray | None:
    """(B, d_k) injection variance per unit; None when layer k is silent."""
    mode, s2 = spec.modes[k], spec.variances[k]
    if mode == "none" or s2 == 0.0:
        return None
    h_k = trace.hs[k]
    if mode == "additive":
        return np.full_like(h_k, s2)
    return s2 * h_k * h_k  # multiplicative: per-unit variance sigma^2 h_k^2


def _reg_from_trace(net: Network, trace, spec: NoiseSpec, hessian: str) -> RegBreakdown:
    jacs = batch_jacobians(net, trace)
    if hessian != "identity":
        p = softmax(trace.output)  # (B, d_L)
        diag_h = p * (1.0 - p)
    per_layer = []
    for k in range(net.depth):
        v = _per_unit_variances(trace, spec, k)
        if v is None:
            per_layer.append(0.0)
            continue
        j = jacs[k]  # (B, d_L, d_k)
        if hessian == "identity":
            quad = np.einsum("bij,bij->bj", j, j)
        elif hessian == "ce_diag":
            quad = np.einsum("bi,bij->bj", diag_h, j * j)
        elif hessian == "ce_full":
            # H = diag(p) - p p^T, so (H J) rows are p_i (J_i - p^T J)
            pj = np.einsum("bi,bij->bj", p, j)  # (B, d_k)
            hj = p[:, :, None] * (j - pj[:, None, :])
            quad = np.einsum("bij,bij->bj", j, hj)
        else:
            raise ArgumentError(f"unknown hessian variant '{hessian}'")
        per_layer.append(0.5 * float(np.mean(np.sum(v * quad, axis=1))))
    return RegBreakdown(sum(per_layer), per_layer, hessian)


def reg_mse(net: Network, x: np.ndarray, spec: NoiseSpec) -> RegBreakdown:
    """Regression penalty: 1/2 E_batch sum_k sigma_k^2 ||J_k||_F^2."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("batch must be a non-empty 2-D array")
    bd = _reg_from_trace(net, forward_batch(net, x), spec, "identity")
    return RegBreakdown(bd.total, bd.per_layer, "mse")


def reg_ce(net: Network, x: np.ndarray, spec: NoiseSpec, variant: str = "diag") -> RegBreakdown:
    """Classification penalty; `diag` drops the Hessian's off-diagonal part."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("batch must be a non-empty 2-D array")
    if variant not in ("full", "diag"):
        raise ArgumentError(f"variant must be 'full' or 'diag', got '{variant}'")
    bd = _reg_from_trace(net, forward_batch(net, x), spec, f"ce_{variant}")
    return RegBreakdown(bd.total, bd.per_layer, f"ce_{variant}")


def reg(net: Network, x: np.ndarray, spec: NoiseSpec, loss_kind: str,
        variant: str = "diag") -> RegBreakdown:
    if loss_kind == "mse":
        return reg_mse(net, x, spec)
    if loss_kind == "cross_entropy":
        return reg_ce(net, x, spec, variant)
    raise ArgumentError(f"unknown loss_kind '{loss_kind}'")


def linear_upper_bound(net: Network, spec: NoiseSpec, loss_kind: str = "mse") -> list[float]:
    """Per-layer penalty of the equivalent linear network W_L ... W_{k+1}.

    For at-most-linear activations this dominates the per-layer penalty; it
    is exact for a purely linear (identity) network. Cross-entropy uses the
    worst-case diagonal Hessian bound 1/4.
    """
    for layer in net.layers[:-1]:
        if layer.activation not in RELU_LIKE + ("identity",):
            raise UnsupportedError(
                f"bound requires at-most-linear activations, got '{layer.activation}'"
            )
    prod = None
    bounds = [0.0] * net.depth
    for k in reversed(range(net.depth)):
        w = net.layers[k].w
        prod = w if prod is None else prod @ w
        s2 = spec.variances[k] if spec.modes[k] != "none" else 0.0
        fro = float(np.sum(prod * prod))
        if loss_kind == "mse":
            bounds[k] = 0.5 * s2 * fro
        elif loss_kind == "cross_entropy":
            bounds[k] = 0.5 * s2 * 0.25 * fro
        else:
            raise ArgumentError(f"unknown loss_kind '{loss_kind}'")
    return bounds


# ---------------------------------------------------------------------------
# Tape graphs: the same quantities as differentiable nodes, for explicit mode.


def loss_graph(h_out: ad.Tensor, y, loss_kind: str) -> ad.Tensor:
    """Mean batch loss as a tape node on the output tensor."""
    b = h_out.value.shape[0]
    if loss_kind == "mse":
        y_c = ad.constant(np.asarray(y, dtype=np.float64).reshape(h_out.value.shape))
        d = h_out - y_c
        return ad.scale(ad.sum_all(d * d), 0.5 / b)
    if loss_kind == "cross_entropy":
        y = np.asarray(y)
        onehot = np.zeros(h_out.value.shape)
        idx = y.argmax(axis=1) if y.ndim == 2 else y.astype(int)
        onehot[np.arange(b), idx] = 1.0
        m = ad.constant(h_out.value.max(axis=1, keepdims=True))  # detached shift
        lse = ad.log(ad.sum_axis(ad.exp(h_out - m), 1)) + m
        picked = ad.sum_axis(h_out * ad.constant(onehot), 1)
        return ad.scale(ad.sum_all(lse - picked), 1.0 / b)
    raise ArgumentError(f"unknown loss_kind '{loss_kind}'")


def softmax_graph(h_out: ad.Tensor) -> ad.Tensor:
    m = ad.constant(h_out.value.max(axis=1, keepdims=True))
    e = ad.exp(h_out - m)
    return e * ad.reciprocal(ad.sum_axis(e, 1))


def reg_graph(net: Network, params, zs, hs, spec: NoiseSpec, loss_kind: str,
              variant: str = "diag") -> ad.Tensor:
    """The penalty as a tape node over the forward_graph tensors.

    Rebuilds each J_k row by the reverse recursion with activation-derivative
    primitives, so one backward sweep differentiates the penalty through the
    Jacobians (and through the softmax Hessian weights for cross-entropy).
    """
    b, d_l = hs[-1].value.shape
    if loss_kind == "cross_entropy":
        if variant != "diag":
            raise ArgumentError("tape penalty supports the diag variant for cross-entropy")
        p = softmax_graph(hs[-1])
        diag_h = p * (1.0 - p)
    # rows[i][k]: J_k row for output i, shape (B, d_k)
    act_prime_nodes = []
    for z, layer in zip(zs, net.layers):
        _, f1, f2 = ACTIVATIONS[layer.activation]
        act_prime_nodes.append(ad.elementwise(z, f1, f2))
    total = None
    for i in range(d_l):
        e_i = np.zeros((b, d_l))
        e_i[:, i] = 1.0
        v = ad.constant(e_i)
        rows = [None] * net.depth
        for k in reversed(range(net.depth)):
            v = (v * act_prime_nodes[k]) @ params[k][0]  # (B, d_k)
            rows[k] = v
        for k in range(net.depth):
            mode, s2 = spec.modes[k], spec.variances[k]
            if mode == "none" or s2 == 0.0:
                continue
            sq = rows[k] * rows[k]
            if mode == "multiplicative":
                sq = sq * (hs[k] * hs[k])
            per_element = ad.sum_axis(sq, 1)  # (B, 1)
            if loss_kind == "cross_entropy":
                w_i = ad.sum_axis(diag_h * ad.constant(e_i), 1)  # (B,1): p_i(1-p_i)
                per_element = per_element * w_i
            term = ad.scale(ad.sum_all(per_element), 0.5 * s2 / b)
            total = term if total is None else total + term
    if total is None:
        total = ad.constant(0.0)
    return total
