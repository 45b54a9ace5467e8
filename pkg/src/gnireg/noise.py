"""Gaussian noise injections on network activations.

Noise is applied to the activation vectors h_0 .. h_{L-1} (h_0 being the
input); the output layer is never noised. The noised recursion feeds each
layer the *noised* value of the previous activation:

    h~_k = h^_k + eps_k           additive,      eps_k ~ N(0, sigma_k^2 I)
    h~_k = h^_k (1 + sigma_k xi)  multiplicative, xi ~ N(0, I)

so the multiplicative draw has per-unit variance h^_k^2 sigma_k^2 and both
modes share one code path. Draws are independent per layer, unit, batch
element and call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError
from .linalg import RandomSource
from .network import ACTIVATIONS, BatchTrace, Network, backprop, forward_batch

MODES = ("none", "additive", "multiplicative")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-activation injection mode and variance for k = 0 .. L-1."""

    modes: tuple[str, ...]
    variances: tuple[float, ...]

    def __post_init__(self):
        if len(self.modes) != len(self.variances):
            raise ArgumentError("modes and variances must have equal length")
        for m in self.modes:
            if m not in MODES:
                raise ArgumentError(f"unknown noise mode '{m}'")
        for v in self.variances:
            if v < 0:
                raise DomainError(f"variance must be >= 0, got {v}")

    def __len__(self):
        return len(self.modes)

    @property
    def is_silent(self) -> bool:
        return all(m == "none" or v == 0.0 for m, v in zip(self.modes, self.variances))

    @staticmethod
    def none(n_layers: int) -> "NoiseSpec":
        return NoiseSpec(("none",) * n_layers, (0.0,) * n_layers)

    @staticmethod
    def uniform(n_layers: int, sigma2: float, mode: str = "additive") -> "NoiseSpec":
        """Same injection at every activation 0..L-1, as in the experiments."""
        return NoiseSpec((mode,) * n_layers, (float(sigma2),) * n_layers)


@dataclass
class NoisedBatchTrace:
    """One joint noise draw over a batch.

    h_hats[k] is the activation before noise, h_tildes[k] after; eps[k] the
    realised injection. post_scales[k] is d h~_k / d h^_k (None when the
    gradient passes through unchanged), which backprop consumes.
    """

    x: np.ndarray
    zs: list[np.ndarray]
    h_hats: list[np.ndarray]
    h_tildes: list[np.ndarray]
    eps: list[np.ndarray]
    post_scales: list[np.ndarray | None]

    @property
    def output(self) -> np.ndarray:
        return self.h_tildes[-1]

    def as_batch_trace(self) -> BatchTrace:
        return BatchTrace(self.x, self.zs, self.h_tildes)


def _inject(h_hat: np.ndarray, mode: str, sigma2: float, rs: RandomSource):
    """Returns (h_tilde, eps, post_scale)."""
    if mode == "none" or sigma2 == 0.0:
        return h_hat, np.zeros_like(h_hat), None
    sigma = float(np.sqrt(sigma2))
    if mode == "additive":
        eps = rs.normal(h_hat.shape, sigma)
        return h_hat + eps, eps, None
    # multiplicative: h~ = h^ (1 + sigma xi), realised variance h^2 sigma^2
    xi = rs.normal(h_hat.shape, 1.0)
    scale = 1.0 + sigma * xi
    return h_hat * scale, h_hat * sigma * xi, scale


def noised_forward_batch(net: Network, x: np.ndarray, spec: NoiseSpec,
                         rs: RandomSource) -> NoisedBatchTrace:
    x = np.asarray(x, dtype=np.float64)
    if len(spec) != net.depth:
        raise ArgumentError(
            f"noise spec covers {len(spec)} activations, network has {net.depth} layers"
        )
    h_tilde, eps0, scale0 = _inject(x, spec.modes[0], spec.variances[0], rs)
    zs, h_hats, h_tildes = [], [x], [h_tilde]
    eps, post_scales = [eps0], [scale0]
    for i, layer in enumerate(net.layers):
        z = h_tilde @ layer.w.T + layer.b
        h_hat = ACTIVATIONS[layer.activation][0](z)
        if i < net.depth - 1:
            h_tilde, e, scale = _inject(h_hat, spec.modes[i + 1], spec.variances[i + 1], rs)
        else:
            h_tilde, e, scale = h_hat, np.zeros_like(h_hat), None
        zs.append(z)
        h_hats.append(h_hat)
        h_tildes.append(h_tilde)
        eps.append(e)
        post_scales.append(scale)
    return NoisedBatchTrace(x, zs, h_hats, h_tildes, eps, post_scales)


@dataclass
class NoisedForwardTrace:
    """Single-input view with the realised output perturbation."""

    x: np.ndarray
    zs: list[np.ndarray]
    h_hats: list[np.ndarray]
    h_tildes: list[np.ndarray]
    eps: list[np.ndarray]
    accumulated: np.ndarray  # noised output minus clean output

    @property
    def output(self) -> np.ndarray:
        return self.h_tildes[-1]


def noised_forward(net: Network, x: np.ndarray, spec: NoiseSpec,
                   rs: RandomSource) -> NoisedForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    nbt = noised_forward_batch(net, x[None, :], spec, rs)
    clean = forward_batch(net, x[None, :]).output
    return NoisedForwardTrace(
        x,
        [z[0] for z in nbt.zs],
        [h[0] for h in nbt.h_hats],
        [h[0] for h in nbt.h_tildes],
        [e[0] for e in nbt.eps],
        (nbt.output - clean)[0],
    )


def noised_loss(net: Network, x: np.ndarray, y: np.ndarray, spec: NoiseSpec,
                loss_kind: str, rs: RandomSource) -> float:
    """Mean batch loss under one joint noise draw."""
    from .objective import per_example_loss

    nbt = noised_forward_batch(net, x, spec, rs)
    return float(per_example_loss(nbt.output, y, loss_kind).mean())


def noised_param_gradient(net: Network, x: np.ndarray, y: np.ndarray, spec: NoiseSpec,
                          loss_kind: str, rs: RandomSource):
    """Gradient of the noised batch loss for one draw; returns (loss, grads)."""
    from .network import _loss_head

    nbt = noised_forward_batch(net, x, spec, rs)
    loss, g_out = _loss_head(nbt.output, y, loss_kind)
    return loss, backprop(net, nbt.as_batch_trace(), g_out, nbt.post_scales)


def mc_noised_losses(net: Network, x: np.ndarray, y: np.ndarray, spec: NoiseSpec,
                     loss_kind: str, draws: int, rs: RandomSource,
                     chunk: int = 128) -> np.ndarray:
    """Per-draw mean batch losses for `draws` independent joint draws.

    Draws are vectorised by tiling the batch: rows of chunk c carry noise from
    the split stream rs.split(c), so results are reproducible for a fixed seed.
    """
    from .objective import per_example_loss

    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    out = np.empty(draws)
    done = 0
    c = 0
    while done < draws:
        t = min(chunk, draws - done)
        x_rep = np.tile(x, (t, 1))
        y_rep = _tile_targets(y, t)
        nbt = noised_forward_batch(net, x_rep, spec, rs.split(c))
        per_row = per_example_loss(nbt.output, y_rep, loss_kind)
        out[done:done + t] = per_row.reshape(t, b).mean(axis=1)
        done += t
        c += 1
    return out


def _tile_targets(y, t: int):
    y = np.asarray(y)
    if y.ndim == 1:
        return np.tile(y, t)
    return np.tile(y, (t, 1))
