"""Measurement instruments: remainder estimator, Hessian trace, spectra,
derivative-energy identity, layer striation, margins, sensitivity.

These are read-only probes of a trained (or freshly initialised) network;
every stochastic estimate takes an explicit RandomSource and is reproducible
for a fixed seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import objective
from .errors import ArgumentError, UnsupportedError
from .linalg import RandomSource
from .network import (Network, batch_jacobians, flatten_grads, flatten_params,
                      forward_batch, param_gradient, with_params)
from .noise import NoiseSpec, mc_noised_losses


@dataclass
class RemainderEstimate:
    """Monte-Carlo decomposition of the mean noised loss into L + R + remainder."""

    reg_value: float
    mc_mean: float
    clean_loss: float
    remainder: float  # mean(noised losses) - R - L
    stderr: float
    draws: int

    @property
    def ratio(self) -> float:
        """|remainder| / R; below 1 means the penalty dominates."""
        return abs(self.remainder) / self.reg_value if self.reg_value > 0 else float("inf")


def estimate_remainder(net: Network, x, y, spec: NoiseSpec, loss_kind: str,
                       draws: int, rs: RandomSource) -> RemainderEstimate:
    """Estimate what the penalty misses: mean over draws of L~ minus R minus L.

    Uses the full-trace cross-entropy penalty (not the diag approximation) so
    the remainder reflects genuinely higher-order terms.
    """
    if draws < 2:
        raise ArgumentError("need at least 2 draws for a standard error")
    x = np.asarray(x, dtype=np.float64)
    losses = mc_noised_losses(net, x, y, spec, loss_kind, draws, rs)
    variant = "full" if loss_kind == "cross_entropy" else "diag"
    reg_value = objective.reg(net, x, spec, loss_kind, variant).total
    clean = objective.batch_loss(net, x, y, loss_kind)
    # subtract per draw before averaging: the per-draw excess is the small
    # quantity of interest and would otherwise drown in rounding
    excess = losses - reg_value - clean
    stderr = float(excess.std(ddof=1) / np.sqrt(draws))
    return RemainderEstimate(reg_value, float(losses.mean()), clean,
                             float(excess.mean()), stderr, draws)


def dominance_scan(dims, dataset, sigmas, inits: int = 25, draws: int = 1000,
                   batch_size: int = 32, activation: str = "sigmoid",
                   loss_kind: str = "mse", mode: str = "additive",
                   seed: int = 0) -> list[dict]:
    """Penalty-vs-remainder table at initialisation.

    One row per (sigma^2, init): fresh fan-in init, one fixed batch per init,
    and an independent Monte-Carlo remainder estimate per row. sigma^2 = 0
    rows are flagged degenerate (penalty zero, ratio undefined).
    """
    from .network import mlp

    rows = []
    root = RandomSource(seed, (301,))
    for init in range(inits):
        net = mlp(dims, activation, root.split(init))
        idx = root.split(1000 + init).permutation(dataset.n)[:batch_size]
        xb, yb = dataset.inputs[idx], dataset.targets[idx]
        for j, s2 in enumerate(sigmas):
            spec = NoiseSpec.uniform(net.depth, float(s2), mode)
            if s2 == 0:
                rows.append({"sigma2": 0.0, "init": init, "R": 0.0,
                             "remainder": 0.0, "stderr": 0.0,
                             "ratio": float("nan"), "degenerate": True})
                continue
            est = estimate_remainder(net, xb, yb, spec, loss_kind, draws,
                                     root.split(2000 + init * 97 + j))
            rows.append({"sigma2": float(s2), "init": init, "R": est.reg_value,
                         "remainder": est.remainder, "stderr": est.stderr,
                         "ratio": est.ratio, "degenerate": False})
    return rows


def hutchinson_trace(grad_fn, theta: np.ndarray, probes: int, rs: RandomSource,
                     fd_step: float | None = None):
    """Trace of the Hessian of a scalar via Rademacher probes.

    grad_fn(theta) returns the gradient vector; Hessian-vector products are
    central finite differences of it with step h = 1e-4 (1 + ||theta||_inf)
    unless overridden.
    """
    if probes < 1:
        raise ArgumentError("need at least one probe")
    h = fd_step if fd_step is not None else 1e-4 * (1.0 + np.abs(theta).max())
    samples = np.empty(probes)
    for i in range(probes):
        v = rs.rademacher(theta.shape)
        hv = (grad_fn(theta + h * v) - grad_fn(theta - h * v)) / (2.0 * h)
        samples[i] = v @ hv
    est = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return est, stderr


def hessian_trace(net: Network, x, y, loss_kind: str, probes: int,
                  rs: RandomSource, fd_step: float | None = None):
    """Hutchinson estimate of the parameter-Hessian trace of the batch loss."""

    def grad_fn(theta):
        return flatten_grads(param_gradient(with_params(net, theta), x, y, loss_kind))

    return hutchinson_trace(grad_fn, flatten_params(net), probes, rs, fd_step)


def fd_hessian_trace(net: Network, x, y, loss_kind: str, h: float | None = None) -> float:
    """Brute-force finite-difference Hessian trace; oracle for small nets."""
    theta = flatten_params(net)
    h = h if h is not None else 1e-4 * (1.0 + np.abs(theta).max())
    total = 0.0
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        gp = flatten_grads(param_gradient(with_params(net, theta + e), x, y, loss_kind))
        gm = flatten_grads(param_gradient(with_params(net, theta - e), x, y, loss_kind))
        total += (gp[i] - gm[i]) / (2.0 * h)
    return float(total)


@dataclass
class SpectrumSeries:
    """DFT amplitude spectra of the learned 1-D function over checkpoints."""

    grid_size: int
    steps: list[int]
    amplitudes: np.ndarray  # (n_checkpoints, grid_size // 2 + 1), >= 0

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.grid_size // 2 + 1)

    def clipped(self, lo=0.0, hi=1.0) -> np.ndarray:
        return np.clip(self.amplitudes, lo, hi)

    def band_sum(self, lo_bin: int) -> np.ndarray:
        """Summed amplitude over bins >= lo_bin, per checkpoint."""
        return self.amplitudes[:, lo_bin:].sum(axis=1)


def _grid_eval(fn_or_net, z: np.ndarray) -> np.ndarray:
    if isinstance(fn_or_net, Network):
        net = fn_or_net
        if net.dims[0] != 1 or net.dims[-1] != 1:
            raise UnsupportedError("spectrum requires a 1-D in, 1-D out network")
        return forward_batch(net, z[:, None]).output[:, 0]
    return np.asarray(fn_or_net(z), dtype=np.float64).reshape(z.shape)


def amplitude_spectrum(values: np.ndarray) -> np.ndarray:
    """Amplitude per frequency bin: |c_0|/N for the mean, 2|c_k|/N above."""
    n = values.shape[0]
    c = np.abs(np.fft.rfft(values))
    amps = 2.0 * c / n
    amps[0] = c[0] / n
    return amps


def spectrum(checkpoints, z_min=0.0, z_max=1.0, n: int = 1024,
             steps=None) -> SpectrumSeries:
    """Evaluate each checkpoint (network or callable) on a uniform grid and DFT it."""
    if n < 2 or (n & (n - 1)) != 0:
        raise ArgumentError("grid size must be a power of two")
    z = z_min + (z_max - z_min) * np.arange(n) / n
    checkpoints = list(checkpoints)
    amps = np.stack([amplitude_spectrum(_grid_eval(c, z)) for c in checkpoints])
    steps = list(steps) if steps is not None else list(range(len(checkpoints)))
    return SpectrumSeries(n, steps, amps)


def parseval_check(freqs, amps=None, phases=None, n: int = 1024,
                   use_fd: bool = False):
    """Derivative energy vs frequency-weighted spectral energy on [0, 1).

    lhs: grid mean of f'(z)^2 (analytic derivative, or a periodic central
    difference when use_fd). rhs: sum over DFT bins of (2 pi k)^2 times the
    squared coefficient magnitude, with one-sided bins double-counted.
    Returns (lhs, rhs, relative gap).
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    amps = np.ones_like(freqs) if amps is None else np.atleast_1d(
        np.asarray(amps, dtype=np.float64))
    phases = np.zeros_like(freqs) if phases is None else np.atleast_1d(
        np.asarray(phases, dtype=np.float64))
    z = np.arange(n) / n
    args = 2.0 * np.pi * np.outer(z, freqs) + phases
    f = (np.sin(args) * amps).sum(axis=1)
    if use_fd:
        df = (np.roll(f, -1) - np.roll(f, 1)) * (n / 2.0)
    else:
        df = (np.cos(args) * (2.0 * np.pi * freqs * amps)).sum(axis=1)
    lhs = float(np.mean(df * df))
    c = np.abs(np.fft.rfft(f)) / n
    k = np.arange(c.shape[0], dtype=np.float64)
    weights = np.full(c.shape[0], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    rhs = float(np.sum(weights * (2.0 * np.pi * k) ** 2 * c * c))
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, gap


def layer_stats(net: Network, x, convention: str = "row") -> list[dict]:
    """Masked-weight norms and traces of square relu layers.

    The mask is computed per batch element and the squared norms averaged
    over the batch. `convention` picks which slice an inactive unit zeroes:
    "row" follows the layer-map derivative diag(active) W_k; "col" zeroes
    columns by the activity of the layer's *input* units (all-active when the
    input is not itself a relu activation).
    """
    if convention not in ("row", "col"):
        raise ArgumentError("convention must be 'row' or 'col'")
    trace = forward_batch(net, x)
    rows = []
    for i, layer in enumerate(net.layers):
        if layer.activation != "relu" or layer.w.shape[0] != layer.w.shape[1]:
            continue
        if convention == "row":
            active = (trace.zs[i] > 0).astype(np.float64)  # (B, d_out)
            slice_sq = np.sum(layer.w * layer.w, axis=1)  # row norms
        else:
            if i > 0 and net.layers[i - 1].activation == "relu":
                active = (trace.zs[i - 1] > 0).astype(np.float64)  # (B, d_in)
            else:
                active = np.ones_like(trace.hs[i])
            slice_sq = np.sum(layer.w * layer.w, axis=0)  # column norms
        masked_fro_sq = float(np.mean(active @ slice_sq))
        rows.append({"layer": i, "masked_fro_sq": masked_fro_sq,
                     "fro_sq": float(np.sum(layer.w * layer.w)),
                     "trace_w": float(np.trace(layer.w)),
                     "active_fraction": float(active.mean())})
    if not rows:
        warnings.warn("network has no square relu layers; layer_stats is empty")
    return rows


@dataclass
class MarginReport:
    """Per test point: top two classes, logit gap, and the margin lower bound."""

    predicted: np.ndarray  # (N,)
    runner_up: np.ndarray  # (N,)
    gap: np.ndarray  # (N,) top-logit minus runner-up logit, >= 0
    j0_fro: np.ndarray  # (N,) Frobenius norm of the input Jacobian
    bound: np.ndarray  # (N,) gap / (sqrt(2) ||J_0||_F)


def margin_bounds(net: Network, x) -> MarginReport:
    """First-order lower bound on the perturbation needed to flip each prediction."""
    x = np.asarray(x, dtype=np.float64)
    if net.dims[-1] < 2:
        raise UnsupportedError("margins need at least two output classes")
    trace = forward_batch(net, x)
    logits = trace.output
    order = np.argsort(logits, axis=1)
    pred, runner = order[:, -1], order[:, -2]
    rows = np.arange(x.shape[0])
    gap = logits[rows, pred] - logits[rows, runner]
    j0 = batch_jacobians(net, trace)[0]  # (B, d_L, d_0)
    j0_fro = np.sqrt(np.einsum("bij,bij->b", j0, j0))
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(j0_fro > 0, gap / (np.sqrt(2.0) * j0_fro), 0.0)
    return MarginReport(pred, runner, gap, j0_fro, bound)


def linear_flip_distance(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    """Exact distance from x to the nearest decision boundary of logits Wx + b."""
    logits = w @ x + b
    a = int(np.argmax(logits))
    best = np.inf
    for c in range(w.shape[0]):
        if c == a:
            continue
        dw = w[a] - w[c]
        nrm = np.linalg.norm(dw)
        if nrm == 0:
            continue
        best = min(best, (logits[a] - logits[c]) / nrm)
    return float(best)


def flip_distance(net: Network, x: np.ndarray, n_directions: int, rs: RandomSource,
                  r_max: float = 100.0, tol: float = 1e-6) -> float:
    """Smallest perturbation along random directions that changes the prediction.

    Exponential search out to r_max then bisection per direction; an upper
    bound on the true minimal flipping perturbation.
    """
    x = np.asarray(x, dtype=np.float64)
    base = int(np.argmax(forward_batch(net, x[None, :]).output[0]))
    best = np.inf
    for _ in range(n_directions):
        d = rs.normal(x.shape, 1.0)
        d /= np.linalg.norm(d)
        lo, hi = 0.0, None
        r = tol * 16
        while r <= r_max:
            cls = int(np.argmax(forward_batch(net, (x + r * d)[None, :]).output[0]))
            if cls != base:
                hi = r
                break
            lo = r
            r *= 2.0
        if hi is None:
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            cls = int(np.argmax(forward_batch(net, (x + mid * d)[None, :]).output[0]))
            if cls != base:
                hi = mid
            else:
                lo = mid
        best = min(best, hi)
    return float(best)


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks on ties."""

    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size)
        r[order] = np.arange(1, v.size + 1, dtype=np.float64)
        for val in np.unique(v):
            m = v == val
            if m.sum() > 1:
                r[m] = r[m].mean()
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    return float(np.sum(ra * rb) / denom) if denom > 0 else 0.0


def sensitivity_sweep(net: Network, x, y, alphas, draws: int,
                      rs: RandomSource) -> list[float]:
    """Mean accuracy under input noise x + N(0, alpha^2 I), per alpha."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(int)
    accs = []
    for i, alpha in enumerate(alphas):
        if alpha == 0:
            out = forward_batch(net, x).output
            accs.append(float(np.mean(out.argmax(axis=1) == y)))
            continue
        sub = rs.split(i)
        acc = 0.0
        for d in range(draws):
            noisy = x + sub.split(d).normal(x.shape, float(alpha))
            out = forward_batch(net, noisy).output
            acc += float(np.mean(out.argmax(axis=1) == y))
        accs.append(acc / draws)
    return accs
