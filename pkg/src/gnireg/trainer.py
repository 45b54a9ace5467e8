"""Plain SGD training in three modes.

baseline  - minimise the clean batch loss.
gni       - minimise the loss of a noised forward pass, fresh draws per step.
explicit  - minimise clean loss + penalty, differentiating the penalty
            through the Jacobian recursion on the tape (or by central finite
            differences of the penalty when cfg.reg_grad == "fd", for
            cross-validation on tiny networks).

Given (config, seed, dataset) the whole trajectory is deterministic; with a
silent noise spec the gni trajectory is bit-identical to baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import objective
from .data import Dataset, batches
from .errors import ArgumentError, DivergenceError
from .linalg import RandomSource
from .network import (Network, _loss_head, backprop, flatten_grads,
                      flatten_params, forward_batch, forward_graph,
                      param_gradient, with_params)
from .noise import NoiseSpec, noised_forward_batch

MODES = ("baseline", "gni", "explicit")


@dataclass
class TrainConfig:
    mode: str = "baseline"
    loss_kind: str = "mse"
    noise: NoiseSpec | None = None
    learning_rate: float = 0.001
    batch_size: int = 512
    steps: int = 1000
    seed: int = 0
    eval_every: int = 100
    reg_variant: str = "diag"  # cross-entropy penalty variant in explicit mode
    reg_grad: str = "autodiff"  # autodiff | fd
    metric_batch: int = 1024  # cap on rows used for logged loss/penalty
    log_reg: bool = True  # record the penalty breakdown at each tick
    snapshot_every: int = 0  # 0 disables snapshots

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArgumentError(f"unknown mode '{self.mode}'")
        if self.learning_rate <= 0:
            raise ArgumentError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ArgumentError("batch size must be >= 1")
        if self.mode in ("gni", "explicit") and self.noise is None:
            raise ArgumentError(f"mode '{self.mode}' requires a noise spec")
        if self.reg_grad not in ("autodiff", "fd"):
            raise ArgumentError("reg_grad must be 'autodiff' or 'fd'")


@dataclass
class MetricLog:
    """One row per cadence tick; fixed column order for CSV export."""

    n_layers: int
    hook_names: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    def record(self, step, train_loss, test_loss, reg_total, reg_layers, hooks=None):
        row = {"step": int(step), "train_loss": float(train_loss),
               "test_loss": float(test_loss), "R_total": float(reg_total)}
        for k in range(self.n_layers):
            row[f"r_{k}"] = float(reg_layers[k]) if reg_layers is not None else 0.0
        for name in self.hook_names:
            row[name] = float(hooks[name]) if hooks else float("nan")
        self.rows.append(row)

    @property
    def columns(self) -> list[str]:
        return (["step", "train_loss", "test_loss", "R_total"]
                + [f"r_{k}" for k in range(self.n_layers)] + self.hook_names)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def evaluate(net: Network, dataset: Dataset, loss_kind: str | None = None):
    """Noise-free loss over a dataset; accuracy too for classification."""
    loss_kind = loss_kind or dataset.loss_kind
    out = forward_batch(net, dataset.inputs).output
    loss = float(objective.per_example_loss(out, dataset.targets, loss_kind).mean())
    if loss_kind == "cross_entropy":
        acc = float(np.mean(out.argmax(axis=1) == dataset.targets))
        return loss, acc
    return loss, None


def _fd_reg_grad(net: Network, x, spec, loss_kind, variant, h=1e-5) -> np.ndarray:
    theta = flatten_params(net)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = h
        up = objective.reg(with_params(net, theta + bump), x, spec, loss_kind, variant).total
        dn = objective.reg(with_params(net, theta - bump), x, spec, loss_kind, variant).total
        grad[i] = (up - dn) / (2 * h)
    return grad


def _explicit_step(net: Network, xb, yb, cfg: TrainConfig):
    """Loss value and gradient list for clean loss + penalty."""
    if cfg.reg_grad == "fd":
        loss, g_out = objective.per_example_loss(
            forward_batch(net, xb).output, yb, cfg.loss_kind).mean(), None
        grads = param_gradient(net, xb, yb, cfg.loss_kind)
        reg_val = objective.reg(net, xb, cfg.noise, cfg.loss_kind, cfg.reg_variant).total
        flat = flatten_grads(grads) + _fd_reg_grad(net, xb, cfg.noise, cfg.loss_kind,
                                                   cfg.reg_variant)
        shaped = _unflatten_like(net, flat)
        return float(loss) + reg_val, shaped
    params, zs, hs = forward_graph(net, xb)
    loss_t = objective.loss_graph(hs[-1], yb, cfg.loss_kind)
    reg_t = objective.reg_graph(net, params, zs, hs, cfg.noise, cfg.loss_kind,
                                cfg.reg_variant)
    total = loss_t + reg_t
    ad.backward(total)
    grads = [(tw.grad, tb.grad) for tw, tb in params]
    return float(total.value), grads


def _unflatten_like(net: Network, flat: np.ndarray):
    grads, off = [], 0
    for l in net.layers:
        w = flat[off:off + l.w.size].reshape(l.w.shape)
        off += l.w.size
        b = flat[off:off + l.b.size]
        off += l.b.size
        grads.append((w, b))
    return grads


def train(net: Network, dataset: Dataset, cfg: TrainConfig,
          test_dataset: Dataset | None = None, hooks: dict | None = None,
          snapshot_hook=None):
    """Run cfg.steps SGD updates; returns (trained network, metric log).

    `hooks` maps column name -> callable(net) evaluated at each cadence tick.
    `snapshot_hook(step, net)` fires every cfg.snapshot_every steps when set.
    """
    net = net.copy()
    noise_rs = RandomSource(cfg.seed, (201,))
    log = MetricLog(net.depth, sorted(hooks) if hooks else [])
    spec = cfg.noise
    metric_x = dataset.inputs[:cfg.metric_batch]
    metric_y = dataset.targets[:cfg.metric_batch]

    def tick(step):
        train_loss = float(objective.per_example_loss(
            forward_batch(net, metric_x).output, metric_y, cfg.loss_kind).mean())
        test_loss = (evaluate(net, test_dataset, cfg.loss_kind)[0]
                     if test_dataset is not None else float("nan"))
        if spec is not None and cfg.log_reg:
            bd = objective.reg(net, metric_x, spec, cfg.loss_kind, cfg.reg_variant)
            reg_total, reg_layers = bd.total, bd.per_layer
        else:
            reg_total, reg_layers = 0.0, [0.0] * net.depth
        hook_vals = {name: fn(net) for name, fn in (hooks or {}).items()}
        log.record(step, train_loss, test_loss, reg_total, reg_layers, hook_vals)

    step = 0
    epoch = 0
    done = cfg.steps == 0
    if snapshot_hook is not None and cfg.snapshot_every > 0:
        snapshot_hook(0, net.copy())
    while not done:
        for idx in batches(dataset, cfg.batch_size, cfg.seed, epoch):
            if step % cfg.eval_every == 0:
                tick(step)
            xb, yb = dataset.inputs[idx], dataset.targets[idx]
            if cfg.mode == "baseline" or (cfg.mode == "gni" and spec.is_silent):
                trace = forward_batch(net, xb)
                loss, g_out = _loss_head(trace.output, yb, cfg.loss_kind)
                grads = backprop(net, trace, g_out)
            elif cfg.mode == "gni":
                nbt = noised_forward_batch(net, xb, spec, noise_rs.split(step))
                loss, g_out = _loss_head(nbt.output, yb, cfg.loss_kind)
                grads = backprop(net, nbt.as_batch_trace(), g_out, nbt.post_scales)
            else:
                loss, grads = _explicit_step(net, xb, yb, cfg)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            for layer, (dw, db) in zip(net.layers, grads):
                layer.w -= cfg.learning_rate * dw
                layer.b -= cfg.learning_rate * db
            step += 1
            if snapshot_hook is not None and cfg.snapshot_every > 0 \
                    and step % cfg.snapshot_every == 0:
                snapshot_hook(step, net.copy())
            if step >= cfg.steps:
                done = True
                break
        epoch += 1
    tick(step)
    return net, log
