"""Depth-regularised training with hand-written reverse-mode gradients.

Objective for a minibatch (means over samples)::

    CE(head(h_L), y) + beta * sum_{l in exits} CE(head(h_l), y)
                     + lam * sum_{l=0}^{L-1} w_l ||f_l(h_l)||^2

The head is shared by every exit. Gradients of the early-exit terms and
of the depth penalty flow into the trunk (no stop-gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import Block, ResidualNet, as_batch, clip_spectral, embed
from .errors import ConfigError, DivergenceError, NumericError
from .reward import log_softmax, softmax
from .rng import stream

SCHEDULES = ("quadratic", "poly-alpha")


@dataclass
class ModelConfig:
    depth: int = 8
    width: int = 8
    n_classes: int = 2
    d_in: int = 2
    d_hidden: Optional[int] = None
    spectral_clip: Optional[float] = None
    outer_scale: float = 0.1

    def build(self, seed) -> ResidualNet:
        return ResidualNet.init(self.depth, self.width, self.n_classes, self.d_in, seed,
                                d_hidden=self.d_hidden, outer_scale=self.outer_scale)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    seed: Optional[int] = None
    beta: float = 0.5
    lam: float = 1.0
    schedule: str = "quadratic"
    alpha: float = 1.0
    exit_layers: Optional[Sequence[int]] = None  # default: every layer 1..L-1
    train_stem: bool = False  # the stem is a fixed projection unless enabled

    def validate(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        if self.schedule == "poly-alpha" and not self.alpha > 0:
            raise ConfigError("poly-alpha schedule needs alpha > 0")
        if self.beta < 0 or self.lam < 0:
            raise ConfigError("beta and lambda must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("invalid optimizer settings")
        if self.seed is None:
            raise ConfigError("training seed is required")

    def exits(self, depth):
        if self.exit_layers is None:
            return list(range(1, depth))
        ex = sorted(set(int(l) for l in self.exit_layers))
        if any(not 1 <= l < depth for l in ex):
            raise ConfigError(f"exit layers must lie in [1, {depth})")
        return ex


def schedule_weights(kind, depth, alpha=1.0):
    """``w_l`` for ``l = 0..L-1``: ``(l/L)^2`` or ``(l+1)^alpha``."""
    l = np.arange(depth, dtype=np.float64)
    if kind == "quadratic":
        return (l / depth) ** 2
    if kind == "poly-alpha":
        if not alpha > 0:
            raise ConfigError("poly-alpha schedule needs alpha > 0")
        return (l + 1.0) ** alpha
    raise ConfigError(f"unknown schedule {kind!r}; choose from {SCHEDULES}")


def depth_penalty(batch, weights) -> float:
    """``sum_l w_l * mean_batch ||f_l(h_l)||^2``."""
    b = as_batch(batch)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (b.depth,):
        raise ConfigError(f"schedule has {w.shape} weights for depth {b.depth}")
    return float(np.dot(w, (b.residual_norms ** 2).mean(axis=0)))


class GradientSet(ResidualNet):
    """Gradient arrays laid out exactly like the network's weights."""


def _forward(net, X):
    h = embed(X, net)
    hs, zs, fs = [h], [], []
    for blk in net.blocks:
        z = np.tanh(h @ blk.w1.T + blk.b1)
        f = z @ blk.w2.T + blk.b2
        h = h + f
        hs.append(h)
        zs.append(z)
        fs.append(f)
    return hs, zs, fs


def _ce(net, h, y):
    lp = log_softmax(net.head_logits(h))
    return float(-lp[np.arange(len(y)), y].mean())


def _check_labels(net, y):
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or np.any(y < 0) or np.any(y >= net.n_classes):
        raise ConfigError("labels must be integers in [0, n_classes)")
    return y


def total_loss(net, X, y, config: TrainConfig, detach_task=False):
    """Objective value and its components.

    ``detach_task=True`` drops the final-layer term (used to isolate the
    regulariser in tests).
    """
    y = _check_labels(net, y)
    hs, _, fs = _forward(net, X)
    L = net.depth
    task = 0.0 if detach_task else _ce(net, hs[L], y)
    inter = sum(_ce(net, hs[l], y) for l in config.exits(L)) if config.beta else 0.0
    w = schedule_weights(config.schedule, L, config.alpha)
    sq = np.stack([np.einsum("ij,ij->i", f, f) for f in fs], axis=1)
    penalty = float(np.dot(w, sq.mean(axis=0)))
    total = task + config.beta * inter + config.lam * penalty
    return total, {
        "task": task,
        "intermediate": inter,
        "depth_penalty": penalty,
        "mean_residual_norm": np.sqrt(sq).mean(axis=0),
        "mean_sq_residual_norm": sq.mean(axis=0),
    }


def backward(net, X, y, config: TrainConfig, detach_task=False) -> GradientSet:
    """Exact gradient of :func:`total_loss` with respect to every weight."""
    y = _check_labels(net, y)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    L = net.depth
    hs, zs, fs = _forward(net, X)
    w = schedule_weights(config.schedule, L, config.alpha)
    onehot = np.zeros((n, net.n_classes))
    onehot[np.arange(n), y] = 1.0

    g_head_w = np.zeros_like(net.head_w)
    g_head_b = np.zeros_like(net.head_b)

    def head_grad(h, scale):
        nonlocal g_head_w, g_head_b
        dlog = scale * (softmax(net.head_logits(h)) - onehot) / n
        g_head_w = g_head_w + dlog.T @ h
        g_head_b = g_head_b + dlog.sum(axis=0)
        return dlog @ net.head_w

    gh = head_grad(hs[L], 1.0) if not detach_task else np.zeros_like(hs[L])
    exits = set(config.exits(L)) if config.beta else set()
    blocks = [None] * L
    for l in range(L - 1, -1, -1):
        blk = net.blocks[l]
        gf = gh + (2.0 * config.lam * w[l] / n) * fs[l]
        ga = (gf @ blk.w2) * (1.0 - zs[l] ** 2)
        blocks[l] = Block(ga.T @ hs[l], ga.sum(axis=0), gf.T @ zs[l], gf.sum(axis=0))
        gh = gh + ga @ blk.w1
        if l in exits:
            gh = gh + head_grad(hs[l], config.beta)
    g_stem_w = gh.T @ X
    g_stem_b = gh.sum(axis=0)

    groups = [("stem", [g_stem_w, g_stem_b]), ("head", [g_head_w, g_head_b])]
    groups += [(f"layers[{l}]", b.arrays()) for l, b in enumerate(blocks)]
    for name, arrs in groups:
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise NumericError(f"non-finite gradient in {name}", group=name)
    return GradientSet(g_stem_w, g_stem_b, blocks, g_head_w, g_head_b)


def accuracy(net, X, y, layer=None) -> float:
    hs, _, _ = _forward(net, X)
    h = hs[net.depth if layer is None else layer]
    return float(np.mean(np.argmax(net.head_logits(h), axis=1) == np.asarray(y)))


@dataclass
class TrainLog:
    total: list = field(default_factory=list)
    task: list = field(default_factory=list)
    intermediate: list = field(default_factory=list)
    depth_penalty: list = field(default_factory=list)
    mean_residual_norm: list = field(default_factory=list)
    mean_sq_residual_norm: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)

    def record(self, comps, total, val_acc):
        self.total.append(float(total))
        self.task.append(float(comps["task"]))
        self.intermediate.append(float(comps["intermediate"]))
        self.depth_penalty.append(float(comps["depth_penalty"]))
        self.mean_residual_norm.append(comps["mean_residual_norm"].tolist())
        self.mean_sq_residual_norm.append(comps["mean_sq_residual_norm"].tolist())
        self.val_accuracy.append(val_acc)

    @property
    def epochs(self):
        return len(self.total)


def _params(net, with_stem=True):
    return [a for name, a in net.named_arrays() if with_stem or not name.startswith("stem")]


def train(config: TrainConfig, model: ModelConfig, X, y, X_val=None, y_val=None, net=None):
    """SGD with momentum; returns ``(net, log)``.

    The log has one row per epoch (row 0 is the initial network),
    evaluated on the full training set. Raises ``DivergenceError`` carrying
    the last finite weights if the loss stops being finite.
    """
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if net is None:
        net = model.build(config.seed)
    net = net.copy()
    if X_val is None:
        X_val, y_val = X, y
    rng = stream(config.seed, "train/shuffle")
    velocity = [np.zeros_like(p) for p in _params(net, config.train_stem)]
    log = TrainLog()

    def evaluate():
        total, comps = total_loss(net, X, y, config)
        if not math.isfinite(total):
            return total, comps, float("nan")
        return total, comps, accuracy(net, X_val, y_val)

    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(config, model, net, X, y, rng, velocity, log, evaluate)
    return net, log


def _run_epochs(config, model, net, X, y, rng, velocity, log, evaluate):
    # non-finite values are detected explicitly, so numpy's warnings are muted
    total, comps, acc = evaluate()
    log.record(comps, total, acc)
    n = X.shape[0]
    for epoch in range(config.epochs):
        last_good = net.copy()
        order = rng.permutation(n)
        try:
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                grads = backward(net, X[idx], y[idx], config)
                for p, v, g in zip(_params(net, config.train_stem), velocity,
                                   _params(grads, config.train_stem)):
                    v *= config.momentum
                    v -= config.lr * g
                    p += v
                if model.spectral_clip is not None:
                    clip_spectral(net, model.spectral_clip)
        except (NumericError, FloatingPointError) as exc:
            raise DivergenceError(f"training diverged in epoch {epoch}: {exc}", last_good, epoch) from exc
        total, comps, acc = evaluate()
        if not math.isfinite(total):
            raise DivergenceError(f"loss became non-finite in epoch {epoch}", last_good, epoch)
        log.record(comps, total, acc)
