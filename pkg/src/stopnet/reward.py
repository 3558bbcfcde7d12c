"""Utility functions on hidden states and the reward process ``Y_l = g(h_l) - c*l``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ResidualNet, Trajectory
from .errors import ConfigError, UsageError

UTILITY_KINDS = ("confidence", "neg-cross-entropy")


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass
class UtilitySpec:
    """Which utility to evaluate and through which (shared) linear head.

    ``confidence`` is the top softmax probability, in ``(0, 1]``, and needs
    no label. ``neg-cross-entropy`` is ``-CE(head(h), y)`` clamped below at
    ``ce_clamp`` so it stays in ``[ce_clamp, 0]``.
    """

    kind: str
    head_w: np.ndarray
    head_b: np.ndarray
    ce_clamp: float = -10.0

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ConfigError(f"unknown utility kind {self.kind!r}; choose from {UTILITY_KINDS}")
        if self.ce_clamp > 0 or not math.isfinite(self.ce_clamp):
            raise ConfigError("ce_clamp must be a finite value <= 0")
        self.head_w = np.asarray(self.head_w, dtype=np.float64)
        self.head_b = np.asarray(self.head_b, dtype=np.float64)

    @classmethod
    def for_net(cls, net: ResidualNet, kind="confidence", ce_clamp=-10.0) -> "UtilitySpec":
        return cls(kind, net.head_w, net.head_b, ce_clamp)

    @property
    def needs_label(self) -> bool:
        return self.kind == "neg-cross-entropy"

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def g_max(self) -> float:
        return 1.0 if self.kind == "confidence" else 0.0

    @property
    def g_min(self) -> float:
        # confidence is at least 1/K; the (open) infimum of its range is reported
        return 1.0 / self.n_classes if self.kind == "confidence" else float(self.ce_clamp)

    def lipschitz_upper(self) -> float:
        """Analytic Lipschitz bound of ``g`` in the state 2-norm.

        ``||head_w||_2`` times the Lipschitz constant of the map from logits
        to utility: 1 for the top softmax probability, ``sqrt(2)`` for the
        cross entropy (its gradient ``p - e_y`` has norm at most ``sqrt(2)``).
        """
        op = float(np.linalg.norm(self.head_w, 2))
        return op * (1.0 if self.kind == "confidence" else math.sqrt(2.0))

    def logits(self, h):
        return np.asarray(h, dtype=np.float64) @ self.head_w.T + self.head_b


def utility_from_logits(spec: UtilitySpec, logits, labels=None):
    if spec.kind == "confidence":
        return softmax(logits).max(axis=-1)
    if labels is None:
        raise UsageError("neg-cross-entropy utility requires a label")
    lp = log_softmax(logits)
    labels = np.asarray(labels, dtype=np.int64)
    picked = np.take_along_axis(lp, np.broadcast_to(labels, lp.shape[:-1])[..., None], axis=-1)[..., 0]
    return np.maximum(picked, spec.ce_clamp)


def utility(spec: UtilitySpec, h, label: Optional[int] = None):
    """Evaluate ``g`` at a state (scalar result) or at rows of states.

    ``label`` may be an integer or an array broadcastable to the leading
    shape of ``h``.
    """
    if spec.needs_label and label is None:
        raise UsageError("neg-cross-entropy utility requires a label")
    if not spec.needs_label:
        label = None
    out = utility_from_logits(spec, spec.logits(h), label)
    return float(out) if np.ndim(out) == 0 else out


def trajectory_utilities(spec: UtilitySpec, states, labels=None):
    """Utilities for states shaped ``(..., L+1, d)``; labels index the leading axes."""
    if spec.needs_label:
        if labels is None:
            raise UsageError("neg-cross-entropy utility requires labels")
        labels = np.asarray(labels)[..., None]
    return utility_from_logits(spec, spec.logits(states), labels)


@dataclass
class RewardPath:
    rewards: np.ndarray  # Y_0..Y_L
    cost: float
    utilities: np.ndarray  # g(h_0)..g(h_L)

    def __len__(self):
        return len(self.rewards)


def check_cost(c):
    if not (c > 0 and math.isfinite(c)):
        raise ConfigError(f"per-layer cost must be a finite positive number, got {c}")


def rewards_from_utilities(utilities, c):
    """``Y[..., l] = utilities[..., l] - c*l``."""
    utilities = np.asarray(utilities, dtype=np.float64)
    return utilities - c * np.arange(utilities.shape[-1])


def reward_path(traj: Trajectory, spec: UtilitySpec, c: float) -> RewardPath:
    check_cost(c)
    u = trajectory_utilities(spec, traj.states, traj.label)
    return RewardPath(rewards_from_utilities(u, c), float(c), u)
