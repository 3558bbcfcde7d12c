"""Snell envelope by backward induction and the optimal stopping index.

Transitions are deterministic given the input, so the conditional
expectation in the backward recursion collapses and the envelope of one
trajectory is the running maximum of its rewards taken from the right:
``U_L = Y_L`` and ``U_l = max(Y_l, U_{l+1})``. The optimal rule stops at
the first ``l`` with ``U_l == Y_l`` (ties stop early).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, parallel
from .dynamics import as_batch
from .errors import UsageError
from .reward import RewardPath, check_cost, rewards_from_utilities, trajectory_utilities

DEFAULT_TIE_TOL = 1e-9


@dataclass
class SnellPath:
    envelope: np.ndarray
    stop_index: int
    value: float


@dataclass
class ValueEstimate:
    mean_value: float
    mean_stop: float
    se_value: float
    se_stop: float
    n: int
    mean_g_at_stop: float


def _rewards_of(path):
    y = path.rewards if isinstance(path, RewardPath) else path
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise UsageError("reward path must be a nonempty 1-D sequence")
    return y


def snell_backward(path, tie_tol: float = DEFAULT_TIE_TOL) -> SnellPath:
    """Envelope, stopping index and value for one reward path."""
    if tie_tol < 0:
        raise UsageError("tie_tol must be >= 0")
    y = _rewards_of(path)
    env, stop = kernels.snell_envelope(y[None, :], float(tie_tol))
    return SnellPath(env[0], int(stop[0]), float(env[0, 0]))


def snell_batch(rewards, tie_tol: float = DEFAULT_TIE_TOL):
    """Vectorised envelope for rows of rewards; returns ``(U, tau)``."""
    if tie_tol < 0:
        raise UsageError("tie_tol must be >= 0")
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    if rewards.ndim != 2 or rewards.shape[0] == 0 or rewards.shape[1] == 0:
        raise UsageError("rewards must be a nonempty (n, L+1) array")
    return kernels.snell_envelope(rewards, float(tie_tol))


def brute_force_optimum(path):
    """Exhaustive scan: ``(max_l Y_l, smallest argmax)``.

    With deterministic trajectories every stopping rule is an index choice,
    so this is the exact optimum. Kept as a plain Python loop on purpose.
    """
    y = _rewards_of(path)
    best, arg = y[0], 0
    for l in range(1, len(y)):
        if y[l] > best:
            best, arg = y[l], l
    return float(best), arg


def truncation_depth(g_max, g_min, c, l0=0):
    """Depth beyond which continuing cannot pay: ``ceil((g_max - g_min)/c) + L_0 + 1``."""
    check_cost(c)
    return int(math.ceil((g_max - g_min) / c)) + int(l0) + 1


def _se(x):
    n = len(x)
    return float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def solve_batch(batch, spec, c, tie_tol=DEFAULT_TIE_TOL, threads=None):
    """Per-trajectory utilities, rewards, envelopes and stopping indices."""
    check_cost(c)
    batch = as_batch(batch)
    labels = batch.labels if spec.needs_label else None
    if spec.needs_label and labels is None:
        raise UsageError("neg-cross-entropy utility requires labelled trajectories")

    def work(lo, hi):
        u = trajectory_utilities(spec, batch.states[lo:hi], None if labels is None else labels[lo:hi])
        y = rewards_from_utilities(u, c)
        env, tau = snell_batch(y, tie_tol)
        return u, y, env, tau

    parts = parallel.chunked_map(work, len(batch), threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def estimate_value(batch, spec, c, tie_tol=DEFAULT_TIE_TOL, threads=None) -> ValueEstimate:
    """Monte Carlo value ``E[U_0]`` and mean optimal depth ``E[tau*]``."""
    if isinstance(batch, (list, tuple)) and not batch:
        raise UsageError("trajectory batch is empty")
    u, _, env, tau = solve_batch(batch, spec, c, tie_tol, threads)
    u0 = env[:, 0]
    g_tau = u[np.arange(len(tau)), tau]
    return ValueEstimate(
        mean_value=float(np.mean(u0)),
        mean_stop=float(np.mean(tau)),
        se_value=_se(u0),
        se_stop=_se(tau.astype(np.float64)),
        n=len(tau),
        mean_g_at_stop=float(np.mean(g_tau)),
    )
