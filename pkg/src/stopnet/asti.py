"""Adaptive-depth inference with the one-step-lookahead stopping rule.

For ``l = 0 .. L-2`` the loop computes ``h_{l+1}`` and stops at depth
``l + 1`` as soon as ``g(h_{l+1}) - g(h_l) <= c``, predicting from
``h_{l+1}``; otherwise it exits at depth ``L``. The decision to stop at
``l + 1`` uses only ``h_0 .. h_{l+1}``.

Sweeps evaluate many costs on one set of precomputed trajectories. That is
equivalent to running the loop per sample and per cost because the loop's
decisions only read utilities it has already computed; the tests check the
equivalence against :func:`asti_infer` directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .dynamics import embed, forward_step, rollout_inputs
from .errors import UsageError
from .reward import UtilitySpec, check_cost, log_softmax, rewards_from_utilities, softmax, utility
from .snell import snell_batch


@dataclass
class AstiResult:
    prediction: int
    stop_depth: int
    utilities: list
    layers_computed: int


@dataclass
class SweepRow:
    method: str
    param: float  # cost c, entropy threshold, or exit layer
    mean_depth: float
    mean_macs: float
    accuracy: float
    n: int

    def to_dict(self):
        return asdict(self)


def _require_confidence(spec: UtilitySpec):
    if spec.kind != "confidence":
        raise UsageError("adaptive inference needs the label-free confidence utility")


def layer_macs(net):
    """Multiply-adds of one trunk block, one head evaluation, and the stem."""
    return 2 * net.width * net.d_hidden, net.n_classes * net.width, net.d_in * net.width


def asti_macs(net, depth):
    trunk, head, stem = layer_macs(net)
    return stem + depth * trunk + (depth + 1) * head


def asti_infer(net, spec: UtilitySpec, x, c) -> AstiResult:
    """Run the stopping loop on one input."""
    check_cost(c)
    _require_confidence(spec)
    L = net.depth
    h = embed(x, net)
    u_prev = utility(spec, h)
    visited = [u_prev]
    computed = 0
    for l in range(L - 1):
        h, _ = forward_step(net, l, h)
        computed += 1
        u_next = utility(spec, h)
        visited.append(u_next)
        if u_next - u_prev <= c:
            return AstiResult(int(np.argmax(net.head_logits(h))), l + 1, visited, computed)
        u_prev = u_next
    h, _ = forward_step(net, L - 1, h)
    computed += 1
    visited.append(utility(spec, h))
    return AstiResult(int(np.argmax(net.head_logits(h))), L, visited, computed)


@dataclass
class Trace:
    """Full-depth rollout of a dataset: per-layer utilities, predictions, entropies."""

    utilities: np.ndarray  # (n, L+1) confidence
    predictions: np.ndarray  # (n, L+1)
    entropies: np.ndarray  # (n, L+1)
    labels: np.ndarray | None

    @property
    def depth(self):
        return self.utilities.shape[1] - 1


def trace(net, X, y=None, threads=None) -> Trace:
    tb = rollout_inputs(net, X, y, threads=threads)
    logits = net.head_logits(tb.states)
    p = softmax(logits)
    ent = -(p * log_softmax(logits)).sum(axis=-1)
    labels = None if y is None else np.asarray(y, dtype=np.int64)
    return Trace(p.max(axis=-1), np.argmax(logits, axis=-1), ent, labels)


def _accuracy(tr: Trace, depths):
    if tr.labels is None:
        return float("nan")
    return float(np.mean(tr.predictions[np.arange(len(depths)), depths] == tr.labels))


def asti_depths(tr: Trace, c):
    check_cost(c)
    return kernels.first_gain_stop(tr.utilities, float(c))


def sweep(net, X, y, c_values, threads=None, tr: Trace | None = None):
    """One :class:`SweepRow` per cost."""
    c_values = list(c_values)
    if not c_values:
        raise UsageError("c_values must be nonempty")
    for c in c_values:
        check_cost(c)
    tr = trace(net, X, y, threads) if tr is None else tr
    rows = []
    for c in c_values:
        tau = asti_depths(tr, c)
        rows.append(SweepRow("asti", float(c), float(tau.mean()),
                             float(np.mean(asti_macs(net, tau))), _accuracy(tr, tau), len(tau)))
    return rows


def static_exit_baseline(net, X, y, exit_layer, threads=None, tr: Trace | None = None) -> SweepRow:
    if not 1 <= exit_layer <= net.depth:
        raise UsageError(f"exit layer must lie in [1, {net.depth}], got {exit_layer}")
    tr = trace(net, X, y, threads) if tr is None else tr
    n = tr.utilities.shape[0]
    trunk, head, stem = layer_macs(net)
    depths = np.full(n, exit_layer)
    return SweepRow("static", float(exit_layer), float(exit_layer),
                    float(stem + exit_layer * trunk + head), _accuracy(tr, depths), n)


def entropy_depths(tr: Trace, threshold):
    if not threshold > 0:
        raise UsageError("entropy threshold must be positive")
    below = tr.entropies[:, 1:] < threshold
    return np.where(below.any(axis=1), np.argmax(below, axis=1) + 1, tr.depth)


def entropy_exit_baseline(net, X, y, threshold, threads=None, tr: Trace | None = None) -> SweepRow:
    """Exit at the first layer ``l >= 1`` whose predictive entropy is below ``threshold``."""
    tr = trace(net, X, y, threads) if tr is None else tr
    tau = entropy_depths(tr, threshold)
    trunk, head, stem = layer_macs(net)
    macs = stem + tau * (trunk + head)
    return SweepRow("entropy", float(threshold), float(tau.mean()), float(macs.mean()),
                    _accuracy(tr, tau), len(tau))


def exit_histogram(net, X, c, threads=None, tr: Trace | None = None):
    """Counts of stopping depth ``tau = 1..L`` (index ``tau - 1``)."""
    tr = trace(net, X, None, threads) if tr is None else tr
    tau = asti_depths(tr, c)
    return np.bincount(tau - 1, minlength=tr.depth)


def snell_gap(tr: Trace, c):
    """Compare the one-step rule with the exact optimal stopping index.

    Both use the confidence utility and ``Y_l = g(h_l) - c*l``. Returns
    the mean depths, the fraction of samples where the indices agree, and
    the mean reward lost by the one-step rule.
    """
    tau_a = asti_depths(tr, c)
    y = rewards_from_utilities(tr.utilities, c)
    env, tau_s = snell_batch(y)
    idx = np.arange(len(tau_a))
    return {
        "c": float(c),
        "asti_mean_depth": float(tau_a.mean()),
        "snell_mean_depth": float(tau_s.mean()),
        "agreement": float(np.mean(tau_a == tau_s)),
        "mean_reward_gap": float(np.mean(env[:, 0] - y[idx, tau_a])),
    }


def dominated_by(point: SweepRow, rows):
    """Rows at equal or lower depth that are at least as accurate and strictly better somewhere."""
    return [r for r in rows
            if r.mean_depth <= point.mean_depth and r.accuracy >= point.accuracy
            and (r.mean_depth < point.mean_depth or r.accuracy > point.accuracy)]
