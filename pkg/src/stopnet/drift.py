"""Empirical checks of the negative-utility-drift condition and the depth bound.

The argument being checked runs in two steps:

* if ``E||f_l(h_l)|| <= delta`` for every ``l >= L_0`` and ``g`` is
  ``K_g``-Lipschitz, then ``E[g(h_{l+1}) - g(h_l)] <= K_g * delta``, which is
  below ``c`` whenever ``c > K_g * delta``;
* comparing the optimal value with the policy "always stop at ``L_0``"
  gives ``E[tau*] <= (g_max - E[g(h_{L_0})]) / c + L_0``.

Every quantity here is a Monte Carlo mean over a trajectory batch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import as_batch
from .errors import UsageError
from .reward import check_cost, trajectory_utilities

SE_SLACK = 3.0
L0_FRACTION = 0.25


@dataclass
class DriftReport:
    mean_residual_norm: list
    mean_sq_residual_norm: list
    mean_drift: list
    drift_se: list
    k_g_hat: float
    k_g_upper: float
    delta: float
    l0: int
    g_max: float
    g_min: float
    c: float
    condition_holds: bool
    mean_g_l0: float
    tau_bound: float
    drift_bound_ok: bool | None = None
    chain_ok: bool = True
    violations: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def residual_norm_profile(batch):
    """Per-layer means of ``||f_l||`` and ``||f_l||^2``."""
    b = as_batch(batch)
    r = b.residual_norms
    return r.mean(axis=0), (r * r).mean(axis=0)


def _labels_for(spec, b):
    if not spec.needs_label:
        return None
    if b.labels is None:
        raise UsageError("neg-cross-entropy utility requires labelled trajectories")
    return b.labels


def _drift_samples(batch, spec):
    b = as_batch(batch)
    u = trajectory_utilities(spec, b.states, _labels_for(spec, b))
    return u, np.diff(u, axis=1)


def utility_drift_profile(batch, spec):
    """Per-layer mean of ``g(h_{l+1}) - g(h_l)`` and its standard error."""
    _, d = _drift_samples(batch, spec)
    n = d.shape[0]
    se = d.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(d.shape[1])
    return d.mean(axis=0), se


def estimate_lipschitz(spec, a, b, labels=None) -> float:
    """Largest ``|g(a_i) - g(b_i)| / ||a_i - b_i||`` over the given pairs.

    A lower bound on the Lipschitz constant of ``g`` over the visited
    region. Pairs with identical members are skipped.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise UsageError("state pair arrays must have equal shapes")
    dist = np.linalg.norm(a - b, axis=-1)
    keep = dist > 0
    if not np.any(keep):
        raise UsageError("need at least two distinct states to estimate a Lipschitz constant")
    if spec.needs_label:
        if labels is None:
            raise UsageError("neg-cross-entropy utility requires labels")
        labels = np.broadcast_to(np.asarray(labels), dist.shape)[keep]
    ga = trajectory_utilities(spec, a[keep][:, None, :], labels)[:, 0]
    gb = trajectory_utilities(spec, b[keep][:, None, :], labels)[:, 0]
    return float(np.max(np.abs(ga - gb) / dist[keep]))


def trajectory_lipschitz(batch, spec) -> float:
    """Lipschitz lower bound from consecutive state pairs ``(h_l, h_{l+1})``."""
    b = as_batch(batch)
    n, L = b.residual_norms.shape
    a = b.states[:, :-1].reshape(n * L, -1)
    nxt = b.states[:, 1:].reshape(n * L, -1)
    labels = None if not spec.needs_label else np.repeat(_labels_for(spec, b), L)
    try:
        return estimate_lipschitz(spec, a, nxt, labels)
    except UsageError:
        return 0.0  # every block is the identity on this batch


def select_l0(mean_norms, fraction=L0_FRACTION) -> int:
    """Smallest layer whose mean residual norm is below ``fraction`` of layer 0's."""
    mean_norms = np.asarray(mean_norms)
    if mean_norms[0] == 0:
        return 0
    below = np.nonzero(mean_norms < fraction * mean_norms[0])[0]
    return int(below[0]) if below.size else len(mean_norms) - 1


def tau_star_bound(g_max, mean_g_l0, c, l0) -> float:
    """``(g_max - E[g(h_{L_0})]) / c + L_0``."""
    if not c > 0:
        raise UsageError(f"cost must be positive, got {c}")
    return (g_max - mean_g_l0) / c + l0


def check_drift_condition(batch, spec, c, l0=None, fraction=L0_FRACTION) -> DriftReport:
    check_cost(c)
    b = as_batch(batch)
    L = b.depth
    mean_norm, mean_sq = residual_norm_profile(b)
    if l0 is None:
        l0 = select_l0(mean_norm, fraction)
    if not 0 <= l0 < L:
        raise UsageError(f"L_0 must lie in [0, {L}), got {l0}")
    u, d = _drift_samples(b, spec)
    n = d.shape[0]
    drift = d.mean(axis=0)
    se = d.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(L)
    k_hat = trajectory_lipschitz(b, spec)
    k_up = spec.lipschitz_upper()
    delta = float(np.max(mean_norm[l0:]))
    holds = bool(c > k_hat * delta)
    mean_g_l0 = float(u[:, l0].mean())
    report = DriftReport(
        mean_residual_norm=mean_norm.tolist(),
        mean_sq_residual_norm=mean_sq.tolist(),
        mean_drift=drift.tolist(),
        drift_se=se.tolist(),
        k_g_hat=k_hat,
        k_g_upper=k_up,
        delta=delta,
        l0=int(l0),
        g_max=spec.g_max,
        g_min=spec.g_min,
        c=float(c),
        condition_holds=holds,
        mean_g_l0=mean_g_l0,
        tau_bound=tau_star_bound(spec.g_max, mean_g_l0, c, l0),
    )
    # aggregate Lipschitz chain: E[dg] <= E|dg| <= K_upper * E||f_l||
    for l in range(L):
        if drift[l] > k_up * mean_norm[l] + 1e-12:
            report.chain_ok = False
            report.violations.append(f"chain: layer {l} drift {drift[l]:.6g} > K_upper*norm {k_up * mean_norm[l]:.6g}")
    if holds:
        report.drift_bound_ok = True
        for l in range(l0, L):
            if not drift[l] < c + SE_SLACK * se[l]:
                report.drift_bound_ok = False
                report.violations.append(f"drift: layer {l} drift {drift[l]:.6g} >= c + 3se")
    return report
