import math

import numpy as np
import pytest

import stopnet.asti as asti_mod
from conftest import dataset, trained
from stopnet.asti import (SweepRow, Trace, asti_depths, asti_infer, asti_macs, dominated_by, entropy_depths,
                          entropy_exit_baseline, exit_histogram, layer_macs, snell_gap, static_exit_baseline,
                          sweep, trace)
from stopnet.dynamics import ResidualNet, rollout_inputs
from stopnet.errors import ConfigError, UsageError
from stopnet.reward import UtilitySpec


def zero_net(depth=5):
    net = ResidualNet.init(depth, 4, 3, 2, seed=0).scaled_blocks(0.0)
    return net


def fake_trace(utilities, entropies=None):
    u = np.atleast_2d(np.asarray(utilities, dtype=np.float64))
    ent = np.zeros_like(u) if entropies is None else np.atleast_2d(entropies)
    return Trace(u, np.zeros(u.shape, dtype=np.int64), ent, None)


def test_zero_net_stops_at_first_check():
    net = zero_net()
    res = asti_infer(net, UtilitySpec.for_net(net), np.array([0.3, -0.4]), 1e-6)
    assert res.stop_depth == 1 and res.layers_computed == 1 and len(res.utilities) == 2


def test_cost_above_utility_range_always_stops_at_one():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    spec = UtilitySpec.for_net(net)
    for x in Xv[:50]:
        assert asti_infer(net, spec, x, 1.01).stop_depth == 1
    assert sweep(net, Xv, yv, [10.0])[0].mean_depth == 1.0


@pytest.mark.parametrize("k", [0, 1, 3, 6])
def test_gain_of_twice_the_cost_until_layer_k(k):
    c, L = 0.01, 8
    u = [0.3 + 2 * c * min(l, k) for l in range(L + 1)]
    # gains are 2c for the first k steps then 0, so the loop fires at l = k
    assert asti_depths(fake_trace(u), c)[0] == min(k + 1, L)


def test_runs_to_full_depth_when_gains_persist():
    u = np.linspace(0.4, 0.9, 7)
    assert asti_depths(fake_trace(u), 0.01)[0] == 6


def test_neg_ce_rejected():
    net = zero_net()
    with pytest.raises(UsageError):
        asti_infer(net, UtilitySpec.for_net(net, "neg-cross-entropy"), np.zeros(2), 0.1)
    with pytest.raises(ConfigError):
        asti_infer(net, UtilitySpec.for_net(net), np.zeros(2), 0.0)


def test_loop_matches_trace_and_never_looks_ahead(monkeypatch):
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    spec = UtilitySpec.for_net(net)
    tr = trace(net, Xv[:300], yv[:300])
    calls = []
    real_step = asti_mod.forward_step

    def counting_step(net_, l, h):
        calls.append(l)
        return real_step(net_, l, h)

    monkeypatch.setattr(asti_mod, "forward_step", counting_step)
    for c in (1e-3, 1e-2, 1e-1):
        tau = asti_depths(tr, c)
        for i, x in enumerate(Xv[:300]):
            calls.clear()
            res = asti_infer(net, spec, x, c)
            assert res.stop_depth == tau[i]
            assert res.layers_computed == res.stop_depth == len(calls)
            assert calls == list(range(res.stop_depth))
            assert res.prediction == tr.predictions[i, res.stop_depth]
            u = res.utilities
            if res.stop_depth < net.depth:
                assert u[res.stop_depth] - u[res.stop_depth - 1] <= c
            assert all(u[k + 1] - u[k] > c for k in range(res.stop_depth - 1))


def test_tiny_cost_follows_direct_trace():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    tr = trace(net, Xv, yv)
    row = sweep(net, Xv, yv, [1e-12], tr=tr)[0]
    gains = np.diff(tr.utilities, axis=1)
    direct = []
    for g in gains:
        hit = [l for l in range(net.depth - 1) if g[l] <= 1e-12]
        direct.append(hit[0] + 1 if hit else net.depth)
    assert row.mean_depth == np.mean(direct)
    assert 1 <= row.mean_depth < net.depth


def test_duplicated_rows_same_statistics():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    a = sweep(net, Xv[:500], yv[:500], [1e-3, 1e-2])
    b = sweep(net, np.vstack([Xv[:500]] * 2), np.concatenate([yv[:500]] * 2), [1e-3, 1e-2])
    for ra, rb in zip(a, b):
        assert (ra.mean_depth, ra.mean_macs, ra.accuracy) == pytest.approx((rb.mean_depth, rb.mean_macs, rb.accuracy),
                                                                          abs=1e-12)


def test_sweep_validation():
    net = zero_net()
    with pytest.raises(UsageError):
        sweep(net, np.zeros((3, 2)), np.zeros(3, dtype=int), [])
    with pytest.raises(ConfigError):
        sweep(net, np.zeros((3, 2)), np.zeros(3, dtype=int), [0.1, -1.0])


def test_mean_depth_weakly_decreasing_and_macs_increasing():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    rows = sweep(net, Xv, yv, np.logspace(-6, 0, 15))
    depths = [r.mean_depth for r in rows]
    assert all(a >= b for a, b in zip(depths, depths[1:]))
    per_depth = [asti_macs(net, d) for d in range(1, net.depth + 1)]
    assert all(a < b for a, b in zip(per_depth, per_depth[1:]))
    for r in rows:
        assert r.mean_macs == pytest.approx(asti_macs(net, r.mean_depth), rel=1e-12)


# --- baselines ------------------------------------------------------------------------

def test_static_exit_at_full_depth():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    row = static_exit_baseline(net, Xv, yv, net.depth)
    full = np.mean(np.argmax(net.head_logits(rollout_inputs(net, Xv).states[:, -1]), axis=1) == yv)
    assert row.accuracy == full and row.mean_depth == net.depth


def test_static_exit_untrained_is_chance():
    net = ResidualNet.init(6, 8, 3, 2, seed=4)
    Xv, _ = dataset("val")
    # labels drawn independently of the inputs, so any fixed predictor scores 1/K in expectation
    yv = np.random.default_rng(0).integers(0, 3, size=len(Xv))
    row = static_exit_baseline(net, Xv, yv, 1)
    assert abs(row.accuracy - 1 / 3) < 4 * math.sqrt(2 / 9 / len(yv))
    assert row.mean_depth == 1.0
    with pytest.raises(UsageError):
        static_exit_baseline(net, Xv, yv, 0)
    with pytest.raises(UsageError):
        static_exit_baseline(net, Xv, yv, 7)


def test_entropy_extremes():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    assert entropy_exit_baseline(net, Xv, yv, math.log(3) + 1e-9).mean_depth == 1.0
    tr = trace(net, Xv, yv)
    tau = entropy_depths(tr, 1e-300)
    saturated = (tr.entropies[:, 1:] < 1e-300).any(axis=1)
    assert np.all(tau[~saturated] == net.depth)
    with pytest.raises(UsageError):
        entropy_exit_baseline(net, Xv, yv, 0.0)


def test_entropy_exit_by_hand():
    def ent(p):
        return -sum(q * math.log(q) for q in p)
    rows = [[ent([1 / 3] * 3), ent([0.5, 0.3, 0.2]), ent([0.9, 0.05, 0.05]), ent([0.98, 0.01, 0.01])]]
    tr = fake_trace(np.ones((1, 4)), rows)
    # entropies at layers 1..3 are about 1.03, 0.39, 0.11
    assert entropy_depths(tr, 0.5)[0] == 2
    assert entropy_depths(tr, 0.2)[0] == 3
    assert entropy_depths(tr, 0.05)[0] == 3
    assert entropy_depths(tr, 2.0)[0] == 1


def test_entropy_macs_count_head_per_visited_layer():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    trunk, head, stem = layer_macs(net)
    row = entropy_exit_baseline(net, Xv, yv, 0.1)
    assert row.mean_macs == pytest.approx(stem + row.mean_depth * (trunk + head), rel=1e-12)


# --- histogram and gap --------------------------------------------------------------

def test_zero_net_histogram():
    net = zero_net()
    counts = exit_histogram(net, np.random.default_rng(0).normal(size=(40, 2)), 0.01)
    assert counts.tolist() == [40, 0, 0, 0, 0]


def test_histogram_shifts_earlier_for_higher_cost():
    net, _ = trained(1.0)
    Xv, _ = dataset("val")
    taus = np.arange(1, net.depth + 1)
    means = []
    for c in (1e-3, 1e-1):
        counts = exit_histogram(net, Xv, c)
        assert counts.sum() == len(Xv)
        means.append(np.dot(counts, taus) / counts.sum())
    assert means[1] <= means[0]


def test_snell_gap_statistics():
    net, _ = trained(1.0)
    Xv, yv = dataset("val")
    gap = snell_gap(trace(net, Xv, yv), 0.01)
    assert 0 <= gap["agreement"] <= 1
    assert gap["mean_reward_gap"] >= 0
    assert gap["snell_mean_depth"] <= net.depth


def test_dominance():
    a = SweepRow("asti", 0.1, 2.5, 0, 0.95, 10)
    rows = [SweepRow("static", 2, 2.0, 0, 0.96, 10), SweepRow("static", 3, 3.0, 0, 0.99, 10)]
    assert dominated_by(a, rows) == rows[:1]
    assert dominated_by(SweepRow("asti", 0.1, 2.0, 0, 0.96, 10), rows) == []
