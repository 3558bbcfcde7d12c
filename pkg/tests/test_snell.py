import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stopnet.dynamics import ResidualNet, rollout, rollout_batch
from stopnet.errors import UsageError
from stopnet.reward import RewardPath, UtilitySpec, rewards_from_utilities
from stopnet.snell import (brute_force_optimum, estimate_value, snell_backward, snell_batch, solve_batch,
                           truncation_depth)

paths = st.lists(st.integers(-20, 20), min_size=1, max_size=30).map(lambda v: np.array(v, dtype=np.float64) / 8)


def test_decreasing_rewards_stop_at_once():
    sp = snell_backward(np.array([5.0, 3.0, 1.0]))
    assert sp.envelope.tolist() == [5.0, 3.0, 1.0] and sp.stop_index == 0 and sp.value == 5.0


def test_increasing_rewards_run_to_horizon():
    sp = snell_backward([0.0, 1.0, 2.0])
    assert sp.envelope.tolist() == [2.0, 2.0, 2.0] and sp.stop_index == 2


def test_first_attainment_of_maximum():
    sp = snell_backward([1.0, 4.0, 2.0, 4.0, 0.0])
    assert sp.envelope.tolist() == [4.0, 4.0, 4.0, 4.0, 0.0] and sp.stop_index == 1


def test_brute_force_examples():
    assert brute_force_optimum([5.0, 3.0, 1.0]) == (5.0, 0)
    assert brute_force_optimum([2.0] * 6) == (2.0, 0)


def test_reward_path_objects_accepted():
    y = np.array([0.0, 0.5, 0.2])
    p = RewardPath(y, 0.1, y + 0.1 * np.arange(3))
    assert snell_backward(p).stop_index == brute_force_optimum(p)[1] == 1


def test_malformed_paths():
    with pytest.raises(UsageError):
        snell_backward([])
    with pytest.raises(UsageError):
        snell_backward([1.0], tie_tol=-1)
    with pytest.raises(UsageError):
        brute_force_optimum(np.zeros((2, 2)))


def test_thousand_random_paths_match_oracle(rng):
    for _ in range(1000):
        y = rng.normal(size=rng.integers(1, 40))
        sp = snell_backward(y, 0.0)
        assert (sp.value, sp.stop_index) == brute_force_optimum(y)


@given(paths)
def test_envelope_recursion(y):
    sp = snell_backward(y, 0.0)
    U = sp.envelope
    assert U[-1] == y[-1]
    for l in range(len(y) - 1):
        assert U[l] == max(y[l], U[l + 1])
    assert np.all(U >= y)
    assert sp.stop_index == min(l for l in range(len(y)) if U[l] <= y[l])
    assert (sp.value, sp.stop_index) == brute_force_optimum(y)


@given(paths)
def test_non_increasing_rewards_give_non_increasing_envelope(y):
    y = np.sort(y)[::-1]
    assert np.all(np.diff(snell_backward(y).envelope) <= 0)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=25), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_stop_index_weakly_decreasing_in_cost(u, c1, c2):
    c1, c2 = sorted((c1, c2))
    u = np.array(u)
    t1 = snell_backward(rewards_from_utilities(u, c1), 0.0).stop_index
    t2 = snell_backward(rewards_from_utilities(u, c2), 0.0).stop_index
    assert t2 <= t1


@given(paths)
def test_value_non_decreasing_in_horizon_without_cost(y):
    values = [snell_backward(y[: k + 1], 0.0).value for k in range(len(y))]
    assert np.all(np.diff(values) >= 0)
    np.testing.assert_array_equal(values, np.maximum.accumulate(y))


def test_tie_tolerance_stops_early():
    y = np.array([1.0, 1.0 + 1e-12, 0.0])
    assert snell_backward(y, 0.0).stop_index == 1
    assert snell_backward(y).stop_index == 0


def test_batch_matches_single_paths(rng):
    Y = rng.normal(size=(300, 9))
    U, tau = snell_batch(Y, 0.0)
    for i in range(300):
        sp = snell_backward(Y[i], 0.0)
        np.testing.assert_array_equal(U[i], sp.envelope)
        assert tau[i] == sp.stop_index


@given(st.lists(st.floats(0.34, 1.0), min_size=60, max_size=60), st.floats(0.02, 0.5))
def test_optimum_never_beyond_truncation_depth(u, c):
    tau = snell_backward(rewards_from_utilities(np.array(u), c)).stop_index
    assert tau < truncation_depth(1.0, 1 / 3, c)


# --- estimators ---------------------------------------------------------------

def small_batch(n, seed=0, scale=1.0):
    net = ResidualNet.init(6, 4, 3, 4, seed=seed, outer_scale=scale)
    H0 = np.random.default_rng(seed).normal(size=(n, 4))
    return net, rollout_batch(net, H0, labels=np.arange(n) % 3)


def test_single_trajectory_estimate():
    net, tb = small_batch(1)
    spec = UtilitySpec.for_net(net)
    est = estimate_value([tb[0]], spec, 0.01)
    _, _, env, _ = solve_batch(tb, spec, 0.01)
    assert est.mean_value == env[0, 0] and est.se_value == 0.0 and est.se_stop == 0.0 and est.n == 1


def test_zero_net_value_and_depth():
    net, tb = small_batch(50)
    net = net.scaled_blocks(0.0)
    tb = rollout_batch(net, tb.states[:, 0])
    spec = UtilitySpec.for_net(net)
    est = estimate_value(tb, spec, 0.05)
    u0 = spec.logits(tb.states[:, 0])
    assert est.mean_stop == 0.0
    assert est.mean_value == pytest.approx(np.mean(np.exp(u0).max(1) / np.exp(u0).sum(1)), abs=1e-15)


def scalar_utility(spec, h, label):
    """Plain-Python softmax utility used as an independent oracle."""
    z = [sum(spec.head_w[k, j] * h[j] for j in range(len(h))) + spec.head_b[k] for k in range(spec.n_classes)]
    m = max(z)
    total = sum(math.exp(v - m) for v in z)
    if spec.kind == "confidence":
        return 1.0 / total
    return max(z[label] - m - math.log(total), spec.ce_clamp)


@pytest.mark.parametrize("kind", ["confidence", "neg-cross-entropy"])
def test_value_decomposes_into_utility_and_cost(kind):
    net, tb = small_batch(2000, seed=3, scale=2.0)
    spec = UtilitySpec.for_net(net, kind)
    c = 0.004
    est = estimate_value(tb, spec, c)
    g_tau, taus = [], []
    for tr in tb:
        u = [scalar_utility(spec, h, tr.label) for h in tr.states]
        _, t = brute_force_optimum([u[l] - c * l for l in range(len(u))])
        g_tau.append(u[t])
        taus.append(t)
    assert est.mean_value == pytest.approx(np.mean(g_tau) - c * np.mean(taus), abs=1e-9)
    assert est.mean_stop == np.mean(taus)


def test_empty_batch_rejected():
    net, _ = small_batch(1)
    with pytest.raises(UsageError):
        estimate_value([], UtilitySpec.for_net(net), 0.1)


def test_neg_ce_needs_labels():
    net, tb = small_batch(4)
    tb.labels = None
    with pytest.raises(UsageError):
        estimate_value(tb, UtilitySpec.for_net(net, "neg-cross-entropy"), 0.1)


def test_thread_count_does_not_change_results():
    net, tb = small_batch(3000, seed=5)
    spec = UtilitySpec.for_net(net)
    a = solve_batch(tb, spec, 0.001, threads=1)
    b = solve_batch(tb, spec, 0.001, threads=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_truncation_depth_formula():
    assert truncation_depth(1.0, 0.5, 0.1, l0=2) == 5 + 2 + 1
    r = rollout(ResidualNet.zeros(2, 2, 2), np.zeros(2))
    assert r.depth == 2
