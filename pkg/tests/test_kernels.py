import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stopnet import _kernels_py, kernels

compiled = pytest.importorskip("stopnet._kernels")


def reward_rows(draw_ints):
    return np.asarray(draw_ints, dtype=np.float64) / 4.0


rows = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 12).flatmap(
        lambda m: st.lists(st.lists(st.integers(-8, 8), min_size=m, max_size=m), min_size=n, max_size=n)))


@pytest.mark.skipif(bool(os.environ.get("STOPNET_PURE")), reason="fallback forced by environment")
def test_compiled_backend_is_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_pure_flag_forces_fallback():
    out = subprocess.run([sys.executable, "-c", "import stopnet.kernels as k; print(k.BACKEND)"],
                         env={**os.environ, "STOPNET_PURE": "1"}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@given(rows, st.sampled_from([0.0, 1e-9, 0.3]))
def test_snell_envelope_backends_agree(data, tol):
    y = reward_rows(data)
    u1, t1 = compiled.snell_envelope(y, tol)
    u2, t2 = _kernels_py.snell_envelope(y, tol)
    np.testing.assert_array_equal(u1, u2)
    np.testing.assert_array_equal(t1, t2)


@given(rows.filter(lambda r: len(r[0]) >= 2), st.sampled_from([1e-6, 0.25, 1.0]))
def test_first_gain_stop_backends_agree(data, cost):
    u = reward_rows(data)
    np.testing.assert_array_equal(compiled.first_gain_stop(u, cost), _kernels_py.first_gain_stop(u, cost))


def test_hjb_sweep_backends_agree(rng):
    n_t, n_h = 30, 41
    h = np.linspace(-1, 1, n_h)
    feet = np.clip(h + rng.uniform(-0.05, 0.05, size=(n_t, n_h)), -1, 1)
    g = np.clip(h, 0, 1)
    v1, s1 = compiled.hjb_sweep(-1.0, 2.0 / (n_h - 1), feet, g, 0.01)
    v2, s2 = _kernels_py.hjb_sweep(-1.0, 2.0 / (n_h - 1), feet, g, 0.01)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_array_equal(s1, s2)


@pytest.mark.parametrize("impl", [compiled, _kernels_py], ids=["cython", "python"])
def test_empty_paths_rejected(impl):
    with pytest.raises(ValueError):
        impl.snell_envelope(np.zeros((2, 0)), 0.0)
    with pytest.raises(ValueError):
        impl.first_gain_stop(np.zeros((2, 1)), 0.1)


def test_benchmark_script_runs():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = subprocess.run([sys.executable, os.path.join(root, "benchmarks", "bench_kernels.py"), "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    rows = out.stdout.splitlines()[1:]
    assert len(rows) == 3 and all(r.endswith("True") for r in rows)
