import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stopnet.config import DataConfig
from stopnet.dynamics import generate_dataset
from stopnet.train import ModelConfig, TrainConfig, train

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SEED = 1
DATA = DataConfig(kind="spirals", n_classes=3, noise=0.05, n_samples=5000, n_val=2000)
MODEL = ModelConfig(depth=8, width=8, n_classes=3, d_in=2, d_hidden=16)


@functools.lru_cache(maxsize=None)
def dataset(split):
    return generate_dataset(DATA.spec(SEED, split))


@functools.lru_cache(maxsize=None)
def trained(lam=1.0, beta=0.5):
    """Spiral classifier trained once per (lam, beta) and shared across test modules."""
    X, y = dataset("train")
    Xv, yv = dataset("val")
    cfg = TrainConfig(epochs=30, batch_size=128, lr=0.05, seed=SEED, beta=beta, lam=lam)
    net, log = train(cfg, MODEL, X, y, Xv, yv)
    return net, log


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_errors(net, X, y, config, n_coords, rng, eps=1e-5, floor=1e-6, detach_task=False):
    """Relative errors of ``backward`` against central differences of ``total_loss``.

    Coordinates are drawn uniformly over all weight entries (stem included).
    Error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    from stopnet.train import backward, total_loss

    grads = dict(backward(net, X, y, config, detach_task).named_arrays())
    params = net.named_arrays()
    sizes = np.array([a.size for _, a in params])
    flat = rng.choice(sizes.sum(), size=n_coords, replace=False)
    errs = []
    for k in flat:
        i = int(np.searchsorted(np.cumsum(sizes), k, side="right"))
        name, arr = params[i]
        j = np.unravel_index(k - (sizes[:i].sum()), arr.shape)
        old = arr[j]
        arr[j] = old + eps
        up, _ = total_loss(net, X, y, config, detach_task)
        arr[j] = old - eps
        down, _ = total_loss(net, X, y, config, detach_task)
        arr[j] = old
        num = (up - down) / (2 * eps)
        ana = grads[name][j]
        errs.append(abs(ana - num) / max(abs(ana), abs(num), floor))
    return np.array(errs)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Print and keep one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
