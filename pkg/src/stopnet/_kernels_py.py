"""Pure numpy versions of the compiled kernels.

Every function here performs the same floating-point operations in the
same order as its counterpart in ``_kernels.pyx``, so both backends
return identical arrays.
"""

import numpy as np


def snell_envelope(rewards, tie_tol):
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    if rewards.ndim != 2 or rewards.shape[1] == 0:
        raise ValueError("reward paths must be nonempty")
    envelope = np.maximum.accumulate(rewards[:, ::-1], axis=1)[:, ::-1].copy()
    hit = envelope <= rewards + tie_tol
    # the last column always hits (U_L == Y_L), so argmax finds a True entry
    stop = np.argmax(hit, axis=1).astype(np.int64)
    return envelope, stop


def first_gain_stop(utilities, cost):
    utilities = np.ascontiguousarray(utilities, dtype=np.float64)
    n, m = utilities.shape
    if m < 2:
        raise ValueError("need at least two utility columns (h_0 and h_1)")
    stop = np.full(n, m - 1, dtype=np.int64)
    if m > 2:
        fires = (utilities[:, 1:m - 1] - utilities[:, : m - 2]) <= cost
        any_fire = fires.any(axis=1)
        stop[any_fire] = np.argmax(fires[any_fire], axis=1) + 1
    return stop


def hjb_sweep(h_lo, dh, feet, terminal, step_cost):
    feet = np.ascontiguousarray(feet, dtype=np.float64)
    terminal = np.ascontiguousarray(terminal, dtype=np.float64)
    n_t, n_h = feet.shape
    value = np.empty((n_t + 1, n_h))
    stop = np.empty((n_t + 1, n_h), dtype=np.uint8)
    value[n_t] = terminal
    stop[n_t] = 1
    x = (feet - h_lo) / dh
    j = np.clip(np.floor(x).astype(np.int64), 0, n_h - 2)
    w = x - j
    for i in range(n_t - 1, -1, -1):
        nxt = value[i + 1]
        lo = nxt[j[i]]
        cont = lo + w[i] * (nxt[j[i] + 1] - lo) - step_cost
        s = terminal >= cont
        value[i] = np.where(s, terminal, cont)
        stop[i] = s
    return value, stop
