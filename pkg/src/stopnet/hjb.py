"""Continuous-depth stopping on a 1-D grid.

The state follows ``dh/dt = f(h, t)`` on ``[0, T]`` and may stop at any
time with payoff ``g(h) - c * (elapsed time)``. The value function solves
the variational inequality ``max(V_t + f V_h - c, g - V) = 0`` with
``V(h, T) = g(h)``. We discretise it semi-Lagrangian style: step back
along the characteristic and interpolate linearly,

    V(h, t_i) = max(g(h), V~(h + f(h, t_i) dt, t_{i+1}) - c dt),

which for deterministic dynamics is the discrete Snell recursion with
per-step cost ``c dt``. Characteristics are clamped to the domain
(absorbing-boundary approximation).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ResolutionError
from .snell import snell_batch

DYNAMICS = ("zero", "constant", "tanh")
UTILITIES = ("clamp-ramp", "logistic")


@dataclass
class HjbProblem:
    h_lo: float = -1.0
    h_hi: float = 2.0
    n_h: int = 121
    n_t: int = 40
    T: float = 1.0
    c: float = 0.5
    dynamics: str = "constant"
    drift: float = 1.0  # ``a`` in f = a or f = a * tanh(h)
    utility: str = "clamp-ramp"
    steepness: float = 4.0  # logistic slope

    def validate(self):
        if self.n_h < 3 or self.n_t < 2:
            raise ConfigError("need n_h >= 3 and n_t >= 2")
        if not self.h_lo < self.h_hi:
            raise ConfigError("need h_lo < h_hi")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if not self.c > 0:
            raise ConfigError("cost rate c must be positive")
        if self.dynamics not in DYNAMICS:
            raise ConfigError(f"unknown dynamics {self.dynamics!r}; choose from {DYNAMICS}")
        if self.utility not in UTILITIES:
            raise ConfigError(f"unknown terminal utility {self.utility!r}; choose from {UTILITIES}")

    @property
    def dt(self):
        return self.T / self.n_t

    @property
    def dh(self):
        return (self.h_hi - self.h_lo) / (self.n_h - 1)

    def grid(self):
        return self.h_lo + self.dh * np.arange(self.n_h)

    def times(self):
        return self.dt * np.arange(self.n_t + 1)

    def f(self, h, t):
        h = np.asarray(h, dtype=np.float64)
        if self.dynamics == "zero":
            return np.zeros_like(h)
        if self.dynamics == "constant":
            return np.full_like(h, self.drift)
        return self.drift * np.tanh(h)

    def g(self, h):
        h = np.asarray(h, dtype=np.float64)
        if self.utility == "clamp-ramp":
            return np.clip(h, 0.0, 1.0)
        return 1.0 / (1.0 + np.exp(-self.steepness * h))


@dataclass
class HjbSolution:
    problem: HjbProblem
    h: np.ndarray
    t: np.ndarray
    value: np.ndarray  # (n_t+1, n_h)
    stop: np.ndarray  # (n_t+1, n_h) bool; True = stopping region S
    continuation: np.ndarray  # (n_t, n_h) continuation values
    boundary: list = field(default_factory=list)

    def residual(self):
        """Discrete variational-inequality residual per node (rows 0..n_t-1)."""
        g = self.problem.g(self.h)
        v = self.value[:-1]
        return np.maximum(self.continuation - v, g - v)

    def complementarity_gap(self) -> float:
        """Max over nodes of ``min(|V - g|, |V - continuation|)``; zero when every
        node either stops or satisfies the discrete PDE."""
        v = self.value[:-1]
        g = self.problem.g(self.h)
        return float(np.max(np.minimum(np.abs(v - g), np.abs(v - self.continuation))))


def _feet(problem: HjbProblem, h, t):
    dt, dh = problem.dt, problem.dh
    feet = np.empty((problem.n_t, problem.n_h))
    for i in range(problem.n_t):
        step = problem.f(h, t[i]) * dt
        worst = float(np.max(np.abs(step)))
        if worst > dh * (1 + 1e-12):
            raise ResolutionError(
                f"characteristic moves {worst / dh:.3g} cells per step at t={t[i]:.4g}; "
                "increase n_t (smaller dt) or decrease n_h so |f| dt <= dh")
        feet[i] = np.clip(h + step, problem.h_lo, problem.h_hi)
    return feet


def solve(problem: HjbProblem) -> HjbSolution:
    problem.validate()
    h, t = problem.grid(), problem.times()
    g = problem.g(h)
    feet = _feet(problem, h, t)
    step_cost = problem.c * problem.dt
    value, stop = kernels.hjb_sweep(problem.h_lo, problem.dh, feet, g, step_cost)
    cont = _interp_rows(problem, feet, value[1:]) - step_cost
    sol = HjbSolution(problem, h, t, value, stop.astype(bool), cont)
    sol.boundary = extract_boundary(sol)
    return sol


def _interp_rows(problem, feet, rows):
    x = (feet - problem.h_lo) / problem.dh
    j = np.clip(np.floor(x).astype(np.int64), 0, problem.n_h - 2)
    w = x - j
    lo = np.take_along_axis(rows, j, axis=1)
    hi = np.take_along_axis(rows, j + 1, axis=1)
    return lo + w * (hi - lo)


def extract_boundary(sol: HjbSolution):
    """Per time slice, the midpoints between neighbouring nodes whose labels differ."""
    out = []
    for i, ti in enumerate(sol.t):
        s = sol.stop[i]
        k = np.nonzero(s[1:] != s[:-1])[0]
        out.append((float(ti), [float(0.5 * (sol.h[j] + sol.h[j + 1])) for j in k]))
    return out


def dense_search_value(problem: HjbProblem, h, t, n_s=4001):
    """Brute force ``max_{s in [t, T]} g(x(s)) - c (s - t)`` for constant drift.

    ``x(s) = clip(h + a (s - t))`` is exact for ``f = a`` with an absorbing
    boundary at the domain edges.
    """
    if problem.dynamics not in ("zero", "constant"):
        raise ConfigError("dense search oracle needs constant dynamics")
    a = 0.0 if problem.dynamics == "zero" else problem.drift
    h = np.asarray(h, dtype=np.float64)
    s = np.linspace(0.0, problem.T - t, n_s)
    x = np.clip(h[:, None] + a * s[None, :], problem.h_lo, problem.h_hi)
    return (problem.g(x) - problem.c * s[None, :]).max(axis=1)


def discrete_values(problem: HjbProblem, n_layers, h0=None):
    """Optimal stopping value of the layered analogue started at each ``h0``.

    ``n_layers`` Euler steps ``h += f(h, t_l) T/L`` (clamped to the domain)
    with per-layer cost ``c T / L``; solved by the Snell envelope.
    """
    if n_layers < 2:
        raise ConfigError("n_layers must be >= 2")
    problem.validate()
    h = problem.grid() if h0 is None else np.asarray(h0, dtype=np.float64)
    step = problem.T / n_layers
    path = np.empty((len(h), n_layers + 1))
    path[:, 0] = h
    for l in range(n_layers):
        path[:, l + 1] = np.clip(path[:, l] + problem.f(path[:, l], l * step) * step,
                                 problem.h_lo, problem.h_hi)
    rewards = problem.g(path) - problem.c * step * np.arange(n_layers + 1)
    env, _ = snell_batch(rewards, 0.0)
    return env[:, 0]


def snell_consistency(problem: HjbProblem, n_layers, solution: HjbSolution | None = None) -> float:
    """Max ``|V[0] - discrete optimal value|`` over grid start points."""
    sol = solve(problem) if solution is None else solution
    return float(np.max(np.abs(sol.value[0] - discrete_values(problem, n_layers, sol.h))))


def interpolation_error_bound(sol: HjbSolution) -> float:
    """Accumulated linear-interpolation error bound ``sum_i (dh/2) Lip(V_{i+1})``.

    Lipschitz constants are read from grid differences of the solved
    value slices.
    """
    dh = sol.problem.dh
    lips = np.abs(np.diff(sol.value[1:], axis=1)).max(axis=1) / dh
    return float(0.5 * dh * lips.sum())


def summary(sol: HjbSolution) -> dict:
    p = sol.problem
    return {
        "problem": asdict(p),
        "dt": p.dt,
        "dh": p.dh,
        "stop_fraction": float(sol.stop.mean()),
        "complementarity_gap": sol.complementarity_gap(),
        "value_t0_min": float(sol.value[0].min()),
        "value_t0_max": float(sol.value[0].max()),
    }
