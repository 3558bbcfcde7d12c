"""Residual-stack state evolution, synthetic data and trajectory rollout.

A residual block computes ``f_l(h) = W2_l tanh(W1_l h + b1_l) + b2_l`` and
the stack advances ``h_{l+1} = h_l + f_l(h_l)``. For fixed weights the
trajectory ``h_0 .. h_L`` is a deterministic function of the input, so
rollouts are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import parallel
from .errors import ConfigError, NumericError, UsageError
from .rng import stream

GENERATORS = ("gaussian-blobs", "moons", "spirals")


@dataclass
class Block:
    w1: np.ndarray  # (d_hidden, d)
    b1: np.ndarray  # (d_hidden,)
    w2: np.ndarray  # (d, d_hidden)
    b2: np.ndarray  # (d,)

    def residual(self, h):
        """Evaluate ``f(h)`` for ``h`` of shape ``(d,)`` or ``(n, d)``."""
        return np.tanh(h @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def arrays(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class ResidualNet:
    """Stacked residual MLP with a linear stem and one shared linear head."""

    stem_w: np.ndarray  # (d, d_in)
    stem_b: np.ndarray  # (d,)
    blocks: list[Block]
    head_w: np.ndarray  # (n_classes, d)
    head_b: np.ndarray  # (n_classes,)

    def __post_init__(self):
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.stem_w.shape[0]

    @property
    def d_in(self) -> int:
        return self.stem_w.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.blocks[0].w1.shape[0] if self.blocks else 2 * self.width

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    def validate(self):
        d, d_in = np.shape(self.stem_w) if np.ndim(self.stem_w) == 2 else (None, None)
        if d is None:
            raise ConfigError("stem weight must be a matrix")
        if self.depth < 1:
            raise ConfigError("network depth must be >= 1")
        dh = self.blocks[0].w1.shape[0] if np.ndim(self.blocks[0].w1) == 2 else None
        expect = {
            "stem_b": (np.shape(self.stem_b), (d,)),
            "head_w": (np.shape(self.head_w)[1:], (d,)),
            "head_b": (np.shape(self.head_b), (np.shape(self.head_w)[0],)),
        }
        for l, blk in enumerate(self.blocks):
            expect[f"layers[{l}].w1"] = (np.shape(blk.w1), (dh, d))
            expect[f"layers[{l}].b1"] = (np.shape(blk.b1), (dh,))
            expect[f"layers[{l}].w2"] = (np.shape(blk.w2), (d, dh))
            expect[f"layers[{l}].b2"] = (np.shape(blk.b2), (d,))
        for name, (got, want) in expect.items():
            if tuple(got) != tuple(want):
                raise ConfigError(f"{name}: shape {tuple(got)} inconsistent with expected {want}")
        for name, arr in self.named_arrays():
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite entries")

    def named_arrays(self):
        out = [("stem.w", self.stem_w), ("stem.b", self.stem_b)]
        for l, blk in enumerate(self.blocks):
            out += [(f"layers[{l}].w1", blk.w1), (f"layers[{l}].b1", blk.b1),
                    (f"layers[{l}].w2", blk.w2), (f"layers[{l}].b2", blk.b2)]
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out

    def copy(self) -> "ResidualNet":
        return ResidualNet(
            self.stem_w.copy(),
            self.stem_b.copy(),
            [Block(*(a.copy() for a in b.arrays())) for b in self.blocks],
            self.head_w.copy(),
            self.head_b.copy(),
        )

    def scaled_blocks(self, s: float) -> "ResidualNet":
        """Copy with every block weight and bias multiplied by ``s``."""
        net = self.copy()
        for blk in net.blocks:
            blk.w1 *= s
            blk.b1 *= s
            blk.w2 *= s
            blk.b2 *= s
        return net

    def head_logits(self, h):
        return h @ self.head_w.T + self.head_b

    # --- construction -------------------------------------------------

    @classmethod
    def zeros(cls, depth, width, n_classes, d_in=None, d_hidden=None):
        """All block weights zero (identity trunk); identity stem when shapes allow."""
        d_in = width if d_in is None else d_in
        dh = 2 * width if d_hidden is None else d_hidden
        stem = np.eye(width, d_in)
        blocks = [Block(np.zeros((dh, width)), np.zeros(dh), np.zeros((width, dh)), np.zeros(width))
                  for _ in range(depth)]
        return cls(stem, np.zeros(width), blocks, np.zeros((n_classes, width)), np.zeros(n_classes))

    @classmethod
    def init(cls, depth, width, n_classes, d_in, seed, d_hidden=None, outer_scale=0.1):
        """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.

        The outer matrix and bias of each block are further scaled by
        ``outer_scale`` so that initial residuals are small. The stem is the
        identity when ``d_in == width``.
        """
        if min(depth, width, n_classes, d_in) < 1:
            raise ConfigError("depth, width, n_classes and d_in must be positive")
        dh = 2 * width if d_hidden is None else int(d_hidden)
        rng = stream(seed, "model/init")

        def unif(shape, fan_in):
            a = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-a, a, size=shape)

        if d_in == width:
            stem_w, stem_b = np.eye(width), np.zeros(width)
        else:
            stem_w, stem_b = unif((width, d_in), d_in), unif(width, d_in)
        blocks = []
        for _ in range(depth):
            w1, b1 = unif((dh, width), width), unif(dh, width)
            w2, b2 = unif((width, dh), dh) * outer_scale, unif(width, dh) * outer_scale
            blocks.append(Block(w1, b1, w2, b2))
        head_w, head_b = unif((n_classes, width), width), unif(n_classes, width)
        return cls(stem_w, stem_b, blocks, head_w, head_b)

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "width": self.width,
            "d_hidden": self.d_hidden,
            "n_classes": self.n_classes,
            "layers": [
                {"w1": b.w1.tolist(), "b1": b.b1.tolist(), "w2": b.w2.tolist(), "b2": b.b2.tolist()}
                for b in self.blocks
            ],
            "head": {"w": self.head_w.tolist(), "b": self.head_b.tolist()},
            "stem": {"w": self.stem_w.tolist(), "b": self.stem_b.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ResidualNet":
        required = {"depth", "width", "d_hidden", "n_classes", "layers", "head", "stem"}
        missing = required - set(doc)
        if missing:
            raise ConfigError(f"weights document missing keys: {sorted(missing)}")
        try:
            arr = lambda v: np.asarray(v, dtype=np.float64)  # noqa: E731
            blocks = [Block(arr(L["w1"]), arr(L["b1"]), arr(L["w2"]), arr(L["b2"])) for L in doc["layers"]]
            net = cls(arr(doc["stem"]["w"]), arr(doc["stem"]["b"]), blocks,
                      arr(doc["head"]["w"]), arr(doc["head"]["b"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed weights document: {exc}") from exc
        header = (net.depth, net.width, net.d_hidden, net.n_classes)
        if header != (doc["depth"], doc["width"], doc["d_hidden"], doc["n_classes"]):
            raise ConfigError(f"weights header {doc['depth'], doc['width'], doc['d_hidden'], doc['n_classes']}"
                              f" disagrees with array shapes {header}")
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "ResidualNet":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read weights {path}: {exc}") from exc
        return cls.from_dict(doc)


# --- spectral control ------------------------------------------------------

def spectral_norm_estimate(w, steps=20):
    """Operator 2-norm estimate by power iteration on ``w^T w``."""
    w = np.asarray(w, dtype=np.float64)
    v = np.ones(w.shape[1]) / math.sqrt(w.shape[1])
    sigma = 0.0
    for _ in range(steps):
        u = w @ v
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            return 0.0
        v = w.T @ u
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(w @ v))


def clip_spectral(net: ResidualNet, bound: float, steps=20) -> ResidualNet:
    """Rescale in place every block matrix whose estimated norm exceeds ``bound``."""
    for blk in net.blocks:
        for name in ("w1", "w2"):
            w = getattr(blk, name)
            s = spectral_norm_estimate(w, steps)
            if s > bound:
                w *= bound / s
    return net


def state_bound(net: ResidualNet, h0_max_norm: float) -> float:
    """Upper bound on ``max_l ||h_l||_inf`` given ``max ||h_0||_2``.

    With tanh, ``||f_l(h)||_2 <= ||W2_l||_2 sqrt(d_hidden) + ||b2_l||_2``,
    so the 2-norm (hence the inf-norm) of every state is bounded.
    """
    total = float(h0_max_norm)
    for blk in net.blocks:
        total += np.linalg.norm(blk.w2, 2) * math.sqrt(blk.w1.shape[0]) + np.linalg.norm(blk.b2)
    return total


# --- trajectories ----------------------------------------------------------

@dataclass
class Trajectory:
    states: np.ndarray  # (L+1, d)
    residual_norms: np.ndarray  # (L,)
    input_id: int = 0
    label: Optional[int] = None

    @property
    def depth(self) -> int:
        return len(self.residual_norms)


@dataclass
class TrajectoryBatch:
    """Stacked trajectories of equal depth; indexable as a sequence."""

    states: np.ndarray  # (n, L+1, d)
    residual_norms: np.ndarray  # (n, L)
    input_ids: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        lab = None if self.labels is None else int(self.labels[i])
        return Trajectory(self.states[i], self.residual_norms[i], int(self.input_ids[i]), lab)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def depth(self) -> int:
        return self.residual_norms.shape[1]

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "TrajectoryBatch":
        trajs = list(trajs)
        if not trajs:
            raise UsageError("trajectory batch is empty")
        depths = {t.depth for t in trajs}
        if len(depths) != 1:
            raise UsageError(f"mixed trajectory depths {sorted(depths)}")
        labels = None
        if all(t.label is not None for t in trajs):
            labels = np.array([t.label for t in trajs], dtype=np.int64)
        return cls(
            np.stack([t.states for t in trajs]),
            np.stack([t.residual_norms for t in trajs]),
            np.array([t.input_id for t in trajs], dtype=np.int64),
            labels,
        )


def as_batch(batch) -> TrajectoryBatch:
    if isinstance(batch, TrajectoryBatch):
        if len(batch) == 0:
            raise UsageError("trajectory batch is empty")
        return batch
    if isinstance(batch, Trajectory):
        return TrajectoryBatch.from_trajectories([batch])
    return TrajectoryBatch.from_trajectories(batch)


def _check_state(net, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1:] != (net.width,):
        raise ConfigError(f"state dimension {h.shape[-1:]} does not match width {net.width}")
    return h


def forward_step(net: ResidualNet, l: int, h):
    """Advance one block: returns ``(h + f_l(h), ||f_l(h)||_2)``."""
    if not 0 <= l < net.depth:
        raise UsageError(f"layer index {l} outside [0, {net.depth})")
    h = _check_state(net, h)
    if h.ndim != 1:
        raise ConfigError("forward_step takes a single state vector")
    f = net.blocks[l].residual(h)
    if not np.all(np.isfinite(f)):
        raise NumericError(f"non-finite residual output at layer {l}", layer=l)
    h_next = h + f
    if not np.all(np.isfinite(h_next)):
        raise NumericError(f"state overflow at layer {l}", layer=l)
    return h_next, float(np.linalg.norm(f))


def rollout(net: ResidualNet, h0, label=None, input_id=0) -> Trajectory:
    h = _check_state(net, h0)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite initial state", layer=0)
    states = np.empty((net.depth + 1, net.width))
    norms = np.empty(net.depth)
    states[0] = h
    for l in range(net.depth):
        states[l + 1], norms[l] = forward_step(net, l, states[l])
    return Trajectory(states, norms, input_id, label)


def _rollout_rows(net, H0):
    n = H0.shape[0]
    states = np.empty((n, net.depth + 1, net.width))
    norms = np.empty((n, net.depth))
    h = H0
    states[:, 0] = h
    for l, blk in enumerate(net.blocks):
        f = blk.residual(h)
        if not np.all(np.isfinite(f)):
            raise NumericError(f"non-finite residual output at layer {l}", layer=l)
        h = h + f
        states[:, l + 1] = h
        norms[:, l] = np.sqrt(np.einsum("ij,ij->i", f, f))
    return states, norms


def rollout_batch(net: ResidualNet, H0, labels=None, input_ids=None, threads=None) -> TrajectoryBatch:
    """Roll out many initial states; deterministic for any thread count."""
    H0 = _check_state(net, H0)
    if H0.ndim != 2 or H0.shape[0] == 0:
        raise UsageError("rollout_batch needs a nonempty (n, d) array")
    parts = parallel.chunked_map(lambda lo, hi: _rollout_rows(net, H0[lo:hi]), H0.shape[0], threads)
    states = np.concatenate([p[0] for p in parts])
    norms = np.concatenate([p[1] for p in parts])
    ids = np.arange(H0.shape[0]) if input_ids is None else np.asarray(input_ids, dtype=np.int64)
    labs = None if labels is None else np.asarray(labels, dtype=np.int64)
    return TrajectoryBatch(states, norms, ids, labs)


def embed(x, net: ResidualNet):
    """Map an input (or rows of inputs) to ``h_0`` through the linear stem."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.d_in,):
        raise ConfigError(f"input dimension {x.shape[-1:]} does not match stem input {net.d_in}")
    return x @ net.stem_w.T + net.stem_b


def rollout_inputs(net: ResidualNet, X, labels=None, threads=None) -> TrajectoryBatch:
    return rollout_batch(net, embed(X, net), labels=labels, threads=threads)


# --- synthetic data --------------------------------------------------------

@dataclass
class DatasetSpec:
    kind: str = "gaussian-blobs"
    n_classes: int = 2
    d_in: int = 2
    noise: float = 0.5
    n_samples: int = 1000
    seed: Optional[int] = None
    radius: float = 2.0
    turns: float = 1.0
    stream_label: str = field(default="data", repr=False)

    def validate(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"unsupported generator kind {self.kind!r}; choose from {GENERATORS}")
        if self.seed is None:
            raise ConfigError("dataset seed is required")
        if self.n_samples < 1:
            raise ConfigError("sample count must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.d_in < 1 or (self.kind != "gaussian-blobs" and self.d_in < 2):
            raise ConfigError("input dimension too small for generator")
        if self.kind == "moons" and self.n_classes != 2:
            raise ConfigError("moons generator supports exactly 2 classes")
        if self.noise < 0:
            raise ConfigError("noise scale must be >= 0")


def class_centroids(spec: DatasetSpec) -> np.ndarray:
    """Blob centres evenly spaced on a circle in the first two coordinates."""
    ang = 2 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    c = np.zeros((spec.n_classes, spec.d_in))
    c[:, 0] = spec.radius * np.cos(ang)
    if spec.d_in > 1:
        c[:, 1] = spec.radius * np.sin(ang)
    return c


def generate_dataset(spec: DatasetSpec):
    """Return ``(X, y)``: ``X`` of shape ``(n, d_in)`` and integer labels.

    Labels are stratified (cyclic, then shuffled), so class counts differ
    by at most one.
    """
    spec.validate()
    rng = stream(spec.seed, spec.stream_label)
    n = spec.n_samples
    y = rng.permutation(np.arange(n) % spec.n_classes).astype(np.int64)
    if spec.kind == "gaussian-blobs":
        X = class_centroids(spec)[y] + spec.noise * rng.standard_normal((n, spec.d_in))
    elif spec.kind == "spirals":
        t = np.sqrt(rng.uniform(0.0, 1.0, size=n))
        ang = 2 * np.pi * (spec.turns * t + y / spec.n_classes)
        X = np.zeros((n, spec.d_in))
        X[:, 0] = spec.radius * t * np.cos(ang)
        X[:, 1] = spec.radius * t * np.sin(ang)
        X += spec.noise * rng.standard_normal((n, spec.d_in))
    else:
        t = rng.uniform(0.0, np.pi, size=n)
        X = np.zeros((n, spec.d_in))
        upper = y == 0
        X[upper, 0] = np.cos(t[upper])
        X[upper, 1] = np.sin(t[upper])
        X[~upper, 0] = 1.0 - np.cos(t[~upper])
        X[~upper, 1] = 0.5 - np.sin(t[~upper])
        X *= spec.radius / 2.0
        X += spec.noise * rng.standard_normal((n, spec.d_in))
    return X, y


def _fmt(v):
    return repr(float(v))


def write_dataset_csv(path, X, y):
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{i}" for i in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, y):
            w.writerow([_fmt(v) for v in row] + [int(lab)])


def read_dataset_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"dataset {path} is empty")
    header = rows[0]
    expect = [f"x_{i}" for i in range(len(header) - 1)] + ["label"]
    if header != expect:
        raise ConfigError(f"dataset header {header} does not match x_0..x_k,label")
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in rows[1:]], dtype=np.float64)
        y = np.array([int(r[-1]) for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError(f"malformed dataset row in {path}: {exc}") from exc
    if X.shape[0] == 0:
        raise ConfigError(f"dataset {path} has no rows")
    return X.reshape(len(y), len(header) - 1), y
