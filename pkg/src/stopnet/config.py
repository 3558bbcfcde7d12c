"""Run configuration: strict JSON schema mapped onto dataclasses.

Unknown keys are rejected at every level. One top-level ``seed`` feeds
every random stream (data, init, shuffling).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .dynamics import GENERATORS, DatasetSpec
from .errors import ConfigError
from .hjb import HjbProblem
from .reward import UTILITY_KINDS
from .train import ModelConfig, TrainConfig

# JSON key -> dataclass attribute, where they differ
_ALIASES = {"train": {"lambda": "lam"}}


@dataclass
class DataConfig:
    kind: str = "spirals"
    n_classes: int = 3
    d_in: int = 2
    noise: float = 0.05
    n_samples: int = 5000
    n_val: int = 2000
    radius: float = 2.0
    turns: float = 1.0

    def spec(self, seed, split="train") -> DatasetSpec:
        n = self.n_samples if split == "train" else self.n_val
        return DatasetSpec(self.kind, self.n_classes, self.d_in, self.noise, n, seed,
                           self.radius, self.turns, stream_label=f"data/{split}")


@dataclass
class RewardConfig:
    kind: str = "confidence"
    cost_c: float = 0.01
    ce_clamp: float = -10.0


@dataclass
class SnellConfig:
    tie_tol: float = 1e-9


@dataclass
class DriftConfig:
    l0: Optional[int] = None
    l0_fraction: float = 0.25


@dataclass
class AstiConfig:
    c_values: list = field(default_factory=lambda: [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1])
    static_layers: Optional[list] = None  # default: every layer 1..L
    entropy_thresholds: list = field(default_factory=lambda: [0.01, 0.03, 0.1, 0.3, 0.6])
    hist_c: Optional[float] = None  # default: middle of c_values


@dataclass
class RunConfig:
    seed: int
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    snell: SnellConfig = field(default_factory=SnellConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    asti: AstiConfig = field(default_factory=AstiConfig)
    hjb: HjbProblem = field(default_factory=HjbProblem)
    output_dir: Optional[str] = None

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.data.kind not in GENERATORS:
            raise ConfigError(f"unsupported generator kind {self.data.kind!r}")
        if self.model.n_classes != self.data.n_classes:
            raise ConfigError("model.n_classes and data.n_classes disagree")
        if self.model.d_in != self.data.d_in:
            raise ConfigError("model.d_in and data.d_in disagree")
        if self.reward.kind not in UTILITY_KINDS:
            raise ConfigError(f"unknown utility kind {self.reward.kind!r}")
        if not self.reward.cost_c > 0:
            raise ConfigError("reward.cost_c must be positive")
        if self.reward.ce_clamp > 0:
            raise ConfigError("reward.ce_clamp must be <= 0")
        self.train.seed = self.seed
        self.train.validate()
        self.hjb.validate()
        if not self.asti.c_values or any(not c > 0 for c in self.asti.c_values):
            raise ConfigError("asti.c_values must be a nonempty list of positive costs")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        tr = out["train"]
        tr["lambda"] = tr.pop("lam")
        tr.pop("seed")
        return out


def _section(cls, doc, name):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    alias = _ALIASES.get(name, {})
    allowed = {f.name for f in fields(cls)} - ({"seed"} if name == "train" else set())
    kwargs = {}
    for key, val in doc.items():
        attr = alias.get(key, key)
        if attr not in allowed or (attr != key and key not in alias):
            raise ConfigError(f"unknown key {name}.{key}")
        if name == "train" and key == "lam":
            raise ConfigError("unknown key train.lam (use 'lambda')")
        kwargs[attr] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


_SECTIONS = {
    "model": ModelConfig, "data": DataConfig, "reward": RewardConfig, "train": TrainConfig,
    "snell": SnellConfig, "drift": DriftConfig, "asti": AstiConfig, "hjb": HjbProblem,
}


def from_dict(doc: dict, seed_override=None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"seed", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed") if seed_override is None else seed_override
    if seed is None:
        raise ConfigError("missing required key 'seed'")
    parts = {name: _section(cls, doc.get(name), name) for name, cls in _SECTIONS.items()}
    model_doc = doc.get("model") or {}
    data = parts["data"]
    # model shape defaults follow the data section unless set explicitly
    if "n_classes" not in model_doc:
        parts["model"].n_classes = data.n_classes
    if "d_in" not in model_doc:
        parts["model"].d_in = data.d_in
    return RunConfig(seed=seed, output_dir=doc.get("output_dir"), **parts).validate()


def load(path, seed_override=None) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(doc, seed_override)


def dump(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
