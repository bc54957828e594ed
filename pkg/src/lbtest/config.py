"""Experiment configuration: one JSON file describes one run.

Every section is a frozen dataclass; unknown keys and bad values raise
:class:`ConfigError` so mistakes surface before any stage runs.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .baselines import ALL_METHODS
from .errors import ConfigError, LbtError
from .mutation import MutantSpec
from .sprt import SprtConfig
from .surrogate import SurrogateConfig


def _build(cls, raw, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        sub = _SECTIONS.get((cls, f.name))
        if sub is not None:
            v = _build(sub, v, f"{where}.{f.name}")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (LbtError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class Train:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2 < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train: learning_rate and l2 must be >= 0, epochs and batch_size >= 1")


@dataclass(frozen=True)
class Dataset:
    kind: str = "blobs"
    # blobs
    n_per_class: int = 500
    num_classes: int = 2
    dim: int = 2
    spread: float = 0.1
    train_fraction: float = 0.5
    # idx
    train_images: str = ""
    train_labels: str = ""
    val_images: str = ""
    val_labels: str = ""
    n_train: int = 0
    n_val: int = 0

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ConfigError(f"dataset.kind must be 'blobs' or 'idx', got {self.kind!r}")
        if self.kind == "idx" and not (self.train_images and self.train_labels and self.val_images
                                       and self.val_labels):
            raise ConfigError("dataset: idx kind needs train_images, train_labels, val_images, val_labels")
        if self.kind == "blobs" and not 0 < self.train_fraction < 1:
            raise ConfigError("dataset.train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Mut:
    hidden: tuple = (16,)
    train: Train = field(default_factory=lambda: Train(0.5, 50, 32))


@dataclass(frozen=True)
class Attack:
    kind: str = "FGSM"
    gamma: float = 0.1
    min_accuracy: float = 0.40
    min_drop: float = 0.30
    # explicit strength; 0 means "tune inside the band"
    epsilon: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("FGSM", "JSMA"):
            raise ConfigError(f"attack.kind must be FGSM or JSMA, got {self.kind!r}")


@dataclass(frozen=True)
class Surrogate:
    hidden: tuple = (8,)
    seed_points: int = 50
    tau: float = 0.95
    patience: int = 5
    lam: float = 0.1
    max_rounds: int = 20
    train: Train = field(default_factory=lambda: Train(0.5, 30, 16))

    def __post_init__(self):
        if self.seed_points < 1:
            raise ConfigError("surrogate.seed_points must be positive")
        SurrogateConfig(self.tau, self.patience, self.lam, self.max_rounds)


@dataclass(frozen=True)
class Mutation:
    operators: tuple = ("GF",)
    rate: float = 0.01
    gf_sigma: float = 1.0
    min_agreement: float = 0.90
    calibration_mutants: int = 100

    def __post_init__(self):
        if not self.operators:
            raise ConfigError("mutation.operators must name at least one operator")
        for op in self.operators:
            MutantSpec(op, self.rate, self.gf_sigma)
        if not 0 <= self.min_agreement <= 1 or self.calibration_mutants < 1:
            raise ConfigError("mutation: min_agreement must lie in [0, 1] and calibration_mutants >= 1")


@dataclass(frozen=True)
class Sprt:
    alpha: float = 0.05
    beta: float = 0.05
    delta: float = 0.05
    p_clamp: float = 1e-3
    subset_fraction: float = 0.1
    subset_min: int = 30
    decided_target: float = 0.9
    nmax_ceiling: int = 1000

    def __post_init__(self):
        SprtConfig(**asdict(self))


@dataclass(frozen=True)
class Baselines:
    methods: tuple = ("deepgini", "pe", "maxp", "nac", "nbc", "dsa", "kde", "random")
    nac_threshold: float = 0.75

    def __post_init__(self):
        unknown = sorted(set(self.methods) - set(ALL_METHODS))
        if unknown:
            raise ConfigError(f"baselines: unknown method(s) {', '.join(unknown)}")
        if not 0 < self.nac_threshold < 1:
            raise ConfigError("baselines.nac_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    dataset: Dataset = field(default_factory=Dataset)
    mut: Mut = field(default_factory=Mut)
    attack: Attack = field(default_factory=Attack)
    eval_fraction: float = 0.1
    surrogate: Surrogate = field(default_factory=Surrogate)
    mutation: Mutation = field(default_factory=Mutation)
    sprt: Sprt = field(default_factory=Sprt)
    baselines: Baselines = field(default_factory=Baselines)
    retrain: Train = field(default_factory=lambda: Train(0.05, 5, 16))

    def __post_init__(self):
        if not 0 < self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        cfg = _build(cls, raw, "config")
        if base_dir is not None and cfg.dataset.kind == "idx":
            fix = {k: str((Path(base_dir) / getattr(cfg.dataset, k)).resolve())
                   for k in ("train_images", "train_labels", "val_images", "val_labels")}
            cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, **fix))
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    (ExperimentConfig, "dataset"): Dataset,
    (ExperimentConfig, "mut"): Mut,
    (ExperimentConfig, "attack"): Attack,
    (ExperimentConfig, "surrogate"): Surrogate,
    (ExperimentConfig, "mutation"): Mutation,
    (ExperimentConfig, "sprt"): Sprt,
    (ExperimentConfig, "baselines"): Baselines,
    (ExperimentConfig, "retrain"): Train,
    (Mut, "train"): Train,
    (Surrogate, "train"): Train,
}


def digest(obj):
    """Stable short hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
