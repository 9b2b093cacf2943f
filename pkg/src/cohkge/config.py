"""Experiment configuration: one YAML/JSON file plus command-line overrides."""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import ConfigError
from .model import TrainConfig

OUTPUT_ROOT_ENV = "COHKGE_OUTPUT_ROOT"


@dataclass
class Paths:
    train: Optional[str] = None
    valid: Optional[str] = None
    test: Optional[str] = None
    textual: Optional[str] = None
    output_dir: str = "run"
    pmi: Optional[str] = None


@dataclass
class PmiOptions:
    smoothing: float = 0.0
    clip_negative: bool = False


@dataclass
class EvalOptions:
    k: int = 5
    intrusion_dims: int = 25
    annotators: int = 3
    qualitative_dims: int = 5
    filtered_ranking: bool = False


@dataclass
class GridOptions:
    lambda_c: list = field(default_factory=lambda: [10.0, 1.0, 0.1, 0.01])
    lambda_r: list = field(default_factory=lambda: [10.0, 1.0, 0.1, 0.01])
    dim: list = field(default_factory=lambda: [50, 100, 200])


@dataclass
class ExperimentConfig:
    paths: Paths = field(default_factory=Paths)
    train: TrainConfig = field(default_factory=TrainConfig)
    pmi: PmiOptions = field(default_factory=PmiOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    grid: GridOptions = field(default_factory=GridOptions)
    num_seeds: int = 5
    seed_base: int = 0
    workers: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        sections = {"paths": Paths, "pmi": PmiOptions, "eval": EvalOptions, "grid": GridOptions}
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = _section(sections[key], value, key)
            elif key == "train":
                kwargs[key] = TrainConfig.from_dict(value or {})
            elif key in ("num_seeds", "seed_base", "workers"):
                kwargs[key] = int(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        self.train.validate()
        if self.num_seeds < 1:
            raise ConfigError("num_seeds must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.eval.k < 2:
            raise ConfigError("eval.k must be at least 2")
        if self.pmi.smoothing < 0:
            raise ConfigError("pmi.smoothing must be non-negative")

    @property
    def pmi_path(self):
        return self.paths.pmi or os.path.join(self.paths.output_dir, "pmi.bin")

    def training_section(self):
        """The parts of the config a trained model depends on."""
        d = self.to_dict()
        paths = {k: d["paths"][k] for k in ("train", "valid", "test", "textual")}
        train = dict(d["train"])
        train.pop("seed")
        return {"paths": paths, "train": train, "pmi": d["pmi"], "num_seeds": self.num_seeds,
                "seed_base": self.seed_base}

    def training_hash(self):
        blob = json.dumps(self.training_section(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def require_inputs(self, *names):
        for name in names:
            path = getattr(self.paths, name)
            if not path:
                raise ConfigError(f"paths.{name} is not set")
            if not os.path.exists(path):
                raise ConfigError(f"paths.{name} does not exist: {path}")


def _section(cls, value, name):
    value = dict(value or {})
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(value) - known
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    return cls(**value)


def _resolve(path, base):
    if path is None or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base, path))


def load_config(path=None, overrides=None):
    """Read a config file (YAML or JSON), apply overrides and resolve paths.

    Relative input paths resolve against the config file's directory. A
    relative ``output_dir`` resolves against ``$COHKGE_OUTPUT_ROOT`` when set.
    """
    data = {}
    base = os.getcwd()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    cfg = ExperimentConfig.from_dict(data)
    apply_overrides(cfg, overrides or {})
    for name in ("train", "valid", "test", "textual", "pmi"):
        setattr(cfg.paths, name, _resolve(getattr(cfg.paths, name), base))
    out_base = os.environ.get(OUTPUT_ROOT_ENV) or base
    cfg.paths.output_dir = _resolve(cfg.paths.output_dir, out_base)
    return cfg


def apply_overrides(cfg, overrides):
    mapping = {"seed": ("seed_base", None), "lambda_c": ("lambda_c", "train"),
               "lambda_r": ("lambda_r", "train"), "dim": ("dim", "train"),
               "filtered_ranking": ("filtered_ranking", "eval"), "workers": ("workers", None),
               "num_seeds": ("num_seeds", None), "output_dir": ("output_dir", "paths")}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in mapping:
            raise ConfigError(f"unknown override {key!r}")
        attr, section = mapping[key]
        setattr(getattr(cfg, section) if section else cfg, attr, value)
    cfg.validate()
    return cfg


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
