"""Run configuration: TOML in, validated dataclasses out, full echo back to TOML."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import tomlkit

from .model import ModelConfig, TrainConfig

# d_v and the head width come from the dataset, the seed from the run
_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name not in ("d_v", "num_classes", "seed")]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig)]


def _model_defaults():
    return {k: v for k, v in asdict(ModelConfig(d_v=1, num_classes=1)).items() if k in _MODEL_KEYS}


@dataclass
class RunConfig:
    model: dict = field(default_factory=_model_defaults)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    joint: bool = False
    data: str | None = None
    out: str | None = None

    def model_config(self, d_v, num_classes):
        return ModelConfig(d_v=d_v, num_classes=num_classes, seed=self.seed, **self.model)

    def problems(self, d_v=1, num_classes=1):
        out = [f"model.{p}" for p in self.model_config(d_v, num_classes).problems()]
        out += [f"train.{p}" for p in self.train.problems()]
        if self.seed < 0:
            out.append("seed must be >= 0")
        return out

    def to_toml(self):
        doc = tomlkit.document()
        doc.add("seed", self.seed)
        doc.add("joint", self.joint)
        if self.data is not None:
            doc.add("data", self.data)
        if self.out is not None:
            doc.add("out", self.out)
        m = tomlkit.table()
        for k in _MODEL_KEYS:
            v = self.model[k]
            m.add(k, list(v) if isinstance(v, tuple) else v)
        doc.add("model", m)
        t = tomlkit.table()
        for k, v in asdict(self.train).items():
            t.add(k, v)
        doc.add("train", t)
        return tomlkit.dumps(doc)


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _typed(name, value, default, problems):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name}: expected a number, got {value!r}")
            return value
        return float(value)
    return value


def parse_config(text):
    """Parse TOML text into a RunConfig, collecting every problem before raising."""
    try:
        raw = tomlkit.parse(text).unwrap()
    except tomlkit.exceptions.ParseError as exc:
        raise ConfigError([f"TOML syntax: {exc}"]) from None
    problems = []
    cfg = RunConfig()
    for key in list(raw):
        if key not in ("model", "train", "seed", "joint", "data", "out"):
            problems.append(f"unknown key {key!r}")
    for key in ("seed", "joint", "data", "out"):
        if key in raw:
            default = getattr(cfg, key)
            setattr(cfg, key, _typed(key, raw[key], default if default is not None else "", problems))
    defaults = _model_defaults()
    for k, v in raw.get("model", {}).items():
        if k not in defaults:
            problems.append(f"model: unknown key {k!r}")
            continue
        if k == "per_hop_counts":
            if not isinstance(v, list) or not all(isinstance(c, int) for c in v):
                problems.append(f"model.per_hop_counts: expected a list of integers, got {v!r}")
            cfg.model[k] = tuple(v) if isinstance(v, list) else v
        else:
            cfg.model[k] = _typed(f"model.{k}", v, defaults[k], problems)
    tdefaults = asdict(TrainConfig())
    tvals = dict(tdefaults)
    for k, v in raw.get("train", {}).items():
        if k not in tdefaults:
            problems.append(f"train: unknown key {k!r}")
            continue
        tvals[k] = _typed(f"train.{k}", v, tdefaults[k], problems)
    cfg.train = TrainConfig(**tvals)
    if not problems:
        problems = cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def defaults_summary():
    """One line per default, for ``--help``."""
    cfg = RunConfig()
    lines = [f"model.{k} = {v}" for k, v in cfg.model.items()]
    lines += [f"train.{k} = {v}" for k, v in asdict(cfg.train).items()]
    return lines
