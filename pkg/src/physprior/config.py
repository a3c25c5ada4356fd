"""JSON run configuration: one section per subsystem, unknown keys rejected."""

import dataclasses
import json
from dataclasses import dataclass, field

from .agent.ppo import PPOConfig
from .dataset import GenConfig
from .physworld import EnvConfig


def _from_dict(cls, d, section):
    if not isinstance(d, dict):
        raise ValueError(f"config section {section!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class PredictorConfig:
    arch: str = "spatialnet"
    channels: int = 32
    kernel_size: int = None
    bptt_len: int = 10
    batch_size: int = 8
    lr: float = 1e-4
    epochs: int = 1
    max_steps: int = None
    eval_every: int = 0


@dataclass
class AgentConfig:
    ppo: dict = field(default_factory=dict)
    total_frames: int = 50_000
    finetune: bool = True
    predictor_channels: int = 32


@dataclass
class EvalConfig:
    warmup: int = 2
    horizons: tuple = (1, 5, 10)
    objects_step: int = 20
    noise: float = 0.0
    episodes: int = 100
    probe_train_per_class: int = 256
    probe_test_per_class: int = 128
    probe_clip_start: int = 60

    def __post_init__(self):
        self.horizons = tuple(self.horizons)


SECTIONS = {"dataset": GenConfig, "predictor": PredictorConfig, "agent": AgentConfig, "env": EnvConfig,
            "eval": EvalConfig}


@dataclass
class RunConfig:
    dataset: GenConfig = field(default_factory=GenConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ValueError("run config must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(**{name: _from_dict(SECTIONS[name], d[name], name) for name in d})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ValueError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def ppo_config(self):
        return _from_dict(PPOConfig, dict(self.agent.ppo), "agent.ppo")

    def validate(self):
        self.dataset.validate()
        self.env.validate()
        self.ppo_config().validate()

    def override(self, section, **values):
        """Set keys of one section, skipping values that are None (flag not given)."""
        target = getattr(self, section)
        for key, value in values.items():
            if value is None:
                continue
            if not hasattr(target, key):
                raise ValueError(f"config section {section!r} has no key {key!r}")
            setattr(target, key, value)
        return self

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    def write(self, path, **extra):
        doc = {"config": self.to_dict()}
        doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
