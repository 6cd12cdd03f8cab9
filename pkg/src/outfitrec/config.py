"""Flat key=value run configuration covering model, training and split settings.

Example file::

    # comments and blank lines are ignored
    model.d = 32
    train.epochs = 20
    split.train_fraction = 0.8
    seed = 7

A single ``seed`` drives all randomness: the parameter initialisation uses
``seed``, the training sampler ``seed + 1`` and the split ``seed + 2``.
"""

import dataclasses
from dataclasses import dataclass, field

from .dataio import SplitSpec, SyntheticSpec
from .model import ModelConfig
from .training import TrainConfig


class ConfigFileError(ValueError):
    pass


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "split": SplitSpec,
    "synth": SyntheticSpec,
}

# fields derived from the single seed; setting them directly is refused
_SEEDED = {("model", "init_seed"), ("train", "rng_seed"), ("split", "split_seed"),
           ("synth", "seed")}


def parse_value(text, kind):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def _field_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def model_config(self, **extra):
        return ModelConfig(**{**self.model, **extra, "init_seed": self.seed})

    def train_config(self, **extra):
        return TrainConfig(**{**self.train, **extra, "rng_seed": self.seed + 1})

    def split_spec(self):
        return SplitSpec(**{**self.split, "split_seed": self.seed + 2})

    def synthetic_spec(self):
        return SyntheticSpec(**{**self.synth, "seed": self.seed})

    def to_text(self):
        lines = [f"seed = {self.seed}"]
        for section in SECTIONS:
            for k, v in sorted(getattr(self, section).items()):
                lines.append(f"{section}.{k} = {v}")
        return "\n".join(lines) + "\n"


def apply_setting(values, key, raw, where="override"):
    """Parse one ``section.field=value`` into ``values`` (a dict of dicts)."""
    key = key.strip()
    if key == "seed":
        try:
            values["seed"] = int(raw)
        except ValueError:
            raise ConfigFileError(f"{where}: seed must be an integer, got {raw.strip()!r}") from None
        return
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise ConfigFileError(f"{where}: unknown key {key!r}")
    if (section, name) in _SEEDED:
        raise ConfigFileError(f"{where}: {key} is derived from seed; set seed instead")
    types = _field_types(SECTIONS[section])
    if name not in types:
        raise ConfigFileError(f"{where}: unknown key {key!r}")
    try:
        values[section][name] = parse_value(raw, types[name])
    except ValueError as exc:
        raise ConfigFileError(f"{where}: bad value for {key}: {exc}") from None


def load_config(path=None, overrides=()):
    """Read a config file (optional) then apply ``key=value`` overrides in order."""
    values = {"seed": 0, **{s: {} for s in SECTIONS}}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigFileError(f"{path}:{lineno}: expected key = value")
                key, raw = line.split("=", 1)
                apply_setting(values, key, raw, where=f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigFileError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        apply_setting(values, key, raw)
    cfg = RunConfig(**values)
    # surface invalid combinations now rather than mid-run
    try:
        cfg.model_config()
        cfg.train_config()
        cfg.split_spec()
        cfg.synthetic_spec()
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from None
    return cfg
