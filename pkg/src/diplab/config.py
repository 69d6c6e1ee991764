"""Run configuration files: strict YAML with line-anchored errors.

Sections and keys::

    train:    TrainConfig fields (``lambda`` is spelled out)
    data:     c_total, per_class, test_per_class, noise_sigma, name_noise, n_patches
    model:    seed, d_text, d_vis, m_layers, n_layers, tau, attn_scale
    protocol: kind (base_to_new | fewshot), shots_list
    compare:  variants, seeds
    ablate:   axis, values
    output:   dir

Every section and key is optional; unknown ones are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .train import ABLATION_AXES, OBJECTIVES, TrainConfig


@dataclass
class DataConfig:
    c_total: int = 8
    per_class: int = 16
    test_per_class: int = 50
    noise_sigma: float = 0.3
    name_noise: float = 0.5
    n_patches: int = 9


@dataclass
class ModelConfig:
    seed: int = 0
    d_text: int = 64
    d_vis: int = 64
    m_layers: int = 2
    n_layers: int = 2
    tau: float = 0.07
    attn_scale: float = 2.0


@dataclass
class ProtocolConfig:
    kind: str = "base_to_new"
    shots_list: list = field(default_factory=lambda: [1, 2, 4, 8, 16])


@dataclass
class CompareConfig:
    variants: list = field(default_factory=lambda: list(OBJECTIVES))
    seeds: list = field(default_factory=lambda: [0, 1, 2])


@dataclass
class AblateConfig:
    axis: str = "rank"
    values: list = field(default_factory=lambda: [1, 2, 3])


@dataclass
class OutputConfig:
    dir: str = "runs/default"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}
# file spelling -> dataclass attribute
_ALIASES = {"train": {"lambda": "lam"}}


def _check_type(value, default, key, line):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}", line)
    return value


def parse_config(text: str) -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        values = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if root is None:
        return RunConfig()
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping of sections", root.start_mark.line + 1)
    sections = {}
    for key_node, val_node in root.value:
        name = key_node.value
        line = key_node.start_mark.line + 1
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section {name!r}", line)
        if not isinstance(val_node, yaml.MappingNode):
            raise ConfigError(f"section {name!r} must be a mapping", line)
        defaults = _SECTIONS[name]()
        known = {f.name for f in dataclasses.fields(defaults)}
        aliases = _ALIASES.get(name, {})
        kwargs = {}
        for k_node, _ in val_node.value:
            key = k_node.value
            kline = k_node.start_mark.line + 1
            attr = aliases.get(key, key)
            if attr not in known or key in aliases.values():
                raise ConfigError(f"unknown key {name}.{key}", kline)
            kwargs[attr] = _check_type(values[name][key], getattr(defaults, attr), f"{name}.{key}", kline)
        try:
            sections[name] = type(defaults)(**kwargs)
        except ConfigError as exc:
            raise ConfigError(str(exc), line) from None
    cfg = RunConfig(**sections)
    _validate(cfg, root)
    return cfg


def _validate(cfg, root):
    def line_of(section):
        for k, _ in root.value:
            if k.value == section:
                return k.start_mark.line + 1
        return None

    if cfg.protocol.kind not in ("base_to_new", "fewshot"):
        raise ConfigError(f"protocol.kind must be base_to_new or fewshot, got {cfg.protocol.kind!r}",
                          line_of("protocol"))
    for v in cfg.compare.variants:
        if v not in OBJECTIVES:
            raise ConfigError(f"compare.variants: unknown objective {v!r}", line_of("compare"))
    if cfg.ablate.axis not in ABLATION_AXES:
        raise ConfigError(f"ablate.axis must be one of {ABLATION_AXES}", line_of("ablate"))
    d = cfg.data
    if d.c_total < 2 or d.per_class < 1 or d.test_per_class < 0 or d.noise_sigma < 0:
        raise ConfigError("data: need c_total >= 2, per_class >= 1, test_per_class >= 0, noise_sigma >= 0",
                          line_of("data"))
    m = cfg.model
    if min(m.d_text, m.d_vis, m.m_layers, m.n_layers) < 1 or m.tau <= 0:
        raise ConfigError("model: dimensions must be positive and tau > 0", line_of("model"))


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["train"]["lambda"] = out["train"].pop("lam")
    return out
