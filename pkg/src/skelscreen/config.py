"""Pipeline configuration: an INI file with sections, overridable per key.

Example::

    [localize]
    border_low_hu = 430
    border_high_hu = 580

    [features]
    config = Bac, Spectral(Bac)

Overrides use ``section.key=value`` strings (the CLI ``--set`` flag).
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .bac import SpectralParams, parse_feature_config
from .errors import ConfigError
from .gbdt import TrainParams
from .rules import RuleThresholds


@dataclass(frozen=True)
class PipelineConfig:
    border_low_hu: int = 430
    border_high_hu: int = 580
    min_bone_voxels: int = 10
    denoise: bool = True
    spectral: SpectralParams = field(default_factory=SpectralParams)
    gbdt: TrainParams = field(default_factory=TrainParams)
    feature_config: tuple = ("Bac", "Spectral(Bac)")
    rules: RuleThresholds = field(default_factory=RuleThresholds)
    taxonomy_path: str = ""
    model_path: str = ""

    def __post_init__(self):
        if not 0 < self.border_low_hu <= self.border_high_hu:
            raise ConfigError("need 0 < border_low_hu <= border_high_hu")
        if self.min_bone_voxels < 1:
            raise ConfigError("min_bone_voxels must be >= 1")
        r = self.rules
        if not (r.volume_delta > 0 and r.min_tl_bodies > 0 and r.rib_delta > 0):
            raise ConfigError("rule thresholds must be positive")
        if not self.feature_config:
            raise ConfigError("feature_config must not be empty")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# (section, key) -> (attribute path, parser)
_KEYS = {
    ("localize", "border_low_hu"): ("border_low_hu", int),
    ("localize", "border_high_hu"): ("border_high_hu", int),
    ("localize", "min_bone_voxels"): ("min_bone_voxels", int),
    ("localize", "denoise"): ("denoise", _bool),
    ("spectral", "k_neighbors"): ("spectral.k_neighbors", int),
    ("spectral", "embed_dim"): ("spectral.embed_dim", int),
    ("gbdt", "n_rounds"): ("gbdt.n_rounds", int),
    ("gbdt", "learning_rate"): ("gbdt.learning_rate", float),
    ("gbdt", "max_depth"): ("gbdt.max_depth", int),
    ("features", "config"): ("feature_config", parse_feature_config),
    ("rules", "volume_delta"): ("rules.volume_delta", float),
    ("rules", "min_tl_bodies"): ("rules.min_tl_bodies", int),
    ("rules", "rib_delta"): ("rules.rib_delta", float),
    ("paths", "taxonomy"): ("taxonomy_path", str),
    ("paths", "model"): ("model_path", str),
}


def _apply(cfg: PipelineConfig, section: str, key: str, raw: str) -> PipelineConfig:
    try:
        attr, parse = _KEYS[(section, key)]
    except KeyError:
        raise ConfigError(f"unknown config key {section}.{key}") from None
    try:
        value = parse(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    if "." in attr:
        outer, inner = attr.split(".")
        try:
            sub = dataclasses.replace(getattr(cfg, outer), **{inner: value})
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
        return dataclasses.replace(cfg, **{outer: sub})
    return dataclasses.replace(cfg, **{attr: value})


def load_config(path=None, overrides=()) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg = _apply(cfg, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        name, raw = item.split("=", 1)
        section, key = name.strip().split(".", 1)
        cfg = _apply(cfg, section, key, raw.strip())
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for (section, key), (attr, _) in _KEYS.items():
        obj = cfg
        for part in attr.split("."):
            obj = getattr(obj, part)
        if isinstance(obj, tuple):
            obj = ", ".join(obj)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(obj))
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser.items(section)]
        lines.append("")
    return "\n".join(lines)
