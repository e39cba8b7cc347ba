"""Run configuration: dataclasses, YAML round-trip, presets, stable digest.

The digest is a SHA-256 over the canonical (sorted-key) JSON serialization,
so identical configurations hash identically on any machine.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .data import DatasetSpec
from .errors import ConfigError
from .fusion import FUSION_VARIANTS
from .model import Components, ModelConfig


@dataclass
class OptimConfig:
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunConfig:
    seed: int = 7
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    components: Components = field(default_factory=Components)
    fusion_variant: str = "circulant"
    batch_size: int = 32
    steps: int = 2000
    threshold_policy: str = "eer"  # "eer" | "fixed"
    fixed_threshold: float = 0.5
    caption_file: str | None = None

    def validate(self) -> None:
        self.dataset.validate()
        self.components.validate()
        if self.fusion_variant not in FUSION_VARIANTS:
            raise ConfigError(
                f"fusion_variant must be one of {FUSION_VARIANTS}, got {self.fusion_variant!r}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.threshold_policy not in ("eer", "fixed"):
            raise ConfigError(f"unknown threshold_policy {self.threshold_policy!r}")
        if self.model.dim % self.model.heads != 0:
            raise ConfigError("model.heads must divide model.dim")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        raw = dict(raw)

        def build(cls, key):
            sub = raw.pop(key, None)
            if sub is None:
                return cls()
            known = {f.name for f in dataclasses.fields(cls)}
            bad = set(sub) - known
            if bad:
                raise ConfigError(f"unknown {key} option(s): {sorted(bad)}")
            if cls is DatasetSpec and "domains" in sub:
                sub["domains"] = tuple(sub["domains"])
            return cls(**sub)

        cfg = RunConfig(
            dataset=build(DatasetSpec, "dataset"),
            model=build(ModelConfig, "model"),
            optim=build(OptimConfig, "optim"),
            components=build(Components, "components"),
        )
        known = {f.name for f in dataclasses.fields(RunConfig)}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config option {key!r}")
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def toy_config() -> RunConfig:
    """Desk-scale preset: small feature widths and a short schedule so the
    full leave-one-domain-out protocol finishes in well under ten minutes.
    The stub encoders start from random weights, so the learning rate is far
    above the fine-tuning rate used with pretrained backbones."""
    cfg = RunConfig()
    cfg.model = ModelConfig(dim=64, fusion_n=16)
    cfg.optim = OptimConfig(lr=1e-3)
    cfg.steps = 300
    return cfg


def paper_config() -> RunConfig:
    """Full-width preset mirroring the reference hyperparameters (dim 512,
    8 queries, depth 1, lr 1e-6, batch 32). Slow on a single core and the low
    learning rate assumes pretrained encoders; shipped for completeness."""
    return RunConfig()


PRESETS = {"toy": toy_config, "paper": paper_config}


def load_config(path: str | None = None, preset: str = "toy",
                overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig from an optional YAML file over a preset base.

    ``overrides`` maps dotted paths (e.g. "optim.lr") to values applied last.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    base = PRESETS[preset]().to_dict()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        _deep_update(base, loaded)
    for dotted, value in (overrides or {}).items():
        _set_dotted(base, dotted, value)
    return RunConfig.from_dict(base)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def _deep_update(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _set_dotted(base: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = base
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"config path {dotted!r} does not exist")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"config path {dotted!r} does not exist")
    node[parts[-1]] = yaml.safe_load(value) if isinstance(value, str) else value
