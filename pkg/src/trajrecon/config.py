"""Run configuration: one YAML (or JSON) document with a section per stage.

Unknown keys are rejected with their full dotted path so typos fail fast.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .embeddings import ABLATION_GROUPS as ABLATABLE, EmbeddingConfig
from .encoder import EncoderConfig
from .evaluation import DEFAULT_ABLATIONS
from .masking import MaskMode
from .model import ModelConfig
from .synthgen import SparsifyConfig, WorldConfig, default_sparsify_config, default_world_config, world_config_to_dict
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass
class DataConfig:
    split_seed: int = 42
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class EvalConfig:
    top_n: int = 5
    batch_size: int = 512
    ablations: tuple[str, ...] = ("full", "-demographics", "-anchors", "-date")


@dataclass
class RunConfig:
    modality: str = "cdr"
    data: DataConfig = field(default_factory=DataConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    sparsify: SparsifyConfig = field(default_factory=SparsifyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "data": _plain(dataclasses.asdict(self.data)),
            # archetype tables are fixed in code, so they stay out of the file
            "world": {k: v for k, v in _plain(world_config_to_dict(self.world)).items() if k != "archetypes"},
            "sparsify": _plain(dataclasses.asdict(self.sparsify)),
            "embedding": _plain(dataclasses.asdict(self.model.embedding)),
            "encoder": _plain(dataclasses.asdict(self.model.encoder)),
            "masking": {"mode": self.model.mask_mode.value, "ratio": self.training.mask_ratio},
            "model": {"max_len": self.model.max_len, "tie_embeddings": self.model.tie_embeddings,
                      "ablate": list(self.model.ablate)},
            "training": _plain({k: v for k, v in dataclasses.asdict(self.training).items() if k != "mask_ratio"}),
            "eval": _plain(dataclasses.asdict(self.eval)),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# embedding, encoder and mask mode have their own sections
MODEL_KEYS = ("max_len", "tie_embeddings", "ablate")

SECTIONS = ("modality", "data", "world", "sparsify", "embedding", "encoder", "masking", "model", "training", "eval")


def _build(cls, raw: Any, path: str, defaults=None, convert=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            raise ConfigError(f"{path}.{k}: unknown key")
    base = defaults if defaults is not None else cls()
    values = {}
    for k, v in raw.items():
        current = getattr(base, k)
        if isinstance(current, tuple) and isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        if convert and k in convert:
            v = convert[k](v)
        values[k] = v
    try:
        return dataclasses.replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    for k in raw:
        if k not in SECTIONS:
            raise ConfigError(f"{k}: unknown section")
    modality = raw.get("modality", "cdr")
    if modality not in ("cdr", "gps"):
        raise ConfigError(f"modality: must be 'cdr' or 'gps', got {modality!r}")
    world_raw = dict(raw.get("world") or {})
    if "archetypes" in world_raw:
        raise ConfigError("world.archetypes: archetype tables are not configurable from file")
    world = _build(WorldConfig, world_raw, "world", default_world_config(modality))
    if world.modality != modality:
        raise ConfigError(f"world.modality: {world.modality!r} contradicts modality {modality!r}")
    try:
        world.validate()
    except ValueError as exc:
        raise ConfigError(f"world.{exc}") from exc
    sparsify = _build(SparsifyConfig, raw.get("sparsify"), "sparsify", default_sparsify_config(modality))
    try:
        sparsify.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    embedding = _build(EmbeddingConfig, raw.get("embedding"), "embedding")
    encoder = _build(EncoderConfig, raw.get("encoder"), "encoder")
    masking = dict(raw.get("masking") or {})
    for k in masking:
        if k not in ("mode", "ratio"):
            raise ConfigError(f"masking.{k}: unknown key")
    try:
        mode = MaskMode(masking.get("mode", "zero"))
    except ValueError as exc:
        raise ConfigError(f"masking.mode: {exc}") from exc
    default_len = 128 if modality == "gps" else 64
    model_base = ModelConfig(embedding=embedding, encoder=encoder, mask_mode=mode, max_len=default_len)
    model_raw = dict(raw.get("model") or {})
    for k in model_raw:
        if k not in MODEL_KEYS:
            raise ConfigError(f"model.{k}: unknown key")
    model = _build(ModelConfig, model_raw, "model", model_base)
    for name in model.ablate:
        if name not in ABLATABLE:
            raise ConfigError(f"model.ablate: unknown feature group {name!r}")
    training = _build(TrainConfig, raw.get("training"), "training")
    if "ratio" in masking:
        try:
            training = dataclasses.replace(training, mask_ratio=float(masking["ratio"]))
        except ValueError as exc:
            raise ConfigError(f"masking.ratio: {exc}") from exc
    data = _build(DataConfig, raw.get("data"), "data")
    if len(data.split) != 3 or abs(sum(data.split) - 1.0) > 1e-9 or min(data.split) < 0:
        raise ConfigError("data.split: need three non-negative fractions summing to 1")
    ev = _build(EvalConfig, raw.get("eval"), "eval")
    if ev.top_n < 1:
        raise ConfigError("eval.top_n: must be >= 1")
    known = [name for name, _ in DEFAULT_ABLATIONS]
    for name in ev.ablations:
        if name not in known:
            raise ConfigError(f"eval.ablations: unknown cell {name!r}, expected one of {known}")
    return RunConfig(modality, data, world, sparsify, model, training, ev)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    """``--seed`` overrides every stochastic stage at once."""
    if seed is None:
        return cfg
    return dataclasses.replace(
        cfg,
        world=dataclasses.replace(cfg.world, seed=seed),
        training=dataclasses.replace(cfg.training, seed=seed),
        data=dataclasses.replace(cfg.data, split_seed=seed),
    )
