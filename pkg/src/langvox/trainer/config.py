"""Flat ``key = value`` training configuration with dotted, namespaced keys."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from ..textside import PROMPT_MODES

STAGES = ("pretrain", "finetune")
SCHEDULES = ("exponential", "polynomial", "cosine")
TEXT_SOURCES = ("mock", "file")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    seed: int = 0
    epochs: int = 2
    batch_size: int = 32
    max_steps: int = 0                 # 0: run every epoch
    optimizer_lr: float = 0.01
    optimizer_momentum: float = 0.9
    optimizer_weight_decay: float = 0.0
    schedule_kind: str = "exponential"
    schedule_factor: float = 0.99
    schedule_power: float = 0.9
    schedule_warmup_steps: int = 0
    loss_weights_encoder: float = 1.0
    loss_weights_decoder: float = 1.0
    loss_weights_depth: float = 1.0
    loss_weights_aux: float = 1.0
    tau: float = 0.4
    aux_temperature: float = 0.07
    aux_radius: float = 0.0            # 0: use the voxel size
    aux_pretrain: bool = False
    prompt_mode: str = "handcrafted"
    prompt_context_length: int = 8
    text_source: str = "mock"
    text_path: str = ""
    text_seed: int = 0
    model_dim: int = 32
    model_dim_3d: int = 16
    model_dec_dim: int = 32
    model_heads: int = 1
    model_enc3d_hidden: int = 32
    model_enc3d_rounds: int = 2
    model_attention_pool: bool = True
    finetune_reinit_tqm: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.stage in STAGES, f"stage must be one of {STAGES}"),
            (self.epochs > 0, "epochs must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.max_steps >= 0, "max_steps must be non-negative"),
            (self.optimizer_lr > 0, "optimizer.lr must be positive"),
            (self.schedule_kind in SCHEDULES, f"schedule.kind must be one of {SCHEDULES}"),
            (self.prompt_mode in PROMPT_MODES, f"prompt.mode must be one of {PROMPT_MODES}"),
            (self.text_source in TEXT_SOURCES, f"text.source must be one of {TEXT_SOURCES}"),
            (self.tau > 0 and self.aux_temperature > 0, "temperatures must be positive"),
            (self.aux_radius >= 0, "aux.radius must be non-negative"),
            (self.model_dim % self.model_heads == 0, "model.dim must be divisible by model.heads"),
            (self.text_source != "file" or bool(self.text_path), "text.source=file needs text.path"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    # -- dotted-key mapping ----------------------------------------------------------
    @staticmethod
    def keys() -> Dict[str, str]:
        """Dotted config key -> field name."""
        out = {}
        for f in fields(TrainConfig):
            dotted = f.name
            for prefix in ("optimizer", "schedule", "loss_weights", "aux", "prompt", "text", "model", "finetune"):
                if f.name.startswith(prefix + "_"):
                    dotted = prefix + "." + f.name[len(prefix) + 1:]
                    break
            out[dotted] = f.name
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        keys = cls.keys()
        types = {f.name: f.type for f in fields(cls)}
        current = dataclasses.asdict(base) if base is not None else {}
        for key, raw in values.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {key!r}")
            name = keys[key]
            current[name] = _coerce(key, raw, types[name])
        try:
            return cls(**current)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_mapping(self) -> Dict[str, str]:
        inverse = {v: k for k, v in self.keys().items()}
        return {inverse[k]: _render(v) for k, v in dataclasses.asdict(self).items()}

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_mapping().items())

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key: str, raw, kind):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in (bool, "bool"):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return text


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_config(path=None, overrides: Iterable[str] = (), **defaults) -> TrainConfig:
    """File values, then ``key=value`` overrides, on top of ``defaults``."""
    values: Dict[str, str] = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--override"))
    base = TrainConfig(**defaults) if defaults else None
    return TrainConfig.from_mapping(values, base)
