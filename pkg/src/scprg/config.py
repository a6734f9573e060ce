"""Run configuration: flat key=value files with CLI and environment overrides.

Shipped defaults follow the reference hyperparameters where one exists:
dropout 0.1, batch size 8, Adam at 3e-5, empty-class weight ratio 10:1,
focal gamma 2, boundary loss weight 0.1, 50 epochs.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError

DECODE_MODES = ("per-span-argmax", "per-role-top1")
BOUNDARY_POOL_MODES = ("full", "context", "roles", "none")
ENCODER_MODES = ("toy", "import")
WINDOW_ATTENTION_MODES = ("average", "first")


@dataclass
class RunConfig:
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    data_format: str = "uniform"

    encoder_mode: str = "toy"
    toy_layers: int = 2
    toy_heads: int = 4
    toy_dim: int = 64
    toy_ff_dim: int = 128
    max_window: int = 512
    window_stride: int = 128
    window_attention: str = "average"
    freeze_encoder: bool = False

    max_span_len: int = 8
    length_embed_dim: int = 32
    ase: bool = True
    ase_punctuation: str = ",;:.?!"
    stcp: bool = True
    rlig: bool = True
    boundary_pool: str = "full"
    decode: str = "per-span-argmax"

    lr: float = 3e-5
    batch: int = 8
    epochs: int = 50
    dropout: float = 0.1
    alpha_none: float = 10.0
    alpha_role: float = 1.0
    gamma: float = 2.0
    boundary_lambda: float = 0.1

    seed: int = 7
    out_dir: str = "runs"

    def validate(self) -> None:
        if self.decode not in DECODE_MODES:
            raise ConfigError(f"decode must be one of {DECODE_MODES}, got {self.decode!r}")
        if self.boundary_pool not in BOUNDARY_POOL_MODES:
            raise ConfigError(f"boundary_pool must be one of {BOUNDARY_POOL_MODES}, got {self.boundary_pool!r}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder_mode must be one of {ENCODER_MODES}, got {self.encoder_mode!r}")
        if self.window_attention not in WINDOW_ATTENTION_MODES:
            raise ConfigError(f"window_attention must be one of {WINDOW_ATTENTION_MODES}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.boundary_lambda < 0:
            raise ConfigError(f"boundary_lambda must be >= 0, got {self.boundary_lambda}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.epochs < 1:
            raise ConfigError("batch and epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_span_len < 1:
            raise ConfigError("max_span_len must be >= 1")
        if self.alpha_none <= 0 or self.alpha_role <= 0:
            raise ConfigError("class weights must be positive")

    def punctuation(self) -> frozenset[str]:
        return frozenset(self.ase_punctuation)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        cfg = cls()
        for f in fields(cls):
            if f.name in obj:
                setattr(cfg, f.name, _coerce(f.name, obj[f.name], getattr(cfg, f.name)))
        cfg.validate()
        return cfg


def _coerce(key: str, raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as a boolean")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {type(default).__name__}") from exc
    return str(raw)


def parse_config_file(path: str | Path) -> dict:
    """key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    known = {f.name for f in fields(RunConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- file <- overrides <- SCPRG_SEED environment variable."""
    merged: dict = {}
    if path is not None:
        merged.update(parse_config_file(path))
    if overrides:
        known = {f.name for f in fields(RunConfig)}
        for key in overrides:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        merged.update(overrides)
    env_seed = os.environ.get("SCPRG_SEED")
    if env_seed is not None:
        merged["seed"] = env_seed
    return RunConfig.from_dict(merged)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")
