"""Flat key-value run configuration.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Values resolve in the order defaults < file < command line, and every key is
checked against :data:`SCHEMA`, so a misspelt key is an error rather than a
silently ignored setting.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from bundlenet.data.synthetic import SyntheticSpec
from bundlenet.errors import ConfigError
from bundlenet.model import VARIANTS, ModelConfig
from bundlenet.training import SCHEDULES, TrainConfig

ABLATION_AXES = ("rel", "mtl", "mbt")


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def parse_int_list(text: str) -> tuple:
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("empty list")
    out = tuple(int(p) for p in parts)
    if any(k < 1 for k in out):
        raise ValueError("list entries must be >= 1")
    return out


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _optional_path(text):
    return None if text in (None, "", "none") else str(text)


def _subset(text):
    if text == "all":
        return "all"
    combos = []
    for combo in str(text).replace(" ", "").split(","):
        axes = tuple(sorted(a for a in combo.split("+") if a and a != "none"))
        bad = [a for a in axes if a not in ABLATION_AXES]
        if bad:
            raise ValueError(f"unknown ablation axis {bad[0]!r}; axes are {ABLATION_AXES}")
        combos.append("+".join(axes) or "none")
    return ",".join(combos)


_PARSERS = {bool: parse_bool, int: int, float: float, str: str}


def _from_dataclass(cls, prefix="", skip=()):
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        out[prefix + f.name] = (_PARSERS[type(f.default)], f.default)
    return out


SCHEMA: dict = {
    "data": (_optional_path, None),
    "split": (_optional_path, None),
    "checkpoint": (_optional_path, None),
    "out": (str, "out"),
    "k": (parse_int_list, (5,)),
    "seed": (int, 0),
    "n_negatives": (int, 99),
    "val_fraction": (float, 0.1),
    "ablate.subset": (_subset, "all"),
    **_from_dataclass(ModelConfig),
    **_from_dataclass(TrainConfig, skip=("seed",)),
    **_from_dataclass(SyntheticSpec, prefix="synthetic.", skip=("seed",)),
}
SCHEMA["variant"] = (_choice(VARIANTS), ModelConfig.variant)
SCHEMA["schedule"] = (_choice(SCHEDULES), TrainConfig.schedule)


def defaults() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def coerce(key: str, value, origin: str = "command line"):
    if key not in SCHEMA:
        raise ConfigError(f"{origin}: unknown config key {key!r}")
    parser, _ = SCHEMA[key]
    if not isinstance(value, str):
        return value
    try:
        return parser(value.strip())
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key!r}: {exc}") from None


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = coerce(key, value, f"{path}:{lineno}")
    return out


def resolve(file_path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, the optional file and command-line ``overrides``."""
    cfg = defaults()
    if file_path is not None:
        cfg.update(read_config_file(file_path))
    for key, value in (overrides or {}).items():
        cfg[key] = coerce(key, value)
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(**{f.name: cfg[f.name] for f in fields(ModelConfig)})


def train_config(cfg: dict) -> TrainConfig:
    kw = {f.name: cfg[f.name] for f in fields(TrainConfig) if f.name != "seed"}
    return TrainConfig(seed=cfg["seed"], **kw)


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    kw = {f.name: cfg["synthetic." + f.name] for f in fields(SyntheticSpec) if f.name != "seed"}
    return SyntheticSpec(seed=cfg["seed"], **kw)


def format_config(cfg: dict) -> str:
    """The resolved config as a loadable file, keys sorted."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
