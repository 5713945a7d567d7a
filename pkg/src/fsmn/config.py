"""Flat ``key = value`` config files.

``#`` starts a comment, blank lines are ignored and unknown keys are errors.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .optim import OptimConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _int_tuple(value: str) -> tuple:
    value = value.strip()
    if value.lower() in ("", "none"):
        return ()
    return tuple(int(v) for v in value.split(","))


def _bool(value: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


PATH_KEYS = ("train", "valid", "test", "checkpoint_dir")


@dataclass(frozen=True)
class RunConfig:
    train: Path
    valid: Path
    checkpoint_dir: Path
    test: Path | None = None
    context_window: int = 2
    embed_dim: int = 200
    hidden_dims: tuple = (400, 400)
    memory_at: tuple = (1,)
    memory_order: int = 20
    lr_weights: float = 0.4
    lr_taps: float = 0.002
    momentum: float = 0.0
    weight_decay: float = 0.0
    exempt_taps: bool = False
    batch_size: int = 200
    max_epochs: int = 100
    seed: int = 1
    log_interval: int = 0

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size, self.context_window, self.embed_dim, self.hidden_dims, self.memory_at, self.memory_order
        )

    def optim_config(self) -> OptimConfig:
        return OptimConfig(self.lr_weights, self.lr_taps, self.momentum, self.weight_decay, self.exempt_taps)

    def validate(self):
        """Check paths and hyperparameters before any training starts."""
        for key in ("train", "valid", "test"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key}: cannot read {path}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.log_interval < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, log_interval >= 0")
        try:
            self.model_config(vocab_size=4)
            self.optim_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        ckpt = Path(self.checkpoint_dir)
        try:
            ckpt.mkdir(parents=True, exist_ok=True)
            probe = ckpt / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"checkpoint_dir: {exc}") from None


_CONVERTERS = {
    "context_window": int,
    "embed_dim": int,
    "hidden_dims": _int_tuple,
    "memory_at": _int_tuple,
    "memory_order": int,
    "lr_weights": float,
    "lr_taps": float,
    "momentum": float,
    "weight_decay": float,
    "exempt_taps": _bool,
    "batch_size": int,
    "max_epochs": int,
    "seed": int,
    "log_interval": int,
}


def run_config_from_dict(values: dict, base_dir: Path = Path(".")) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in ("train", "valid", "checkpoint_dir") if k not in values]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs = {}
    for key, raw in values.items():
        if key in PATH_KEYS:
            path = Path(raw)
            kwargs[key] = path if path.is_absolute() else base_dir / path
            continue
        try:
            kwargs[key] = _CONVERTERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return run_config_from_dict(parse_kv(text, str(path)), path.parent)


@dataclass(frozen=True)
class GradCheckConfig:
    vocab_size: int = 7
    context_window: int = 2
    embed_dim: int = 3
    hidden_dims: tuple = (4, 4)
    memory_at: tuple = (1,)
    memory_order: int = 2
    sentences: int = 2
    min_length: int = 3
    max_length: int = 6
    seed: int = 0
    step: float = 1e-5
    threshold: float = 1e-4

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            self.vocab_size, self.context_window, self.embed_dim, self.hidden_dims, self.memory_at, self.memory_order
        )


_GC_CONVERTERS = {
    "vocab_size": int,
    "context_window": int,
    "embed_dim": int,
    "hidden_dims": _int_tuple,
    "memory_at": _int_tuple,
    "memory_order": int,
    "sentences": int,
    "min_length": int,
    "max_length": int,
    "seed": int,
    "step": float,
    "threshold": float,
}


def load_gradcheck_config(path=None) -> GradCheckConfig:
    if path is None:
        return GradCheckConfig()
    path = Path(path)
    try:
        values = parse_kv(path.read_text(encoding="utf-8"), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    unknown = sorted(set(values) - set(_GC_CONVERTERS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = GradCheckConfig(**{k: _GC_CONVERTERS[k](v) for k, v in values.items()})
        cfg.model_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.model_config().num_parameters() > 10_000:
        raise ConfigError("gradient check is limited to models with at most 10^4 parameters")
    return cfg
