"""Checkpoint files.

Layout::

    FSMN1
    key=value            (config record, one per line)
    ...
                         (blank line ends the record)
    <tensor name>
    <rows> <cols>
    <rows*cols little-endian float64>
    ...

Model config keys are prefixed ``model.``; anything else (optimizer and
schedule state, epoch counters) is carried through verbatim as strings.
Optimizer velocity buffers are stored as tensors named ``velocity.<name>``.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from .model import ModelConfig, check_compatible

MAGIC = "FSMN1"
VELOCITY_PREFIX = "velocity."


class CheckpointError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def model_record(config: ModelConfig) -> dict:
    return {
        "model.vocab_size": config.vocab_size,
        "model.context_window": config.context_window,
        "model.embed_dim": config.embed_dim,
        "model.hidden_dims": config.hidden_dims,
        "model.memory_at": config.memory_at,
        "model.memory_order": config.memory_order,
        "model.activation": config.activation,
    }


def _int_list(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def config_from_record(record: dict) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=int(record["model.vocab_size"]),
            context_window=int(record["model.context_window"]),
            embed_dim=int(record["model.embed_dim"]),
            hidden_dims=_int_list(record["model.hidden_dims"]),
            memory_at=_int_list(record["model.memory_at"]),
            memory_order=int(record["model.memory_order"]),
            activation=record["model.activation"],
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint record lacks {exc.args[0]}") from None


def _write_tensor(fh, name: str, value: np.ndarray):
    mat = value.reshape(1, -1) if value.ndim == 1 else value
    rows, cols = mat.shape
    fh.write(f"{name}\n{rows} {cols}\n".encode("ascii"))
    fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def dumps(params: dict, config: ModelConfig, extra: dict | None = None, velocity: dict | None = None) -> bytes:
    check_compatible(params, config)
    record = model_record(config)
    for key, value in (extra or {}).items():
        if "\n" in _fmt(value) or "=" in key:
            raise CheckpointError(f"record entry {key!r} cannot be serialized")
        record[key] = value
    fh = io.BytesIO()
    fh.write(f"{MAGIC}\n".encode("ascii"))
    for key, value in record.items():
        fh.write(f"{key}={_fmt(value)}\n".encode("utf-8"))
    fh.write(b"\n")
    for name, value in params.items():
        _write_tensor(fh, name, value)
    for name, value in (velocity or {}).items():
        _write_tensor(fh, VELOCITY_PREFIX + name, value)
    return fh.getvalue()


def save(path, params: dict, config: ModelConfig, extra: dict | None = None, velocity: dict | None = None):
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params, config, extra, velocity))
    os.replace(tmp, path)


def loads(blob: bytes):
    """Return ``(params, config, record, velocity)``; velocity is ``None`` if absent."""
    fh = io.BytesIO(blob)
    if fh.readline() != f"{MAGIC}\n".encode("ascii"):
        raise CheckpointError(f"not an {MAGIC} checkpoint")
    record = {}
    while True:
        line = fh.readline()
        if not line:
            raise CheckpointError("truncated config record")
        line = line.decode("utf-8").rstrip("\n")
        if line == "":
            break
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed record line {line!r}")
        record[key] = value
    config = config_from_record(record)
    shapes = config.shapes()
    params, velocity = {}, {}
    while True:
        name = fh.readline()
        if not name:
            break
        name = name.decode("ascii").rstrip("\n")
        try:
            rows, cols = (int(x) for x in fh.readline().split())
        except ValueError:
            raise CheckpointError(f"bad shape line for tensor {name!r}") from None
        raw = fh.read(rows * cols * 8)
        if len(raw) != rows * cols * 8:
            raise CheckpointError(f"truncated data for tensor {name!r}")
        value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)
        target = velocity if name.startswith(VELOCITY_PREFIX) else params
        base = name[len(VELOCITY_PREFIX) :] if target is velocity else name
        if base not in shapes:
            raise CheckpointError(f"unexpected tensor {name!r}")
        target[base] = value.reshape(shapes[base])
    params = {k: params[k] for k in shapes if k in params}
    try:
        check_compatible(params, config)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    if velocity:
        velocity = {k: velocity[k] for k in shapes if k in velocity}
        if list(velocity) != list(shapes):
            raise CheckpointError("checkpoint has an incomplete set of velocity buffers")
    return params, config, record, (velocity or None)


def load(path):
    return loads(Path(path).read_bytes())
