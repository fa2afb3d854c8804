"""Checkpoints: one TensorFile per parameter/buffer plus a text index.

Directory layout::

    index.txt       one line per tensor: "<kind> <name> <dtype> <dims> <file>"
    model.cfg       the ModelConfig in config-file syntax
    tensors/*.tnsr
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import config as cfg
from .data.tensorfile import read_tensor, write_tensor
from .errors import ConfigError, DataError
from .model import ADSD, ModelConfig

INDEX = "index.txt"
MODEL_CFG = "model.cfg"


def save_checkpoint(model: ADSD, directory) -> None:
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    lines = []
    entries = [("param", n, p.data) for n, p in model.named_parameters()]
    entries += [("buffer", n, b) for n, b in model.named_buffers()]
    for kind, name, arr in entries:
        fname = f"tensors/{name}.tnsr"
        write_tensor(d / fname, arr)
        dims = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{kind} {name} {arr.dtype.name} {dims} {fname}")
    (d / INDEX).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (d / MODEL_CFG).write_text(cfg.dumps(model.config), encoding="utf-8")


def read_index(directory) -> list[tuple[str, str, str]]:
    path = Path(directory, INDEX)
    if not path.is_file():
        raise DataError(f"{directory} is not a checkpoint (no {INDEX})")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        kind, name, _dtype, _dims, fname = line.split()
        out.append((kind, name, fname))
    return out


def load_model_config(directory) -> ModelConfig:
    return cfg.load_file(ModelConfig, Path(directory, MODEL_CFG))


def load_state(model: ADSD, directory, strict: bool = True,
               skip_prefixes: Iterable[str] = ()) -> list[str]:
    """Copy tensors from ``directory`` into ``model``.

    Raises ConfigError naming the first parameter whose presence or shape does
    not match. Parameters under ``skip_prefixes`` are neither required nor
    loaded. Returns the names that were loaded.
    """
    skip = tuple(skip_prefixes)
    stored = {name: (kind, fname) for kind, name, fname in read_index(directory)}
    targets = {n: p.data for n, p in model.named_parameters()}
    targets.update(dict(model.named_buffers()))
    loaded = []
    for name, arr in targets.items():
        if skip and name.startswith(skip):
            continue
        if name not in stored:
            if strict:
                raise ConfigError(f"checkpoint is missing parameter {name}")
            continue
        value = read_tensor(Path(directory, stored[name][1]))
        if value.shape != arr.shape:
            raise ConfigError(f"parameter {name}: checkpoint shape {value.shape}, model shape {arr.shape}")
        arr[...] = value
        loaded.append(name)
    if strict:
        extra = sorted(n for n in stored if n not in targets and not (skip and n.startswith(skip)))
        if extra:
            raise ConfigError(f"checkpoint has unexpected parameter {extra[0]}")
    return loaded


def load_model(directory, config: Optional[ModelConfig] = None, strict: bool = True) -> ADSD:
    config = config or load_model_config(directory)
    model = ADSD(config)
    load_state(model, directory, strict=strict)
    return model


def checksum(model: ADSD, prefixes: Iterable[str] = ("encoder.", "primary.")) -> str:
    """SHA-256 over the named parameters (and buffers) under ``prefixes``."""
    prefixes = tuple(prefixes)
    h = hashlib.sha256()
    items = [(n, p.data) for n, p in model.named_parameters()] + list(model.named_buffers())
    for name, arr in sorted(items, key=lambda kv: kv[0]):
        if name.startswith(prefixes):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
