"""Portable weights-interchange format and checkpoint helpers.

A weights file is a pair: ``<stem>.bin`` holding the raw little-endian array
data back to back, and ``<stem>.json`` holding the layout manifest::

    {"format": "litevsr-weights", "version": 1, "byte_order": "little",
     "entries": [{"name": ..., "dtype": "float32", "shape": [...],
                  "offset": 0, "nbytes": 123}, ...]}

Entries appear in the blob in manifest order. Any writer that follows this
layout produces bit-identical files, so external converters can import real
checkpoints without this package.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .core import DataError

FORMAT_NAME = "litevsr-weights"
FORMAT_VERSION = 1


def save_arrays(arrays: "OrderedDict[str, np.ndarray] | dict[str, np.ndarray]", stem: str | Path) -> None:
    """Write named arrays to ``<stem>.bin`` + ``<stem>.json``."""
    stem = Path(stem)
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "byte_order": "little",
        "entries": entries,
    }
    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(stem.with_suffix(".bin"), "wb") as f:
        for raw in blobs:
            f.write(raw)
    with open(stem.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)


def load_arrays(stem: str | Path) -> "OrderedDict[str, np.ndarray]":
    """Read a weights file pair back into an ordered name -> array table."""
    stem = Path(stem)
    manifest_path = stem.with_suffix(".json")
    blob_path = stem.with_suffix(".bin")
    if not manifest_path.is_file() or not blob_path.is_file():
        raise DataError(f"weights file not found: {stem}.bin/.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_NAME:
        raise DataError(f"{manifest_path} is not a {FORMAT_NAME} manifest")
    blob = blob_path.read_bytes()
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for e in manifest["entries"]:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(e["shape"])
        out[e["name"]] = arr.astype(np.dtype(e["dtype"]))
    return out


def save_module(module: torch.nn.Module, stem: str | Path) -> None:
    arrays = OrderedDict((k, v.detach().cpu().numpy()) for k, v in module.state_dict().items())
    save_arrays(arrays, stem)


def load_module(module: torch.nn.Module, stem: str | Path) -> None:
    arrays = load_arrays(stem)
    state = module.state_dict()
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise DataError(f"weights mismatch for {stem}: missing={sorted(missing)} extra={sorted(extra)}")
    with torch.no_grad():
        for name, tensor in state.items():
            src = torch.from_numpy(np.ascontiguousarray(arrays[name]))
            if tuple(src.shape) != tuple(tensor.shape):
                raise DataError(f"shape mismatch for {name}: file {tuple(src.shape)} vs model {tuple(tensor.shape)}")
            tensor.copy_(src.to(tensor.dtype))


def parameter_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over all parameter bytes in state-dict order; exact-equality probe."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        if not isinstance(tensor, torch.Tensor):
            continue
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_optimizer(optimizer: torch.optim.Optimizer, param_names: list[str], stem: str | Path) -> None:
    """Serialize Adam moments in the interchange format, keyed by parameter name."""
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if len(params) != len(param_names):
        raise DataError("param_names must match optimizer parameter count")
    for name, p in zip(param_names, params):
        state = optimizer.state.get(p, {})
        if not state:
            continue
        arrays[f"{name}.step"] = np.asarray(
            state["step"].item() if isinstance(state["step"], torch.Tensor) else state["step"],
            dtype=np.float64,
        )
        arrays[f"{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        arrays[f"{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    save_arrays(arrays, stem)


def load_optimizer(optimizer: torch.optim.Optimizer, param_names: list[str], stem: str | Path) -> None:
    arrays = load_arrays(stem)
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if len(params) != len(param_names):
        raise DataError("param_names must match optimizer parameter count")
    for name, p in zip(param_names, params):
        key = f"{name}.step"
        if key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(arrays[key])),
            "exp_avg": torch.from_numpy(np.ascontiguousarray(arrays[f"{name}.exp_avg"])).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(arrays[f"{name}.exp_avg_sq"])).to(p.dtype),
        }
