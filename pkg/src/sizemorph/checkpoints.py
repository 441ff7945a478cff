"""Single-file checkpoint container.

Layout::

    magic (8 bytes) | version (<I) | header length (<Q) | JSON header | array payloads

The header records the run config, the architecture hash, the step, optimizer
scalars, rng state and, for every named array, its dtype, shape and offset into
the payload section. Arrays are stored little-endian (float32 parameters, int64
integer buffers).
"""

from __future__ import annotations

import base64
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError

MAGIC = b"SZMCKPT\x00"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<IQ")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    """Everything needed to restore a training run or run inference."""
    kind: str  # "classifier" or "gan"
    config: dict
    architecture: str
    step: int = 0
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    optimizers: dict[str, dict] = field(default_factory=dict)
    rng_state: Optional[torch.Tensor] = None
    metrics: dict[str, Any] = field(default_factory=dict)

    def __str__(self):
        return f"{self.kind} checkpoint @ step {self.step} (arch {self.architecture}, {len(self.tensors)} arrays)"

    def add_module(self, prefix: str, module: nn.Module):
        for name, tensor in module.state_dict().items():
            self.tensors[f"{prefix}.{name}"] = tensor.detach().cpu().clone()

    def load_module(self, prefix: str, module: nn.Module):
        """Load the ``prefix.*`` arrays into ``module`` (strict)."""
        marker = f"{prefix}."
        state = {k[len(marker):]: v for k, v in self.tensors.items() if k.startswith(marker)}
        if not state:
            raise CheckpointError(f"checkpoint has no parameters for {prefix}")
        try:
            module.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"cannot load {prefix}: {e}") from e

    def has_module(self, prefix: str) -> bool:
        return any(k.startswith(f"{prefix}.") for k in self.tensors)

    def add_optimizer(self, name: str, optimizer: torch.optim.Optimizer):
        self.optimizers[name] = optimizer.state_dict()

    def load_optimizer(self, name: str, optimizer: torch.optim.Optimizer):
        if name not in self.optimizers:
            raise CheckpointError(f"checkpoint has no optimizer state for {name}")
        try:
            optimizer.load_state_dict(self.optimizers[name])
        except (ValueError, KeyError) as e:
            raise CheckpointError(f"cannot load optimizer {name}: {e}") from e


def _flatten_optimizer(name: str, state_dict: dict, arrays: dict[str, torch.Tensor]) -> dict:
    """Move optimizer tensors into ``arrays``; return the JSON-safe remainder."""
    state = {}
    for index, entry in state_dict["state"].items():
        slot = {}
        for key, value in entry.items():
            if torch.is_tensor(value):
                array_name = f"optimizer.{name}.{index}.{key}"
                arrays[array_name] = value.detach().cpu()
                slot[key] = {"array": array_name}
            else:
                slot[key] = value
        state[str(index)] = slot
    return {"state": state, "param_groups": state_dict["param_groups"]}


def _unflatten_optimizer(payload: dict, arrays: dict[str, torch.Tensor]) -> dict:
    state = {}
    for index, slot in payload["state"].items():
        entry = {}
        for key, value in slot.items():
            entry[key] = arrays.pop(value["array"]) if isinstance(value, dict) and "array" in value else value
        state[int(index)] = entry
    return {"state": state, "param_groups": payload["param_groups"]}


def save_checkpoint(state: Checkpoint, path: Path) -> Path:
    """Write ``state`` to ``path`` (atomically, via a temporary sibling)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = dict(state.tensors)
    optimizers = {name: _flatten_optimizer(name, sd, arrays) for name, sd in state.optimizers.items()}

    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        tensor = arrays[name].detach().cpu().contiguous()
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"cannot store {name} with dtype {tensor.dtype}")
        data = tensor.numpy().astype(_DTYPES[tensor.dtype], copy=False).tobytes()
        entries.append({"name": name, "dtype": _DTYPES[tensor.dtype], "shape": list(tensor.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    header = {
        "kind": state.kind,
        "config": state.config,
        "architecture": state.architecture,
        "step": state.step,
        "optimizers": optimizers,
        "rng_state": base64.b64encode(state.rng_state.numpy().tobytes()).decode("ascii")
        if state.rng_state is not None else None,
        "metrics": state.metrics,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_PREAMBLE.pack(FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Path, expected_architecture: Optional[str] = None) -> Checkpoint:
    """Read a checkpoint.

    Args:
        path: Checkpoint file
        expected_architecture: Refuse the file unless its architecture hash matches

    Returns:
        Checkpoint

    Raises:
        CheckpointError: unreadable, corrupt, wrong version, or architecture mismatch
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a sizemorph checkpoint")
    start = len(MAGIC)
    try:
        version, header_len = _PREAMBLE.unpack_from(raw, start)
    except struct.error as e:
        raise CheckpointError(f"{path} is truncated") from e
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    start += _PREAMBLE.size
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header") from e
    payload = memoryview(raw)[start + header_len:]

    if expected_architecture is not None and header["architecture"] != expected_architecture:
        raise CheckpointError(
            f"{path} was written for architecture {header['architecture']}, "
            f"this configuration is {expected_architecture}"
        )

    arrays = {}
    for entry in header["arrays"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload) or entry["dtype"] not in _TORCH_DTYPES:
            raise CheckpointError(f"{path} is corrupt at array {entry['name']}")
        array = np.frombuffer(payload[entry["offset"]:end], dtype=np.dtype(entry["dtype"]))
        try:
            array = array.reshape(entry["shape"])
        except ValueError as e:
            raise CheckpointError(f"{path} is corrupt at array {entry['name']}") from e
        arrays[entry["name"]] = torch.from_numpy(array.copy()).to(_TORCH_DTYPES[entry["dtype"]])

    optimizers = {name: _unflatten_optimizer(sd, arrays) for name, sd in header["optimizers"].items()}
    rng_state = None
    if header.get("rng_state"):
        rng_state = torch.from_numpy(np.frombuffer(base64.b64decode(header["rng_state"]), dtype=np.uint8).copy())

    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        architecture=header["architecture"],
        step=int(header["step"]),
        tensors=arrays,
        optimizers=optimizers,
        rng_state=rng_state,
        metrics=header.get("metrics", {}),
    )
