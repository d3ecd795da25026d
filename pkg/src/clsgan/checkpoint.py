"""Deterministic checkpoint container.

A checkpoint is a stored (uncompressed) zip with fixed entry metadata,
so identical training state always produces byte-identical files:

    manifest.json        format version, config text and hash, metadata,
                         tensor dtypes/shapes (sorted keys)
    tensors/<name>.bin   raw little-endian buffers, entries sorted by name

Tensors are addressed by flat dotted names; nesting (module state dicts,
optimizer slots) is the caller's concern.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

_TORCH_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "float16": torch.float16,
    "int64": torch.int64,
    "int32": torch.int32,
    "int16": torch.int16,
    "int8": torch.int8,
    "uint8": torch.uint8,
    "bool": torch.bool,
}
_NUMPY_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "float16": "<f2",
    "int64": "<i8",
    "int32": "<i4",
    "int16": "<i2",
    "int8": "i1",
    "uint8": "u1",
    "bool": "?",
}


class CheckpointError(ValueError):
    """Raised for malformed or inconsistent checkpoint files."""


@dataclass
class CheckpointData:
    format_version: int
    config_text: str
    metadata: dict[str, Any]
    tensors: dict[str, torch.Tensor]


def _dtype_name(dtype: torch.dtype) -> str:
    for name, d in _TORCH_DTYPES.items():
        if d == dtype:
            return name
    raise CheckpointError(f"unsupported tensor dtype {dtype}")


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    name = _dtype_name(tensor.dtype)
    arr = tensor.detach().cpu().contiguous().numpy()
    return arr.astype(_NUMPY_DTYPES[name], copy=False).tobytes()


def _zip_entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.create_system = 0
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(
    path: str | Path,
    config_text: str,
    tensors: Mapping[str, torch.Tensor],
    metadata: Mapping[str, Any] | None = None,
) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "config": config_text,
        "metadata": dict(metadata or {}),
        "tensors": {
            name: {
                "dtype": _dtype_name(t.dtype),
                "shape": list(t.shape),
            }
            for name, t in tensors.items()
        },
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, indent=1).encode()

    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(_zip_entry(MANIFEST_NAME), manifest_bytes)
        for name in sorted(tensors):
            zf.writestr(
                _zip_entry(f"tensors/{name}.bin"), _tensor_bytes(tensors[name])
            )
    Path(path).write_bytes(buffer.getvalue())


def load_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, OSError) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read(MANIFEST_NAME))
        except KeyError:
            raise CheckpointError(f"{path} has no {MANIFEST_NAME}") from None
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad manifest: {exc}") from exc

        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {version!r}"
            )
        config_text = manifest["config"]
        digest = hashlib.sha256(config_text.encode()).hexdigest()
        if digest != manifest.get("config_sha256"):
            raise CheckpointError(f"{path}: config hash mismatch")

        tensors: dict[str, torch.Tensor] = {}
        for name, meta in manifest["tensors"].items():
            dtype = meta["dtype"]
            if dtype not in _TORCH_DTYPES:
                raise CheckpointError(f"{path}: unknown dtype {dtype!r}")
            shape = tuple(meta["shape"])
            raw = zf.read(f"tensors/{name}.bin")
            arr = np.frombuffer(raw, dtype=_NUMPY_DTYPES[dtype])
            expected = int(np.prod(shape)) if shape else 1
            if arr.size != expected:
                raise CheckpointError(
                    f"{path}: tensor {name} has {arr.size} elements, "
                    f"expected {expected}"
                )
            tensors[name] = torch.from_numpy(
                arr.reshape(shape).copy()
            ).to(_TORCH_DTYPES[dtype])

    return CheckpointData(
        format_version=version,
        config_text=config_text,
        metadata=manifest["metadata"],
        tensors=tensors,
    )


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
