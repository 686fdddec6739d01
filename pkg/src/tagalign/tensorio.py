"""Binary tensor containers: a one-line JSON manifest followed by little-endian float32 data."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

_F32 = np.dtype("<f4")


def _split(path: str | Path) -> tuple[dict, bytes]:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing JSON manifest line")
    try:
        manifest = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: unreadable manifest ({exc})") from None
    return manifest, blob[nl + 1:]


def save_embedding_table(table: np.ndarray, path: str | Path) -> None:
    table = np.asarray(table)
    if table.ndim != 2:
        raise ValueError("embedding table must be 2-D")
    if not np.all(np.isfinite(table)):
        raise ValueError("embedding table has non-finite entries")
    header = {"format": "emb-v1", "dim": int(table.shape[1]), "count": int(table.shape[0]), "dtype": "f32"}
    Path(path).write_bytes(json.dumps(header).encode() + b"\n" + table.astype(_F32).tobytes(order="C"))


def load_embedding_table(path: str | Path) -> np.ndarray:
    manifest, payload = _split(path)
    if manifest.get("format") != "emb-v1" or manifest.get("dtype") != "f32":
        raise ValueError(f"{path}: not an emb-v1/f32 container")
    count, dim = manifest["count"], manifest["dim"]
    if len(payload) != count * dim * 4:
        raise ValueError(f"{path}: expected {count * dim * 4} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=_F32).reshape(count, dim).astype(np.float32)


def save_tensors(tensors: Mapping[str, torch.Tensor], path: str | Path) -> None:
    entries, chunks = [], []
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float32).numpy()
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.astype(_F32).tobytes(order="C"))
    header = {"format": "tensors-v1", "dtype": "f32", "tensors": entries}
    Path(path).write_bytes(json.dumps(header).encode() + b"\n" + b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, torch.Tensor]:
    manifest, payload = _split(path)
    if manifest.get("format") != "tensors-v1":
        raise ValueError(f"{path}: not a tensors-v1 container")
    out: dict[str, torch.Tensor] = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype=_F32, count=n, offset=offset).reshape(shape)
        out[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += n * 4
    if offset != len(payload):
        raise ValueError(f"{path}: trailing bytes after declared tensors")
    return out
