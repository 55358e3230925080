"""Versioned binary container for trained models.

Layout (all multi-byte integers little-endian):

    bytes 0..3    magic b"MNPS"
    bytes 4..7    uint32 header length in bytes
    header        UTF-8 JSON: format_version, n_features, latent_dim, k,
                  config echo, feature_min/feature_max, and an ordered list
                  of parameter blocks {name, shape}
    payload       the parameter blocks' values, float64 little-endian,
                  C order, concatenated in header order
    last 32 bytes SHA-256 over everything that precedes them

The round trip is bit-exact: values are written as raw float64 and never
re-parsed through text.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .config import TrainConfig

FORMAT_VERSION = 1
MAGIC = b"MNPS"
_CHECKSUM_BYTES = 32


class SnapshotError(ValueError):
    """Unreadable, corrupted, or incompatible snapshot file."""


@dataclass
class ModelSnapshot:
    """Frozen copy of a trained model plus everything inference needs."""

    n_features: int
    latent_dim: int
    k: int
    config: TrainConfig
    feature_min: np.ndarray
    feature_max: np.ndarray
    params: Dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.feature_min = np.asarray(self.feature_min, dtype=np.float64)
        self.feature_max = np.asarray(self.feature_max, dtype=np.float64)
        self.params = {name: np.asarray(v, dtype=np.float64) for name, v in self.params.items()}


def save(snapshot: ModelSnapshot, path) -> None:
    header = {
        "format_version": snapshot.format_version,
        "n_features": snapshot.n_features,
        "latent_dim": snapshot.latent_dim,
        "k": snapshot.k,
        "config": snapshot.config.to_dict(),
        "feature_min": snapshot.feature_min.tolist(),
        "feature_max": snapshot.feature_max.tolist(),
        "params": [{"name": name, "shape": list(v.shape)} for name, v in snapshot.params.items()],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for v in snapshot.params.values():
        blob += np.ascontiguousarray(v, dtype="<f8").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load(path) -> ModelSnapshot:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + _CHECKSUM_BYTES:
        raise SnapshotError(f"{path}: file is truncated")
    if blob[: len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{path}: not a model snapshot (bad magic)")

    body, checksum = blob[:-_CHECKSUM_BYTES], blob[-_CHECKSUM_BYTES:]
    if hashlib.sha256(body).digest() != checksum:
        raise SnapshotError(f"{path}: checksum mismatch, file is corrupted")

    (header_len,) = struct.unpack("<I", blob[len(MAGIC): len(MAGIC) + 4])
    header_start = len(MAGIC) + 4
    payload_start = header_start + header_len
    if payload_start > len(body):
        raise SnapshotError(f"{path}: file is truncated")
    try:
        header = json.loads(body[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: unreadable header ({exc})") from None

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"{path}: snapshot format version {version} not supported (expected {FORMAT_VERSION})")

    params: Dict[str, np.ndarray] = {}
    offset = payload_start
    for block in header["params"]:
        shape = tuple(block["shape"])
        size = 8 * int(np.prod(shape, dtype=np.int64))
        end = offset + size
        if end > len(body):
            raise SnapshotError(f"{path}: parameter block '{block['name']}' is truncated")
        params[block["name"]] = np.frombuffer(body[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(body):
        raise SnapshotError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    return ModelSnapshot(
        n_features=int(header["n_features"]),
        latent_dim=int(header["latent_dim"]),
        k=int(header["k"]),
        config=TrainConfig.from_dict(header["config"]),
        feature_min=np.asarray(header["feature_min"], dtype=np.float64),
        feature_max=np.asarray(header["feature_max"], dtype=np.float64),
        params=params,
        format_version=version,
    )
