"""Hop-wise feature precomputation and the persisted hop tensor.

The k-th hop slice is Â^k X, built by K sparse-by-dense products; hop 0
is X itself. Training consumes only this tensor, never the adjacency, so
the precompute runs once and the result is shared read-only by workers.

On-disk layout (little endian): magic ``HOGT``, u32 version, u64 node
count, u32 hops K, u32 feature width d0, u64 graph checksum, then
n*(K+1)*d0 float64 values in [node][hop][dim] order. Header is exactly
32 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hoga.graph import NodeFeatures, NormalizedAdjacency

_MAGIC = b"HOGT"
_VERSION = 1
_HEADER = struct.Struct("<4sIQIIQ")


class HopTensorIOError(ValueError):
    """Corrupt, truncated, or mismatched hop-tensor file."""


@dataclass(frozen=True, eq=False)
class HopTensor:
    """Per-node stack of (K+1) hop feature rows, shape (n, K+1, d0)."""

    data: np.ndarray
    graph_checksum: int

    @property
    def num_nodes(self) -> int:
        return self.data.shape[0]

    @property
    def hops(self) -> int:
        return self.data.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def generate_hop_features(
    adj: NormalizedAdjacency,
    feats: NodeFeatures,
    hops: int,
    graph_checksum: int = 0,
) -> HopTensor:
    if hops < 1:
        raise ValueError(f"hop count must be >= 1, got {hops}")
    if adj.num_nodes != feats.num_nodes:
        raise ValueError(
            f"adjacency has {adj.num_nodes} nodes, features have {feats.num_nodes}"
        )
    n, d0 = feats.matrix.shape
    out = np.empty((n, hops + 1, d0), dtype=np.float64)
    x = np.array(feats.matrix, dtype=np.float64)
    out[:, 0, :] = x
    for k in range(1, hops + 1):
        x = adj.matrix @ x
        out[:, k, :] = x
    out.setflags(write=False)
    return HopTensor(out, graph_checksum)


def shard_hop_tensor(t: HopTensor, node_ids) -> HopTensor:
    """Row-gather a self-contained slice for the given node ids."""
    ids = np.asarray(node_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= t.num_nodes):
        raise IndexError(f"node id out of range 0..{t.num_nodes - 1}")
    data = t.data[ids].copy()
    data.setflags(write=False)
    return HopTensor(data, t.graph_checksum)


def save_hop_tensor(t: HopTensor, path: str | Path) -> None:
    n, k1, d0 = t.data.shape
    header = _HEADER.pack(_MAGIC, _VERSION, n, k1 - 1, d0, t.graph_checksum)
    blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    Path(path).write_bytes(header + blob)


def load_hop_tensor(path: str | Path, expect_checksum: int | None = None) -> HopTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise HopTensorIOError(f"{path}: truncated header")
    magic, version, n, k, d0, checksum = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise HopTensorIOError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise HopTensorIOError(f"{path}: unsupported version {version}")
    want = _HEADER.size + 8 * n * (k + 1) * d0
    if len(raw) != want:
        raise HopTensorIOError(f"{path}: expected {want} bytes, found {len(raw)}")
    if expect_checksum is not None and checksum != expect_checksum:
        raise HopTensorIOError(
            f"{path}: graph checksum {checksum:#x} does not match expected {expect_checksum:#x}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, k + 1, d0)
    data = np.ascontiguousarray(data)
    data.setflags(write=False)
    return HopTensor(data, checksum)
