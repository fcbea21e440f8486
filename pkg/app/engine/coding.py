"""
Distributed parity encoding.

Each client scales its embedded rows by w = sqrt(probability the row's
gradient never reaches the server), mixes them with a private Gaussian
generator G_j (u x l_j, entries N(0, 1/u)) and uploads only the u coded
rows. The server sums the client shards into one composite parity set.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from app.core.errors import DatasetError, DomainError
from app.core.streams import RandomStream

_HEADER = struct.Struct("<qqq")


@dataclass(frozen=True)
class WeightAssignment:
    """Client-private: which local rows it processes and every row's weight."""

    sampled_indices: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class ParityShard:
    coded_features: np.ndarray  # u x q
    coded_labels: np.ndarray  # u x c


@dataclass(frozen=True)
class CompositeParity:
    """Server-side coded data; nothing client-private is reachable from it."""

    coded_features: np.ndarray  # u x q
    coded_labels: np.ndarray  # u x c

    @property
    def u(self) -> int:
        return self.coded_features.shape[0]


def build_weights(
    local_size: int, optimized_load: int, p_return: float, rng: RandomStream
) -> WeightAssignment:
    if not 0 <= optimized_load <= local_size:
        raise DomainError(f"load {optimized_load} outside [0, {local_size}]")
    if not 0.0 <= p_return <= 1.0:
        raise DomainError(f"return probability must be in [0, 1], got {p_return}")
    weights = np.ones(local_size, dtype=np.float64)
    if optimized_load == 0:
        return WeightAssignment(sampled_indices=np.empty(0, dtype=np.int64), weights=weights)
    picked = np.sort(rng.choice(local_size, size=optimized_load, replace=False)).astype(np.int64)
    weights[picked] = np.sqrt(1.0 - p_return)
    return WeightAssignment(sampled_indices=picked, weights=weights)


def encode_local(
    embedded_features: np.ndarray,
    labels: np.ndarray,
    weights: WeightAssignment,
    u: int,
    rng: RandomStream,
) -> ParityShard:
    """Coded rows G_j W_j X_j and G_j W_j Y_j; G_j stays local."""
    if u < 1:
        raise DomainError(f"redundancy must be at least 1, got {u}")
    rows = embedded_features.shape[0]
    if labels.shape[0] != rows or weights.weights.shape[0] != rows:
        raise DomainError("features, labels and weights disagree on the row count")
    generator = rng.standard_normal((u, rows)) / np.sqrt(u)
    mixed = generator * weights.weights[None, :]
    return ParityShard(
        coded_features=mixed @ embedded_features.astype(np.float64),
        coded_labels=mixed @ labels.astype(np.float64),
    )


def aggregate_parity(shards: Sequence[ParityShard]) -> CompositeParity:
    if not shards:
        raise DomainError("no parity shards to aggregate")
    f_shape = shards[0].coded_features.shape
    l_shape = shards[0].coded_labels.shape
    for shard in shards[1:]:
        if shard.coded_features.shape != f_shape or shard.coded_labels.shape != l_shape:
            raise DomainError(
                f"shard shapes {shard.coded_features.shape}/{shard.coded_labels.shape} "
                f"differ from {f_shape}/{l_shape}"
            )
    features = np.zeros(f_shape, dtype=np.float64)
    labels = np.zeros(l_shape, dtype=np.float64)
    for shard in shards:
        features += shard.coded_features
        labels += shard.coded_labels
    return CompositeParity(coded_features=features, coded_labels=labels)


def parity_to_bytes(parity: CompositeParity) -> bytes:
    """Header u, q, c (int64 LE) then float32 features and labels, row-major."""
    u, q = parity.coded_features.shape
    c = parity.coded_labels.shape[1]
    return (
        _HEADER.pack(u, q, c)
        + np.ascontiguousarray(parity.coded_features, dtype="<f4").tobytes()
        + np.ascontiguousarray(parity.coded_labels, dtype="<f4").tobytes()
    )


def save_parity(parity: CompositeParity, path: Path) -> None:
    Path(path).write_bytes(parity_to_bytes(parity))


def load_parity(path: Path) -> CompositeParity:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError("parity header truncated", path, offset=len(raw))
    u, q, c = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 4 * u * (q + c)
    if len(raw) != expected:
        raise DatasetError(f"expected {expected} bytes, found {len(raw)}", path, offset=len(raw))
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    features = body[: u * q].reshape(u, q).astype(np.float64)
    labels = body[u * q :].reshape(u, c).astype(np.float64)
    return CompositeParity(coded_features=features, coded_labels=labels)
