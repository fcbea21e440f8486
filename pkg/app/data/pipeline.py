"""
Dataset ingestion for IDX image sets (MNIST, Fashion-MNIST).

IDX layout (big endian):
    images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, u8 pixels
    labels: u32 magic 0x00000801, u32 count, u8 labels
Files may be gzip-compressed.
"""

import gzip
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog

from app.core.errors import DatasetError, DomainError

logger = structlog.get_logger()

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10

_SPLIT_PREFIX = {"train": "train", "test": "t10k"}
_DATASET_DIRS = {"mnist": "mnist", "fashion-mnist": "fashion-mnist"}


@dataclass(frozen=True)
class RawDataset:
    images: np.ndarray  # m x (rows*cols) uint8
    labels: np.ndarray  # m uint8
    image_shape: tuple[int, int]


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # m x d float32 in [0, 1]
    labels_onehot: np.ndarray  # m x c float32
    labels_raw: np.ndarray  # m int64

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClientShards:
    indices: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.indices)


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise DatasetError("file not found", path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as exc:
            raise DatasetError(f"corrupt gzip stream ({exc})", path) from exc
    return raw


def _header(raw: bytes, path: Path, words: int, magic: int) -> tuple[int, ...]:
    size = 4 * words
    if len(raw) < size:
        raise DatasetError(f"header truncated, need {size} bytes", path, offset=len(raw))
    values = struct.unpack_from(f">{words}I", raw)
    if values[0] != magic:
        raise DatasetError(
            f"bad magic 0x{values[0]:08x}, expected 0x{magic:08x}", path, offset=0
        )
    return values[1:]


def load_idx(images_path: Path | str, labels_path: Path | str) -> RawDataset:
    images_path, labels_path = Path(images_path), Path(labels_path)

    raw_images = _read_bytes(images_path)
    count, rows, cols = _header(raw_images, images_path, 4, IMAGE_MAGIC)
    need = 16 + count * rows * cols
    if len(raw_images) < need:
        raise DatasetError(
            f"payload truncated, expected {need} bytes", images_path, offset=len(raw_images)
        )
    images = np.frombuffer(raw_images, dtype=np.uint8, count=count * rows * cols, offset=16)

    raw_labels = _read_bytes(labels_path)
    (label_count,) = _header(raw_labels, labels_path, 2, LABEL_MAGIC)
    need = 8 + label_count
    if len(raw_labels) < need:
        raise DatasetError(
            f"payload truncated, expected {need} bytes", labels_path, offset=len(raw_labels)
        )
    if label_count != count:
        raise DatasetError(
            f"{label_count} labels for {count} images in {images_path.name}", labels_path
        )
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=label_count, offset=8)

    logger.info("idx_loaded", images=str(images_path), count=count, rows=rows, cols=cols)
    return RawDataset(
        images=images.reshape(count, rows * cols).copy(),
        labels=labels.copy(),
        image_shape=(rows, cols),
    )


def preprocess(raw: RawDataset, n_classes: int = N_CLASSES) -> LabeledDataset:
    """Scale pixels to [0, 1] and one-hot encode labels."""
    labels = raw.labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes - 1}]")
    features = raw.images.astype(np.float32) / np.float32(255.0)
    onehot = np.zeros((labels.size, n_classes), dtype=np.float32)
    onehot[np.arange(labels.size), labels] = 1.0
    return LabeledDataset(features=features, labels_onehot=onehot, labels_raw=labels)


def shard_non_iid(dataset: LabeledDataset, n: int) -> ClientShards:
    """Stable sort by label, then n contiguous equal slices."""
    m = dataset.size
    if n < 1 or m % n:
        raise DomainError(f"{m} rows cannot be split into {n} equal shards")
    order = np.argsort(dataset.labels_raw, kind="stable")
    return ClientShards(indices=tuple(np.array_split(order, n)))


def dataset_files(data_dir: Path, dataset: str, split: str) -> tuple[Path, Path]:
    """Image and label paths for a split, preferring uncompressed files."""
    root = Path(data_dir)
    if (root / _DATASET_DIRS[dataset]).is_dir():
        root = root / _DATASET_DIRS[dataset]
    prefix = _SPLIT_PREFIX[split]
    found = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        plain = root / f"{prefix}-{kind}"
        packed = root / f"{prefix}-{kind}.gz"
        found.append(plain if plain.exists() or not packed.exists() else packed)
    return found[0], found[1]


def load_split(data_dir: Path, dataset: str, split: str) -> LabeledDataset:
    images, labels = dataset_files(data_dir, dataset, split)
    return preprocess(load_idx(images, labels))


def split_size(data_dir: Path, dataset: str, split: str) -> int:
    """Row count of a split, read from its label-file header."""
    _, labels_path = dataset_files(data_dir, dataset, split)
    return _header(_read_bytes(labels_path), labels_path, 2, LABEL_MAGIC)[0]
