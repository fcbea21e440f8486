"""
Shared fixtures: pinned random streams, reference profiles and tiny
synthetic IDX datasets.
"""

import gzip
import math
import struct
from pathlib import Path

import numpy as np
import pytest
import structlog

import app.main as app_main
from app.schemas.delay import ClientProfile
from app.schemas.simulation import SimConfig


class FrozenStream:
    """Random stream whose draws are pinned to fixed values."""

    def __init__(self, exponential=0.0, geometric=1, normal=0.0, uniform=0.5):
        self.exp_value = exponential
        self.geo_value = geometric
        self.normal_value = normal
        self.uniform_value = uniform

    def exponential(self, scale=1.0, size=None):
        return self.exp_value if size is None else np.full(size, self.exp_value)

    def geometric(self, p, size=None):
        return self.geo_value if size is None else np.full(size, self.geo_value)

    def standard_normal(self, size=None, dtype=np.float64):
        return self.normal_value if size is None else np.full(size, self.normal_value, dtype)

    def random(self, size=None, dtype=np.float64):
        return self.uniform_value if size is None else np.full(size, self.uniform_value, dtype)

    def choice(self, a, size=None, replace=True, p=None):
        return np.arange(size if size is not None else 1)


@pytest.fixture
def frozen_stream():
    return FrozenStream()


@pytest.fixture
def reference_profile():
    """mu=2, alpha=2, tau=sqrt(3), p_err=0.9, four local points."""
    return ClientProfile(mu=2.0, alpha=2.0, tau=math.sqrt(3.0), p_err=0.9, local_size=4)


@pytest.fixture
def heterogeneous_profiles():
    return [
        ClientProfile(mu=20.0 * 0.8**j, alpha=2.0, tau=0.05 / 0.95**j, p_err=0.1, local_size=40)
        for j in range(5)
    ]


def write_idx(root: Path, prefix: str, images: np.ndarray, labels: np.ndarray, gz: bool = False):
    """Write `<prefix>-images-idx3-ubyte` and `<prefix>-labels-idx1-ubyte`."""
    count, rows, cols = images.shape
    image_bytes = struct.pack(">4I", 0x803, count, rows, cols) + images.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">2I", 0x801, count) + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if gz else ""
    pack = gzip.compress if gz else (lambda b: b)
    image_path = root / f"{prefix}-images-idx3-ubyte{suffix}"
    label_path = root / f"{prefix}-labels-idx1-ubyte{suffix}"
    image_path.write_bytes(pack(image_bytes))
    label_path.write_bytes(pack(label_bytes))
    return image_path, label_path


@pytest.fixture
def tiny_mnist(tmp_path):
    """16 training and 10 test 4x4 images under <tmp>/mnist."""
    root = tmp_path / "mnist"
    root.mkdir()
    rng = np.random.default_rng(7)
    train_labels = np.arange(16) % 10
    test_labels = np.arange(10)
    # a bright pixel per class keeps the problem learnable
    train = rng.integers(0, 40, size=(16, 4, 4))
    test = rng.integers(0, 40, size=(10, 4, 4))
    for images, labels in ((train, train_labels), (test, test_labels)):
        for i, label in enumerate(labels):
            images[i].flat[label] = 255
    write_idx(root, "train", train, train_labels)
    write_idx(root, "t10k", test, test_labels)
    return tmp_path


@pytest.fixture
def tiny_config(tiny_mnist):
    return SimConfig(
        n_clients=2,
        batch_size_global=8,
        kernel_q=8,
        kernel_sigma=1.0,
        epochs_total=2,
        decay_epochs=(1,),
        lr0=0.5,
        redundancy=0.25,
        data_dir=tiny_mnist,
        seed=11,
    )


@pytest.fixture(name="write_idx")
def write_idx_fixture():
    return write_idx


@pytest.fixture(autouse=True)
def fresh_logging(monkeypatch):
    """Loggers must not keep a reference to a previous test's captured stderr."""
    real = app_main.configure_logging

    def configure(level=None):
        real(level)
        structlog.configure(cache_logger_on_first_use=False)

    monkeypatch.setattr(app_main, "configure_logging", configure)
    yield
    structlog.reset_defaults()
