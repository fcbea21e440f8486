"""
Simulation schemas: training hyperparameters, experiment config,
convergence trace rows and the run manifest.
"""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.allocation import LoadAllocation
from app.schemas.delay import ClientProfile

DEFAULT_TARGET_ACCURACY = {"mnist": 0.942, "fashion-mnist": 0.842}


def _split_ints(value: Any) -> Any:
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        return [int(p) for p in parts if p]
    return value


class OptimizationFields(BaseModel):
    """Optimizer keys shared by experiment files and the training engine."""

    lambda_: float = Field(default=9e-6, ge=0, alias="lambda")
    lr0: float = Field(default=6.0, gt=0)
    decay: float = Field(default=0.8, gt=0, le=1)
    decay_epochs: tuple[int, ...] = (40, 65)
    epochs_total: int = Field(default=80, ge=1)
    batch_size_global: int = Field(default=12000, ge=1)

    @field_validator("decay_epochs", mode="before")
    @classmethod
    def _parse_decay_epochs(cls, value: Any) -> Any:
        return _split_ints(value)


class TrainingHyperparams(OptimizationFields):
    """Step-decay gradient descent on the ridge objective."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)


class SimConfig(OptimizationFields):
    """One experiment; read from a key = value file (docs/config-reference.md)."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    # Network and compute heterogeneity
    n_clients: int = Field(default=30, ge=1)
    max_comm_rate: float = Field(default=216_000.0, gt=0)
    k1: float = Field(default=0.95, gt=0, le=1)
    max_mac_rate: float = Field(default=3.072e6, gt=0)
    k2: float = Field(default=0.8, gt=0, le=1)
    p_err: float = Field(default=0.1, ge=0, lt=1)
    alpha: float = Field(default=2.0, gt=0)
    overhead: float = Field(default=0.1, ge=0)
    bits_per_scalar: int = Field(default=32, ge=1)

    # Scheme
    scheme: Literal["coded", "uncoded"] = "coded"
    redundancy: float = Field(default=0.1, ge=0, le=1)
    redundancy_mode: Literal["fixed", "optimized"] = "fixed"
    server_mac_rate: float = Field(default=3.072e7, gt=0)
    server_comm_rate: float = Field(default=2.16e7, gt=0)
    server_p_err: float = Field(default=0.0, ge=0, lt=1)
    epsilon_fraction: float = Field(default=1e-3, gt=0)
    coded_gradient_mode: Literal["exact", "identity"] = "exact"
    checkpoint_parity: bool = False

    # Data and kernel
    seed: int = Field(default=0, ge=0, lt=2**64)
    dataset: Literal["mnist", "fashion-mnist"] = "mnist"
    data_dir: Path | None = None
    kernel_sigma: float = Field(default=5.0, gt=0)
    kernel_q: int = Field(default=2000, ge=1)
    target_accuracy: float | None = Field(default=None, gt=0, le=1)

    @model_validator(mode="after")
    def _check_batching(self) -> "SimConfig":
        if self.batch_size_global % self.n_clients:
            raise ValueError(
                f"batch_size_global {self.batch_size_global} is not divisible "
                f"by n_clients {self.n_clients}"
            )
        return self

    @property
    def hyperparams(self) -> TrainingHyperparams:
        return TrainingHyperparams(
            **{name: getattr(self, name) for name in OptimizationFields.model_fields}
        )

    @property
    def coded_points(self) -> int:
        """u_max = round(redundancy * m)."""
        return int(round(self.redundancy * self.batch_size_global))

    @property
    def local_batch_size(self) -> int:
        return self.batch_size_global // self.n_clients

    @property
    def gamma(self) -> float:
        if self.target_accuracy is not None:
            return self.target_accuracy
        return DEFAULT_TARGET_ACCURACY[self.dataset]


class ConvergenceRecord(BaseModel):
    """One row of trace.csv."""

    model_config = ConfigDict(frozen=True)

    epoch: int = Field(..., ge=0)
    step: int = Field(..., ge=0)
    wall_clock_s: float = Field(..., ge=0)
    test_accuracy: float = Field(..., ge=0, le=1)
    train_loss: float


class ProfileRow(BaseModel):
    """Derived per-client rates as recorded in the manifest."""

    client: int
    comm_rate: float
    mac_rate: float
    profile: ClientProfile


class RunManifest(BaseModel):
    """Everything needed to replay a run and locate its artifacts."""

    version: str
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    scheme: Literal["coded", "uncoded"]
    config: dict[str, Any]
    profiles: list[ProfileRow]
    allocations: list[LoadAllocation] = Field(default_factory=list)
    seeds: dict[str, list[int]]
    dataset_files: dict[str, str] = Field(default_factory=dict)
    artifacts: dict[str, str] = Field(default_factory=dict)
    steps: int = 0
    final_accuracy: float | None = None
    total_wall_clock_s: float = 0.0
    time_to_target_s: float | None = None
