"""Client delay-model schemas."""

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ClientProfile(BaseModel):
    """Compute and link statistics of one node.

    mu: data points per second; alpha: memory-access ratio; tau: seconds
    per transmission attempt; p_err: erasure probability per attempt;
    local_size: number of data points held locally.
    """

    model_config = ConfigDict(frozen=True)

    mu: float = Field(..., gt=0)
    alpha: float = Field(..., gt=0)
    tau: float = Field(..., gt=0)
    p_err: float = Field(..., ge=0, lt=1)
    local_size: int = Field(..., ge=1)


class DelaySample(BaseModel):
    """One round trip: download, compute, upload."""

    model_config = ConfigDict(frozen=True)

    t_compute_det: float = Field(..., ge=0)
    t_compute_stoch: float = Field(..., ge=0)
    n_down: int = Field(..., ge=1)
    n_up: int = Field(..., ge=1)
    total: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_total(self) -> "DelaySample":
        parts = self.t_compute_det + self.t_compute_stoch
        if self.total < parts:
            raise ValueError("total shorter than compute time")
        return self
