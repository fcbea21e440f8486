"""
Load allocation schemas.

LoadAllocation serializes to the JSON document consumed by the simulator
and printed by `allocate`:

    {"waiting_time_s": ..., "loads": [...], "u": ..., "expected_return": ...}

plus the relaxed (continuous) loads and the target/tolerance the
allocation was solved for, so a re-parsed document can revalidate itself.
"""

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.delay import ClientProfile


class ReturnCurvePoint(BaseModel):
    """Load and expected return of one client at a fixed waiting time."""

    model_config = ConfigDict(frozen=True)

    load: float = Field(..., ge=0)
    expected_return: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _return_bounded_by_load(self) -> "ReturnCurvePoint":
        # relative slack for float round-off in the closed form
        if self.expected_return > self.load * (1 + 1e-12) + 1e-12:
            raise ValueError("expected_return exceeds load")
        return self


class LoadAllocation(BaseModel):
    """Per-client loads, coded redundancy and server waiting time."""

    model_config = ConfigDict(populate_by_name=True)

    per_client_load: list[int] = Field(..., alias="loads")
    coded_redundancy: int = Field(..., ge=0, alias="u")
    waiting_time: float = Field(..., ge=0, alias="waiting_time_s")
    expected_uncoded_return: float = Field(..., ge=0, alias="expected_return")
    relaxed_load: list[float] = Field(default_factory=list, alias="relaxed_loads")
    local_sizes: list[int] = Field(default_factory=list)
    u_max: int | None = None
    target_return: float | None = None
    epsilon: float | None = None

    @model_validator(mode="after")
    def _check_invariants(self) -> "LoadAllocation":
        if any(load < 0 for load in self.per_client_load):
            raise ValueError("negative client load")
        if self.local_sizes:
            if len(self.local_sizes) != len(self.per_client_load):
                raise ValueError("local_sizes and loads differ in length")
            for load, size in zip(self.per_client_load, self.local_sizes):
                if load > size:
                    raise ValueError(f"load {load} exceeds local size {size}")
        if self.u_max is not None and self.coded_redundancy > self.u_max:
            raise ValueError("u exceeds u_max")
        if self.target_return is not None and self.epsilon is not None:
            lo = self.target_return
            hi = self.target_return + self.epsilon
            slack = 1e-9 * max(1.0, hi)
            got = self.expected_uncoded_return
            if not (lo - slack <= got <= hi + slack):
                raise ValueError(
                    f"expected return {got} outside [{lo}, {hi}]"
                )
        return self

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


class FixedRedundancy(BaseModel):
    """Server processes exactly u coded points."""

    mode: Literal["fixed"] = "fixed"
    u: int = Field(..., ge=0)
    u_max: int | None = Field(default=None, ge=0)


class OptimizedRedundancy(BaseModel):
    """Server joins the allocation as an extra node bounded by u_max."""

    mode: Literal["optimized"] = "optimized"
    u_max: int = Field(..., ge=0)
    server: ClientProfile


RedundancyPolicy = Annotated[
    Union[FixedRedundancy, OptimizedRedundancy], Field(discriminator="mode")
]
