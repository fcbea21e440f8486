"""Oracle report schemas."""

from pydantic import BaseModel, Field


class OracleCheck(BaseModel):
    name: str
    value: float
    reference: float | None = None
    tolerance: float
    samples: int | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    passed: bool


class OracleReport(BaseModel):
    suite: str
    checks: list[OracleCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)
