from typing import Any

from pydantic import BaseModel, Field, computed_field


class Check(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    data: dict[str, Any] = Field(default_factory=dict)


class SuiteReport(BaseModel):
    suite: str
    model: str
    mode: str
    checks: list[Check]

    @computed_field
    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]
