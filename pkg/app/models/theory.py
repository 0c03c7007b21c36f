from pydantic import BaseModel


class TheoryCheckOut(BaseModel):
    check: str
    value: str
    expected: str
    passed: bool


class TheoryReportOut(BaseModel):
    passed: bool
    checks: list[TheoryCheckOut]
