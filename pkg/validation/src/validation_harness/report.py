"""OracleReport: the one result document every oracle script emits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class OracleReport:
    """Outcome of one oracle check against primary artifacts.

    `passed` is true iff `max_deviation` is below the declared tolerance;
    the invariant is enforced at construction.
    """

    check: str
    max_deviation: float
    tolerance: float
    artifacts: list[str] = field(default_factory=list)
    max_abs_deviation: float | None = None
    max_rel_deviation: float | None = None
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_deviation <= self.tolerance)

    def to_json(self, path: str) -> None:
        data = {
            "check": self.check,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "artifacts": list(self.artifacts),
        }
        if self.max_abs_deviation is not None:
            data["max_abs_deviation"] = self.max_abs_deviation
        if self.max_rel_deviation is not None:
            data["max_rel_deviation"] = self.max_rel_deviation
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2)

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"{self.check}: {state} (deviation {self.max_deviation:.3e},"
                f" tolerance {self.tolerance:.3e})")
