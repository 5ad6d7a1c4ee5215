"""Certification rows shared by the verification suites and the CLI."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CheckRow:
    """One certified inequality: measured value vs. its bound.

    gating=False marks theoretical-constant diagnostics (astronomically
    conservative worst-case bounds) that are reported but do not decide
    success at desk scale.
    """

    check: str
    bound: float
    actual: float
    passed: bool
    detail: str = ""
    gating: bool = True

    def as_csv(self) -> str:
        return "%s,%r,%r,%s,%s" % (
            self.check,
            self.bound,
            self.actual,
            "pass" if self.passed else "FAIL",
            self.detail,
        )


def all_passed(rows, gating_only: bool = True) -> bool:
    return all(r.passed for r in rows if r.gating or not gating_only)
