from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

from token_codes import CodeSpec, FrozenTable

PASS, FAIL, SKIP = "pass", "fail", "skip"
MARKERS = {PASS: "✅", FAIL: "❌", SKIP: "⚠️"}


@dataclass(frozen=True)
class CheckContext:
    spec: CodeSpec
    table: Optional[FrozenTable] = None
    max_vocab: int = 65536


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    detail: str

    def line(self) -> str:
        return f"{MARKERS[self.status]} {self.name}: {self.detail}"


class VerificationCheck(ABC):
    name: str

    @abstractmethod
    def supports(self, ctx: CheckContext) -> Optional[str]:
        """None when the check applies, otherwise the reason it is skipped."""

    @abstractmethod
    def evaluate(self, ctx: CheckContext) -> CheckResult: ...

    def run(self, ctx: CheckContext) -> CheckResult:
        reason = self.supports(ctx)
        if reason is not None:
            return CheckResult(self.name, SKIP, f"skipped ({reason})")
        return self.evaluate(ctx)
