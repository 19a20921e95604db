# checks/injectivity_checks.py
from typing import Optional

from token_codes import verify_injectivity
from .base import FAIL, PASS, CheckContext, CheckResult, VerificationCheck


class InjectivityCheck(VerificationCheck):
    name = "injectivity"

    def supports(self, ctx: CheckContext) -> Optional[str]:
        if ctx.spec.vocab_size > ctx.max_vocab:
            return f"V={ctx.spec.vocab_size} above TABLEFREE_VERIFY_MAX_V={ctx.max_vocab}"
        return None

    def evaluate(self, ctx: CheckContext) -> CheckResult:
        report = verify_injectivity(ctx.spec)
        if report.ok:
            return CheckResult(self.name, PASS, f"all {ctx.spec.vocab_size} tokens map to distinct inputs")
        a, b = report.colliding_pair
        return CheckResult(self.name, FAIL, f"tokens {a} and {b} share an input vector")
