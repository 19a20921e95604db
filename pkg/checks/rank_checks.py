# checks/rank_checks.py
from typing import Optional

from token_codes import effective_rank
from .base import FAIL, PASS, CheckContext, CheckResult, VerificationCheck


class RankCheck(VerificationCheck):
    name = "effective rank"

    def supports(self, ctx: CheckContext) -> Optional[str]:
        if ctx.spec.vocab_size > ctx.max_vocab:
            return f"V={ctx.spec.vocab_size} above TABLEFREE_VERIFY_MAX_V={ctx.max_vocab}"
        return None

    def evaluate(self, ctx: CheckContext) -> CheckResult:
        k = ctx.spec.code_width
        rank = effective_rank(ctx.spec)
        # a full vocabulary reaches the ceiling exactly
        expected_exact = ctx.spec.is_full_vocabulary
        if rank > k or (expected_exact and rank != k):
            want = f"= {k}" if expected_exact else f"<= {k}"
            return CheckResult(self.name, FAIL, f"rank {rank}, expected {want}")
        return CheckResult(self.name, PASS, f"rank {rank} (ceiling K={k}, width d={ctx.spec.lift_width})")
