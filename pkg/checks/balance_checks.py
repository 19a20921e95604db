# checks/balance_checks.py
"""
Checks that only hold when the vocabulary fills the hypercube (V = 2^K):
every code word is used once, each bit is on for exactly half the tokens and
each coordinate pair shows every pattern 2^(K-2) times.
"""
from typing import Optional

from token_codes import code_set, verify_balance
from .base import FAIL, PASS, CheckContext, CheckResult, VerificationCheck


def _full_vocabulary_only(ctx: CheckContext) -> Optional[str]:
    if not ctx.spec.is_full_vocabulary:
        return f"V={ctx.spec.vocab_size} < 2^{ctx.spec.code_width}"
    if ctx.spec.vocab_size > ctx.max_vocab:
        return f"V={ctx.spec.vocab_size} above TABLEFREE_VERIFY_MAX_V={ctx.max_vocab}"
    return None


class HypercubeCheck(VerificationCheck):
    name = "hypercube"

    def supports(self, ctx: CheckContext) -> Optional[str]:
        return _full_vocabulary_only(ctx)

    def evaluate(self, ctx: CheckContext) -> CheckResult:
        k = ctx.spec.code_width
        missing = (1 << k) - len(code_set(ctx.spec))
        if missing:
            return CheckResult(self.name, FAIL, f"{missing} of {1 << k} code words never used")
        return CheckResult(self.name, PASS, f"code set is all of {{0,1}}^{k}")


class BalanceCheck(VerificationCheck):
    name = "balance"

    def supports(self, ctx: CheckContext) -> Optional[str]:
        return _full_vocabulary_only(ctx)

    def evaluate(self, ctx: CheckContext) -> CheckResult:
        k = ctx.spec.code_width
        report = verify_balance(ctx.spec)
        if report.is_balanced(k):
            return CheckResult(self.name, PASS, f"every bit on for {1 << (k - 1)} tokens, pair patterns uniform")
        half = 1 << (k - 1)
        bad_bits = [j for j, c in enumerate(report.per_bit_ones) if c != half]
        if bad_bits:
            j = bad_bits[0]
            return CheckResult(self.name, FAIL, f"bit {j} is on for {report.per_bit_ones[j]} tokens, expected {half}")
        quarter = 1 << (k - 2)
        (i, j), counts = next(
            (pair, c) for pair, c in report.pair_pattern_counts.items() if any(n != quarter for n in c.values())
        )
        return CheckResult(self.name, FAIL, f"bits ({i}, {j}) pattern counts {counts}, expected {quarter} each")
