# checks/table_checks.py
from typing import Optional

import numpy as np

from token_codes import encode_token, export_frozen_table, first_table_mismatch
from .base import FAIL, PASS, CheckContext, CheckResult, VerificationCheck


class FrozenTableCheck(VerificationCheck):
    """A frozen lookup table must match on-the-fly encoding bit for bit.

    With a table file the file is compared; without one, the exported table is
    compared against the scalar ``encode_token`` path.
    """

    name = "frozen table equivalence"

    def supports(self, ctx: CheckContext) -> Optional[str]:
        if ctx.table is None and ctx.spec.vocab_size > ctx.max_vocab:
            return f"V={ctx.spec.vocab_size} above TABLEFREE_VERIFY_MAX_V={ctx.max_vocab}"
        return None

    def evaluate(self, ctx: CheckContext) -> CheckResult:
        spec = ctx.spec
        if ctx.table is not None:
            if ctx.table.rows.shape != (spec.vocab_size, spec.lift_width):
                return CheckResult(
                    self.name, FAIL,
                    f"table shape {ctx.table.rows.shape} vs expected ({spec.vocab_size}, {spec.lift_width})",
                )
            mismatch = first_table_mismatch(ctx.table, spec)
            if mismatch is not None:
                t, col = mismatch
                return CheckResult(self.name, FAIL, f"first difference at token {t}, column {col}")
            return CheckResult(self.name, PASS, f"table file matches encoding for all {spec.vocab_size} tokens")

        rows = export_frozen_table(spec).rows
        for t in range(spec.vocab_size):
            expected = encode_token(t, spec)
            diff = np.flatnonzero(rows[t].view(np.uint32) != expected.view(np.uint32))
            if diff.size:
                return CheckResult(self.name, FAIL, f"first difference at token {t}, column {int(diff[0])}")
        return CheckResult(self.name, PASS, f"exported table matches encode_token for all {spec.vocab_size} tokens")
