# test_checks.py
import numpy as np

from checks.balance_checks import BalanceCheck, HypercubeCheck
from checks.base import FAIL, PASS, SKIP, CheckContext
from checks.injectivity_checks import InjectivityCheck
from checks.rank_checks import RankCheck
from checks.table_checks import FrozenTableCheck
from cli import run_checks
from gf2_linear import BitMatrix, BitVector
from token_codes import CodeSpec, FrozenTable, Recoder, export_frozen_table


def _broken_spec():
    # every token collapses onto the same code word
    return CodeSpec.model_construct(
        vocab_size=4,
        code_width=2,
        lift_width=4,
        recoder=Recoder.model_construct(matrix=BitMatrix.zeros(2), shift=BitVector.zeros(2), seed=None),
    )


def test_valid_full_vocabulary_passes_everything():
    ctx = CheckContext(spec=CodeSpec.build(256, 64, recoder_seed=7))
    results = run_checks(ctx)
    assert [r.status for r in results] == [PASS] * 5
    assert all(r.line().startswith("✅") for r in results)


def test_partial_vocabulary_skips_hypercube_checks():
    ctx = CheckContext(spec=CodeSpec.build(1000, 60))
    by_name = {r.name: r for r in run_checks(ctx)}
    assert by_name["balance"].status == SKIP
    assert by_name["hypercube"].status == SKIP
    assert "V=1000 < 2^10" in by_name["balance"].detail
    assert by_name["injectivity"].status == PASS
    assert by_name["effective rank"].status == PASS


def test_large_vocabulary_above_limit_is_skipped():
    ctx = CheckContext(spec=CodeSpec.build(1 << 12, 24), max_vocab=1024)
    assert {r.status for r in run_checks(ctx)} == {SKIP}


def test_broken_spec_fails():
    ctx = CheckContext(spec=_broken_spec())
    injectivity = InjectivityCheck().run(ctx)
    assert injectivity.status == FAIL
    assert injectivity.detail == "tokens 0 and 1 share an input vector"
    assert HypercubeCheck().run(ctx).status == FAIL
    assert BalanceCheck().run(ctx).status == FAIL
    rank = RankCheck().run(ctx)
    assert rank.status == FAIL and rank.detail == "rank 0, expected = 2"


def test_frozen_table_check_reports_first_difference():
    spec = CodeSpec.build(16, 8)
    rows = export_frozen_table(spec).rows.copy()
    rows[11, 6] = np.float32(1.0) - rows[11, 6]
    result = FrozenTableCheck().run(CheckContext(spec=spec, table=FrozenTable(rows=rows)))
    assert result.status == FAIL
    assert result.detail == "first difference at token 11, column 6"

    wrong_shape = FrozenTable(rows=np.zeros((16, 4), dtype=np.float32))
    assert FrozenTableCheck().run(CheckContext(spec=spec, table=wrong_shape)).status == FAIL
    assert FrozenTableCheck().run(CheckContext(spec=spec, table=export_frozen_table(spec))).status == PASS
