# test_token_codes.py
import numpy as np
import pytest

from errors import IoFailure, InvalidCodeSpec, NonDivisibleWidth, NotFullVocabulary, TokenOutOfRange
from gf2_linear import BitMatrix, BitVector, sample_recoder
from token_codes import (
    CodeSpec,
    FrozenTable,
    Recoder,
    code_set,
    decode_code,
    effective_rank,
    encode_batch,
    encode_token,
    export_frozen_table,
    first_table_mismatch,
    hypercube_covered,
    minimal_width,
    read_code_spec,
    read_frozen_table,
    trainable_input_params,
    verify_balance,
    verify_injectivity,
    write_code_spec,
    write_frozen_table,
)


@pytest.mark.parametrize("vocab,width", [(1, 1), (2, 1), (3, 2), (256, 8), (257, 9), (1000, 10), (65536, 16)])
def test_minimal_width(vocab, width):
    assert minimal_width(vocab) == width


def test_minimal_width_rejects_empty_vocabulary():
    with pytest.raises(InvalidCodeSpec):
        minimal_width(0)


def test_encode_token_tiles_lsb_first_code():
    spec = CodeSpec.build(256, 64)
    x = encode_token(5, spec)
    assert x.dtype == np.float32 and x.shape == (64,)
    assert x[:8].tolist() == [1, 0, 1, 0, 0, 0, 0, 0]
    assert np.array_equal(x, np.tile(x[:8], 8))
    assert not encode_token(0, spec).any()


def test_spec_validation():
    with pytest.raises(NonDivisibleWidth):
        CodeSpec.build(256, 60)
    with pytest.raises(InvalidCodeSpec):
        CodeSpec(vocab_size=256, code_width=9, lift_width=72)
    with pytest.raises(InvalidCodeSpec):
        CodeSpec.build(4, 2, matrix=BitMatrix.zeros(2))
    with pytest.raises(InvalidCodeSpec):
        CodeSpec.build(4, 2, matrix=BitMatrix.identity(3))


def test_token_out_of_range():
    spec = CodeSpec.build(1000, 20)
    with pytest.raises(TokenOutOfRange):
        encode_token(1000, spec)
    with pytest.raises(TokenOutOfRange):
        encode_batch(np.array([0, -1]), spec)


@pytest.mark.parametrize("recoder_seed", [None, 4])
def test_batch_path_matches_scalar_path(recoder_seed):
    spec = CodeSpec.build(300, 36, recoder_seed=recoder_seed)
    batch = encode_batch(np.arange(300), spec)
    for t in range(300):
        assert np.array_equal(batch[t], encode_token(t, spec))
    ids = np.array([[3, 299], [0, 17]])
    assert encode_batch(ids, spec).shape == (2, 2, 36)


def test_decode_inverts_recoding():
    spec = CodeSpec.build(300, 18, recoder_seed=2)
    for t in range(300):
        bits = encode_token(t, spec)[: spec.code_width].astype(int).tolist()
        assert decode_code(BitVector.from_bits(bits), spec) == t


@pytest.mark.parametrize("recoder_seed", [None, 7])
def test_injective_at_large_vocabulary(recoder_seed):
    spec = CodeSpec.build(65536, 32, recoder_seed=recoder_seed)
    report = verify_injectivity(spec)
    assert report.ok and report.colliding_pair is None


def test_injectivity_reports_collision():
    # deliberately singular recoder, bypassing validation
    broken = CodeSpec.model_construct(
        vocab_size=4,
        code_width=2,
        lift_width=2,
        recoder=Recoder.model_construct(matrix=BitMatrix.zeros(2), shift=BitVector.zeros(2), seed=None),
    )
    report = verify_injectivity(broken)
    assert not report.ok
    assert report.colliding_pair == (0, 1)


@pytest.mark.parametrize("k", range(2, 13))
def test_full_vocabulary_is_balanced_hypercube(k):
    for spec in (CodeSpec.build(1 << k, 2 * k), CodeSpec.build(1 << k, 2 * k, recoder_seed=k)):
        assert hypercube_covered(spec)
        report = verify_balance(spec)
        assert report.per_bit_ones == [1 << (k - 1)] * k
        assert report.is_balanced(k)


def test_balance_needs_full_vocabulary():
    spec = CodeSpec.build(1000, 10)
    assert len(code_set(spec)) == 1000
    assert not hypercube_covered(spec)
    with pytest.raises(NotFullVocabulary):
        verify_balance(spec)


@pytest.mark.parametrize("k", range(2, 11))
def test_effective_rank_is_code_width(k):
    assert effective_rank(CodeSpec.build(1 << k, 3 * k)) == k
    assert effective_rank(CodeSpec.build(1 << k, 3 * k, recoder_seed=k + 100)) == k


def test_effective_rank_small_vocabulary():
    assert effective_rank(CodeSpec.build(3, 4)) == 2
    assert effective_rank(CodeSpec.build(1000, 40)) <= 10


def test_frozen_table_matches_encoder(tmp_path):
    spec = CodeSpec.build(512, 27, recoder_seed=3)
    table = export_frozen_table(spec)
    assert not table.trainable
    assert not table.rows.flags.writeable
    for t in (0, 1, 255, 511):
        assert table.rows[t].tobytes() == encode_token(t, spec).tobytes()
    assert first_table_mismatch(table, spec) is None

    path = tmp_path / "table.bin"
    write_frozen_table(table, path)
    loaded = read_frozen_table(path)
    assert loaded.rows.tobytes() == table.rows.tobytes()


def test_corrupted_table_points_at_first_difference(tmp_path):
    spec = CodeSpec.build(256, 16)
    rows = export_frozen_table(spec).rows.copy()
    rows[37, 5] = 0.5
    rows[90, 1] = 2.0
    path = tmp_path / "table.bin"
    write_frozen_table(FrozenTable(rows=rows), path)
    assert first_table_mismatch(read_frozen_table(path), spec) == (37, 5)


def test_truncated_table_is_io_failure(tmp_path):
    path = tmp_path / "table.bin"
    write_frozen_table(export_frozen_table(CodeSpec.build(16, 8)), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(IoFailure):
        read_frozen_table(path)


def test_code_spec_files(tmp_path):
    seeded = CodeSpec.build(256, 64, recoder_seed=7)
    write_code_spec(seeded, tmp_path / "seeded.conf")
    assert "recoder.seed = 7" in (tmp_path / "seeded.conf").read_text()
    assert read_code_spec(tmp_path / "seeded.conf") == seeded

    a, b = sample_recoder(8, seed=99)
    explicit = CodeSpec.build(256, 64, matrix=a, shift=b)
    write_code_spec(explicit, tmp_path / "explicit.conf")
    assert (tmp_path / "explicit.matrix").exists()
    loaded = read_code_spec(tmp_path / "explicit.conf")
    assert loaded.recoder.matrix == a and loaded.recoder.shift == b


def test_trainable_input_params():
    assert trainable_input_params("learned", 256, 64) == 16_384
    assert trainable_input_params("learned", 65536, 1024) == 67_108_864
    assert trainable_input_params("fixed_code", 65536, 1024) == 0
    assert trainable_input_params("affine_recoded", 256, 64) == 0
