# test_gf2_linear.py
import itertools
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

import gf2_linear
from errors import DimensionMismatch, SamplingFailure, SingularMatrix
from gf2_linear import (
    BitMatrix,
    BitVector,
    affine_apply,
    affine_inverse,
    all_matrices,
    count_invertible,
    format_bit_matrix,
    gf2_invert,
    gf2_is_invertible,
    gf2_matmul,
    gf2_matvec,
    gf2_rank,
    gl_order,
    parse_bit_matrix,
    sample_invertible,
    sample_recoder,
)


def _span_size(m: BitMatrix) -> int:
    """Distinct XORs over all row subsets, 2^rank by definition."""
    span = set()
    for mask in range(1 << m.k):
        acc = 0
        for i in range(m.k):
            if mask >> i & 1:
                acc ^= m.rows[i]
        span.add(acc)
    return len(span)


def test_bit_convention_is_lsb_first():
    v = BitVector.from_string("101")
    assert v.bits == 0b101
    assert v.to_list() == [1, 0, 1]
    m = BitMatrix.from_strings(["110", "011", "101"])
    assert m.entry(0, 0) == 1 and m.entry(0, 2) == 0
    assert m.to_array().tolist() == [[1, 1, 0], [0, 1, 1], [1, 0, 1]]


def test_rank_examples():
    assert gf2_rank(BitMatrix.identity(4)) == 4
    assert gf2_rank(BitMatrix.zeros(4)) == 0
    m = BitMatrix.from_strings(["110", "011", "101"])
    assert gf2_rank(m) == 2
    assert _span_size(m) == 2 ** 2


def test_rank_matches_span_for_all_3x3():
    for m in all_matrices(3):
        assert _span_size(m) == 2 ** gf2_rank(m)


@pytest.mark.parametrize("k,expected", [(2, 6), (3, 168), (4, 20160)])
def test_exhaustive_invertible_count(k, expected):
    assert gl_order(k) == expected
    assert count_invertible(k) == expected


def test_invertibility_trivial_cases():
    for k in range(1, 6):
        assert gf2_is_invertible(BitMatrix.identity(k))
        assert not gf2_is_invertible(BitMatrix.zeros(k))


@pytest.mark.parametrize("k", [2, 3])
def test_inverse_verified_by_multiplication(k):
    identity = BitMatrix.identity(k)
    for m in all_matrices(k):
        if not gf2_is_invertible(m):
            with pytest.raises(SingularMatrix):
                gf2_invert(m)
            continue
        inv = gf2_invert(m)
        assert gf2_matmul(m, inv) == identity
        assert gf2_matmul(inv, m) == identity
        assert gf2_invert(inv) == m


def test_self_inverse_example():
    m = BitMatrix.from_strings(["11", "01"])
    assert gf2_invert(m) == m
    assert gf2_invert(BitMatrix.identity(5)) == BitMatrix.identity(5)


def test_matvec_examples():
    m = BitMatrix.from_strings(["110", "011", "101"])
    assert gf2_matvec(m, BitVector.from_string("101")).to_string() == "110"
    v = BitVector.from_string("1101")
    assert gf2_matvec(BitMatrix.identity(4), v) == v
    assert gf2_matvec(BitMatrix.zeros(4), v) == BitVector.zeros(4)


def test_matvec_matches_dense_product():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(0, 2, size=(6, 6))
        x = rng.integers(0, 2, size=6)
        got = gf2_matvec(BitMatrix.from_array(a), BitVector.from_bits(x.tolist()))
        assert got.to_list() == ((a @ x) % 2).tolist()


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gf2_matvec(BitMatrix.identity(3), BitVector.zeros(4))
    with pytest.raises(DimensionMismatch):
        affine_apply(BitMatrix.identity(3), BitVector.zeros(2), BitVector.zeros(3))
    with pytest.raises(DimensionMismatch):
        gf2_matmul(BitMatrix.identity(2), BitMatrix.identity(3))


def test_affine_apply_examples():
    a = BitMatrix.identity(4)
    assert affine_apply(a, BitVector.zeros(4), BitVector.from_string("1010")).to_string() == "1010"
    assert affine_apply(a, BitVector.ones(4), BitVector.from_string("1010")).to_string() == "0101"


def test_affine_inverse_undoes_apply():
    a, b = sample_recoder(4, seed=11)
    a_inv, c = affine_inverse(a, b)
    images = set()
    for bits in itertools.product([0, 1], repeat=4):
        v = BitVector.from_bits(list(bits))
        y = affine_apply(a, b, v)
        images.add(y.bits)
        assert affine_apply(a_inv, c, y) == v
    assert len(images) == 16


@pytest.mark.parametrize("k", list(range(1, 11)))
def test_affine_round_trip_is_a_bijection(k):
    a, b = sample_recoder(k, seed=100 + k)
    a_inv, c = affine_inverse(a, b)
    images = set()
    for word in range(1 << k):
        v = BitVector(k, word)
        y = affine_apply(a, b, v)
        images.add(y.bits)
        assert affine_apply(a_inv, c, y) == v
    assert len(images) == 1 << k


def test_sampling_is_deterministic_and_invertible():
    for k in (1, 2, 8, 16):
        m = sample_invertible(k, seed=3)
        assert gf2_is_invertible(m)
        assert sample_invertible(k, seed=3) == m
    assert sample_invertible(8, seed=0) != sample_invertible(8, seed=1)
    a, b = sample_recoder(8, seed=5)
    assert (a, b) == sample_recoder(8, seed=5)
    assert gf2_is_invertible(a)


def test_sampling_failure_after_attempt_budget(monkeypatch):
    monkeypatch.setattr(gf2_linear, "MAX_SAMPLING_ATTEMPTS", 0)
    with pytest.raises(SamplingFailure):
        sample_invertible(4, seed=0)


def test_bit_matrix_text_format():
    m = sample_invertible(5, seed=9)
    text = format_bit_matrix(m)
    assert text.splitlines()[0] == "k=5"
    assert parse_bit_matrix(text) == m
    with pytest.raises(DimensionMismatch):
        parse_bit_matrix("k=2\n10\n")


def test_malformed_values_rejected():
    with pytest.raises(ValueError):
        BitVector.from_bits([0, 2])
    with pytest.raises(ValueError):
        BitMatrix(2, (0b100, 0))


def test_rank_unchanged_by_row_swaps():
    for m in all_matrices(3):
        r = gf2_rank(m)
        for i, j in itertools.combinations(range(3), 2):
            swapped = m.swap_rows(i, j)
            assert swapped.rows[i] == m.rows[j] and swapped.rows[j] == m.rows[i]
            assert gf2_rank(swapped) == r


@pytest.mark.parametrize("k", [1, 2, 3])
def test_invertible_exactly_when_map_is_bijection(k):
    for m in all_matrices(k):
        images = {gf2_matvec(m, BitVector(k, word)).bits for word in range(1 << k)}
        assert gf2_is_invertible(m) == (len(images) == 1 << k)


def test_sampling_is_uniform_over_invertible_matrices():
    draws = 6000
    counts = Counter(sample_invertible(2, seed=s).rows for s in range(draws))
    assert len(counts) == gl_order(2)
    expected = draws / gl_order(2)
    assert all(abs(n - expected) <= 0.2 * expected for n in counts.values())
    assert chisquare(list(counts.values())).pvalue > 1e-3

    counts = Counter(sample_invertible(3, seed=s).rows for s in range(draws))
    observed = [counts.get(m.rows, 0) for m in all_matrices(3) if gf2_is_invertible(m)]
    assert sum(observed) == draws and len(observed) == gl_order(3)
    assert chisquare(observed).pvalue > 1e-4
