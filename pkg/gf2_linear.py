# gf2_linear.py
"""
Exact linear algebra over GF(2).

Bit convention (shared by every module): index j is the coefficient of 2**j,
i.e. LSB-first. A ``BitMatrix`` stores one packed Python int per row, with bit j
of ``rows[i]`` equal to entry A[i][j]; a ``BitVector`` packs its k bits the same
way. Row operations are word-level XORs, so elimination is exact.

Random matrices come from NumPy's Philox4x32-10 counter-based generator
(``numpy.random.Philox``), whose output for a given key is fixed by its
published round function and therefore reproduces across platforms.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from errors import DimensionMismatch, SamplingFailure, SingularMatrix

logger = logging.getLogger(__name__)

MAX_SAMPLING_ATTEMPTS = 1000


def _mask(k: int) -> int:
    return (1 << k) - 1


def _pack(bits: Iterable[int]) -> int:
    word = 0
    for j, bit in enumerate(bits):
        if bit not in (0, 1):
            raise ValueError(f"bit {j} is {bit!r}, expected 0 or 1")
        word |= bit << j
    return word


# -----------------------------
# Types
# -----------------------------
@dataclass(frozen=True)
class BitVector:
    k: int
    bits: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.bits < 0 or self.bits >> self.k:
            raise ValueError(f"bits do not fit in width {self.k}")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitVector":
        return cls(len(bits), _pack(bits))

    @classmethod
    def from_string(cls, text: str) -> "BitVector":
        """Character j of ``text`` is bit j."""
        return cls.from_bits([int(ch) for ch in text.strip()])

    @classmethod
    def zeros(cls, k: int) -> "BitVector":
        return cls(k, 0)

    @classmethod
    def ones(cls, k: int) -> "BitVector":
        return cls(k, _mask(k))

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.k:
            raise IndexError(j)
        return (self.bits >> j) & 1

    def __len__(self) -> int:
        return self.k

    def to_list(self) -> List[int]:
        return [(self.bits >> j) & 1 for j in range(self.k)]

    def to_string(self) -> str:
        return "".join(str(b) for b in self.to_list())

    def xor(self, other: "BitVector") -> "BitVector":
        if other.k != self.k:
            raise DimensionMismatch(f"width {self.k} vs {other.k}")
        return BitVector(self.k, self.bits ^ other.bits)


@dataclass(frozen=True)
class BitMatrix:
    k: int
    rows: Tuple[int, ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if len(self.rows) != self.k:
            raise ValueError(f"expected {self.k} rows, got {len(self.rows)}")
        for i, row in enumerate(self.rows):
            if row < 0 or row >> self.k:
                raise ValueError(f"row {i} does not fit in width {self.k}")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "BitMatrix":
        return cls(len(rows), tuple(_pack(r) for r in rows))

    @classmethod
    def from_strings(cls, rows: Sequence[str]) -> "BitMatrix":
        return cls.from_rows([[int(ch) for ch in r.strip()] for r in rows])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BitMatrix":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {arr.shape}")
        return cls.from_rows(arr.astype(np.int64).tolist())

    @classmethod
    def identity(cls, k: int) -> "BitMatrix":
        return cls(k, tuple(1 << i for i in range(k)))

    @classmethod
    def zeros(cls, k: int) -> "BitMatrix":
        return cls(k, (0,) * k)

    def entry(self, i: int, j: int) -> int:
        return (self.rows[i] >> j) & 1

    def to_array(self) -> np.ndarray:
        """Dense uint8 copy, ``out[i, j] = A[i][j]``."""
        out = np.zeros((self.k, self.k), dtype=np.uint8)
        for i, row in enumerate(self.rows):
            for j in range(self.k):
                out[i, j] = (row >> j) & 1
        return out

    def to_strings(self) -> List[str]:
        return ["".join(str(self.entry(i, j)) for j in range(self.k)) for i in range(self.k)]

    def swap_rows(self, a: int, b: int) -> "BitMatrix":
        rows = list(self.rows)
        rows[a], rows[b] = rows[b], rows[a]
        return BitMatrix(self.k, tuple(rows))


# -----------------------------
# Text format for fixtures
# -----------------------------
def format_bit_matrix(m: BitMatrix) -> str:
    return "\n".join([f"k={m.k}", *m.to_strings()]) + "\n"


def parse_bit_matrix(text: str) -> BitMatrix:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("k="):
        raise ValueError("bit matrix text must start with 'k=<int>'")
    k = int(lines[0][2:])
    body = lines[1:]
    if len(body) != k or any(len(r) != k or set(r) - {"0", "1"} for r in body):
        raise DimensionMismatch(f"expected {k} rows of {k} characters in {{0,1}}")
    return BitMatrix.from_strings(body)


# -----------------------------
# Operations
# -----------------------------
def _eliminate(rows: List[int], k: int) -> int:
    """In-place forward elimination; returns the rank."""
    rank = 0
    for col in range(k):
        bit = 1 << col
        pivot = next((r for r in range(rank, len(rows)) if rows[r] & bit), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r] & bit:
                rows[r] ^= rows[rank]
        rank += 1
    return rank


def gf2_rank(m: BitMatrix) -> int:
    return _eliminate(list(m.rows), m.k)


def gf2_is_invertible(m: BitMatrix) -> bool:
    return gf2_rank(m) == m.k


def gf2_invert(m: BitMatrix) -> BitMatrix:
    """Gauss-Jordan on the augmented matrix [m | I]; the identity half lives in bits k..2k-1."""
    k = m.k
    aug = [row | (1 << (k + i)) for i, row in enumerate(m.rows)]
    for col in range(k):
        bit = 1 << col
        pivot = next((r for r in range(col, k) if aug[r] & bit), None)
        if pivot is None:
            raise SingularMatrix(f"matrix of side {k} has rank {gf2_rank(m)}")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        for r in range(k):
            if r != col and aug[r] & bit:
                aug[r] ^= aug[col]
    return BitMatrix(k, tuple(row >> k for row in aug))


def gf2_matmul(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    if a.k != b.k:
        raise DimensionMismatch(f"side {a.k} vs {b.k}")
    rows = []
    for row in a.rows:
        acc = 0
        j = 0
        while row:
            if row & 1:
                acc ^= b.rows[j]
            row >>= 1
            j += 1
        rows.append(acc)
    return BitMatrix(a.k, tuple(rows))


def gf2_matvec(m: BitMatrix, v: BitVector) -> BitVector:
    if m.k != v.k:
        raise DimensionMismatch(f"matrix side {m.k} vs vector width {v.k}")
    out = 0
    for i, row in enumerate(m.rows):
        out |= ((row & v.bits).bit_count() & 1) << i
    return BitVector(m.k, out)


def affine_apply(a: BitMatrix, b: BitVector, v: BitVector) -> BitVector:
    if b.k != a.k:
        raise DimensionMismatch(f"matrix side {a.k} vs shift width {b.k}")
    return gf2_matvec(a, v).xor(b)


def affine_inverse(a: BitMatrix, b: BitVector) -> Tuple[BitMatrix, BitVector]:
    """(A, b) -> (A^-1, A^-1 b), the affine map undoing ``affine_apply(a, b, .)``."""
    a_inv = gf2_invert(a)
    return a_inv, gf2_matvec(a_inv, b)


def philox(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and an optional sub-stream key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=stream)))


def _sample_invertible_from(rng: np.random.Generator, k: int) -> BitMatrix:
    for attempt in range(1, MAX_SAMPLING_ATTEMPTS + 1):
        candidate = BitMatrix.from_array(rng.integers(0, 2, size=(k, k), dtype=np.uint8))
        if gf2_is_invertible(candidate):
            logger.debug("sampled invertible %dx%d matrix after %d attempt(s)", k, k, attempt)
            return candidate
    raise SamplingFailure(f"no invertible {k}x{k} matrix in {MAX_SAMPLING_ATTEMPTS} attempts")


def sample_invertible(k: int, seed: int) -> BitMatrix:
    """Uniform draw from GL(k, 2) by rejection sampling."""
    if k < 1:
        raise ValueError("k must be positive")
    return _sample_invertible_from(philox(seed), k)


def sample_recoder(k: int, seed: int) -> Tuple[BitMatrix, BitVector]:
    """A ~ uniform GL(k, 2), then b ~ uniform {0,1}^k, from one seeded stream."""
    if k < 1:
        raise ValueError("k must be positive")
    rng = philox(seed)
    a = _sample_invertible_from(rng, k)
    b = BitVector.from_bits(rng.integers(0, 2, size=k, dtype=np.uint8).tolist())
    return a, b


def gl_order(k: int) -> int:
    """|GL(k, 2)| = prod_{i<k} (2^k - 2^i)."""
    order = 1
    for i in range(k):
        order *= (1 << k) - (1 << i)
    return order


def all_matrices(k: int) -> Iterable[BitMatrix]:
    for rows in itertools.product(range(1 << k), repeat=k):
        yield BitMatrix(k, rows)


def count_invertible(k: int) -> int:
    return sum(1 for m in all_matrices(k) if gf2_is_invertible(m))
