# token_codes.py
"""
Table-free input interface: token id t -> x(t).

    c(t)_j = floor(t / 2^j) mod 2            canonical minimal code, K = ceil(log2 V)
    c~(t)  = A c(t) xor b                    optional affine recoding, A in GL(K, 2)
    x(t)   = tile(c~(t), d / K) as 0.0/1.0   zero-parameter lift

Bits are cast to exactly 0.0 and 1.0; no scaling or centering is applied.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from errors import (
    DimensionMismatch,
    InvalidCodeSpec,
    IoFailure,
    NonDivisibleWidth,
    NotFullVocabulary,
    TokenOutOfRange,
)
from gf2_linear import (
    BitMatrix,
    BitVector,
    affine_apply,
    affine_inverse,
    format_bit_matrix,
    gf2_is_invertible,
    parse_bit_matrix,
    sample_recoder,
)

logger = logging.getLogger(__name__)

INPUT_KINDS = ("learned", "fixed_code", "affine_recoded")


def minimal_width(vocab_size: int) -> int:
    """ceil(log2 V); V=1 gets width 1 so the tiling rule stays meaningful."""
    if vocab_size < 1:
        raise InvalidCodeSpec(f"vocab_size must be >= 1, got {vocab_size}")
    return max(1, (vocab_size - 1).bit_length())


# -----------------------------
# CodeSpec
# -----------------------------
class Recoder(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: BitMatrix
    shift: BitVector
    seed: Optional[int] = None  # provenance only


class CodeSpec(BaseModel):
    """V, K, optional affine recoder (A, b) and lift width d.

    Validation enforces K = ceil(log2 V), A invertible and K | d. Tests that need
    a deliberately broken spec go through ``CodeSpec.model_construct``.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    vocab_size: int
    code_width: int
    lift_width: int
    recoder: Optional[Recoder] = None

    @model_validator(mode="after")
    def _check(self) -> "CodeSpec":
        if self.vocab_size < 1:
            raise InvalidCodeSpec("vocab_size must be >= 1")
        expected = minimal_width(self.vocab_size)
        if self.code_width != expected:
            raise InvalidCodeSpec(
                f"code_width {self.code_width} is not minimal for V={self.vocab_size} (expected {expected})"
            )
        if self.lift_width < 1 or self.lift_width % self.code_width:
            raise NonDivisibleWidth(
                f"lift_width {self.lift_width} is not a positive multiple of K={self.code_width}"
            )
        if self.recoder is not None:
            if self.recoder.matrix.k != self.code_width or self.recoder.shift.k != self.code_width:
                raise InvalidCodeSpec("recoder dimensions do not match code_width")
            if not gf2_is_invertible(self.recoder.matrix):
                raise InvalidCodeSpec("recoder matrix is singular over GF(2)")
        return self

    @classmethod
    def build(
        cls,
        vocab_size: int,
        lift_width: int,
        recoder_seed: Optional[int] = None,
        matrix: Optional[BitMatrix] = None,
        shift: Optional[BitVector] = None,
    ) -> "CodeSpec":
        k = minimal_width(vocab_size)
        recoder = None
        if matrix is not None:
            recoder = Recoder(matrix=matrix, shift=shift or BitVector.zeros(k))
        elif recoder_seed is not None:
            a, b = sample_recoder(k, recoder_seed)
            recoder = Recoder(matrix=a, shift=b, seed=recoder_seed)
        return cls(vocab_size=vocab_size, code_width=k, lift_width=lift_width, recoder=recoder)

    @property
    def tiles(self) -> int:
        return self.lift_width // self.code_width

    @property
    def is_full_vocabulary(self) -> bool:
        return self.vocab_size == 1 << self.code_width


# -----------------------------
# Scalar path
# -----------------------------
def canonical_code(t: int, k: int) -> BitVector:
    if not 0 <= t < (1 << k):
        raise TokenOutOfRange(f"token {t} outside [0, 2^{k})")
    return BitVector(k, t)


def recode(code: BitVector, spec: CodeSpec) -> BitVector:
    if code.k != spec.code_width:
        raise DimensionMismatch(f"code width {code.k} vs K={spec.code_width}")
    if spec.recoder is None:
        return code
    return affine_apply(spec.recoder.matrix, spec.recoder.shift, code)


def lift(code: BitVector, d: int) -> np.ndarray:
    if d < 1 or d % code.k:
        raise NonDivisibleWidth(f"width {d} is not a positive multiple of {code.k}")
    return np.tile(np.asarray(code.to_list(), dtype=np.float32), d // code.k)


def encode_token(t: int, spec: CodeSpec) -> np.ndarray:
    if not 0 <= t < spec.vocab_size:
        raise TokenOutOfRange(f"token {t} outside [0, {spec.vocab_size})")
    return lift(recode(canonical_code(t, spec.code_width), spec), spec.lift_width)


def decode_code(code: BitVector, spec: CodeSpec) -> int:
    """Recover t from its (recoded) code."""
    if spec.recoder is not None:
        a_inv, c = affine_inverse(spec.recoder.matrix, spec.recoder.shift)
        code = affine_apply(a_inv, c, code)
    if code.bits >= spec.vocab_size:
        raise TokenOutOfRange(f"code {code.to_string()} is not assigned to any token")
    return code.bits


# -----------------------------
# Vectorised path
# -----------------------------
def _code_bits(ids: np.ndarray, spec: CodeSpec) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= spec.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {spec.vocab_size})")
    shifts = np.arange(spec.code_width, dtype=np.int64)
    bits = ((ids[..., None] >> shifts) & 1).astype(np.uint8)
    if spec.recoder is not None:
        a = spec.recoder.matrix.to_array().astype(np.int64)
        b = np.asarray(spec.recoder.shift.to_list(), dtype=np.int64)
        bits = (((bits.astype(np.int64) @ a.T) & 1) ^ b).astype(np.uint8)
    return bits


def encode_batch(ids: np.ndarray, spec: CodeSpec, dtype=np.float32) -> np.ndarray:
    """``encode_token`` over an array of ids: shape ids.shape + (d,), bit-identical."""
    return np.tile(_code_bits(ids, spec), spec.tiles).astype(dtype)


def code_set(spec: CodeSpec) -> set:
    bits = _code_bits(np.arange(spec.vocab_size), spec)
    weights = np.int64(1) << np.arange(spec.code_width, dtype=np.int64)
    return set((bits.astype(np.int64) @ weights).tolist())


def hypercube_covered(spec: CodeSpec) -> bool:
    return code_set(spec) == set(range(1 << spec.code_width))


# -----------------------------
# Frozen table
# -----------------------------
@dataclass(frozen=True)
class FrozenTable:
    rows: np.ndarray  # [V, d] float32, not trainable
    trainable: bool = False

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]


def export_frozen_table(spec: CodeSpec) -> FrozenTable:
    rows = encode_batch(np.arange(spec.vocab_size), spec, dtype=np.float32)
    rows.setflags(write=False)
    return FrozenTable(rows=rows)


def write_frozen_table(table: FrozenTable, path: Union[str, Path]) -> None:
    header = f"V={table.vocab_size} d={table.width} dtype=f32\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(table.rows, dtype="<f4").tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write frozen table {path}: {e}") from e


def read_frozen_table(path: Union[str, Path]) -> FrozenTable:
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").split()
            fields = dict(item.split("=", 1) for item in header)
            v, d = int(fields["V"]), int(fields["d"])
            if fields.get("dtype") != "f32":
                raise IoFailure(f"unsupported dtype {fields.get('dtype')!r} in {path}")
            payload = fh.read()
    except (OSError, KeyError, ValueError) as e:
        raise IoFailure(f"cannot read frozen table {path}: {e}") from e
    if len(payload) != v * d * 4:
        raise IoFailure(f"{path}: expected {v * d * 4} payload bytes, found {len(payload)}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(v, d).astype(np.float32)
    return FrozenTable(rows=rows)


def first_table_mismatch(table: FrozenTable, spec: CodeSpec) -> Optional[Tuple[int, int]]:
    """First (t, column) where the table differs bit-wise from on-the-fly encoding."""
    expected = encode_batch(np.arange(spec.vocab_size), spec, dtype=np.float32)
    if table.rows.shape != expected.shape:
        return (0, 0)
    diff = table.rows.view(np.uint32) != expected.view(np.uint32)
    if not diff.any():
        return None
    t, col = np.argwhere(diff)[0]
    return int(t), int(col)


# -----------------------------
# CodeSpec files
# -----------------------------
def write_code_spec(spec: CodeSpec, path: Union[str, Path], matrix_file: Optional[Union[str, Path]] = None) -> None:
    """Writes dotted-key text; an explicit recoder is stored beside it as a bit-matrix file."""
    lines = [
        f"vocab_size = {spec.vocab_size}",
        f"code_width = {spec.code_width}",
        f"lift_width = {spec.lift_width}",
    ]
    rec = spec.recoder
    try:
        if rec is not None:
            if rec.seed is not None and matrix_file is None:
                lines.append(f"recoder.seed = {rec.seed}")
            else:
                matrix_file = Path(matrix_file or Path(path).with_suffix(".matrix"))
                matrix_file.write_text(format_bit_matrix(rec.matrix))
                lines.append(f"recoder.matrix_file = {matrix_file.name}")
                lines.append(f"recoder.shift = {rec.shift.to_string()}")
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write code spec {path}: {e}") from e


def _int_field(fields: Dict[str, str], key: str) -> int:
    try:
        return int(fields[key])
    except KeyError:
        raise InvalidCodeSpec(f"code spec is missing {key}") from None
    except ValueError:
        raise InvalidCodeSpec(f"{key} must be an integer, got {fields[key]!r}") from None


def code_spec_from_mapping(fields: Dict[str, str], base_dir: Union[str, Path] = ".") -> CodeSpec:
    v = _int_field(fields, "vocab_size")
    d = _int_field(fields, "lift_width")
    matrix = shift = None
    seed = None
    if "recoder.matrix_file" in fields:
        try:
            text = (Path(base_dir) / fields["recoder.matrix_file"]).read_text()
        except OSError as e:
            raise IoFailure(f"cannot read recoder matrix: {e}") from e
        try:
            matrix = parse_bit_matrix(text)
            shift = BitVector.from_string(fields.get("recoder.shift", "0" * matrix.k))
        except ValueError as e:
            raise InvalidCodeSpec(f"bad recoder: {e}") from e
    elif "recoder.seed" in fields:
        seed = _int_field(fields, "recoder.seed")
    spec = CodeSpec.build(v, d, recoder_seed=seed, matrix=matrix, shift=shift)
    if "code_width" in fields and _int_field(fields, "code_width") != spec.code_width:
        raise InvalidCodeSpec(f"code_width {fields['code_width']} is not minimal for V={v}")
    return spec


def read_code_spec(path: Union[str, Path]) -> CodeSpec:
    from run_config import parse_dotted

    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoFailure(f"cannot read code spec {path}: {e}") from e
    return code_spec_from_mapping(parse_dotted(text), base_dir=Path(path).parent)


# -----------------------------
# Verification
# -----------------------------
@dataclass(frozen=True)
class InjectivityReport:
    ok: bool
    colliding_pair: Optional[Tuple[int, int]] = None


def verify_injectivity(spec: CodeSpec) -> InjectivityReport:
    x = encode_batch(np.arange(spec.vocab_size), spec, dtype=np.float32)
    _, first, inverse = np.unique(x, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    if len(first) == spec.vocab_size:
        return InjectivityReport(ok=True)
    dup = next(t for t in range(spec.vocab_size) if first[inverse[t]] != t)
    pair = (int(first[inverse[dup]]), int(dup))
    logger.warning("collision: tokens %d and %d share an input vector", *pair)
    return InjectivityReport(ok=False, colliding_pair=pair)


@dataclass(frozen=True)
class BalanceReport:
    per_bit_ones: List[int]
    pair_pattern_counts: Dict[Tuple[int, int], Dict[str, int]]

    def is_balanced(self, k: int) -> bool:
        half, quarter = 1 << (k - 1), (1 << (k - 2)) if k >= 2 else 0
        if any(c != half for c in self.per_bit_ones):
            return False
        return all(n == quarter for counts in self.pair_pattern_counts.values() for n in counts.values())


def verify_balance(spec: CodeSpec) -> BalanceReport:
    if not spec.is_full_vocabulary:
        raise NotFullVocabulary(f"V={spec.vocab_size} < 2^{spec.code_width}")
    bits = _code_bits(np.arange(spec.vocab_size), spec).astype(np.int64)
    per_bit = bits.sum(axis=0).tolist()
    pairs: Dict[Tuple[int, int], Dict[str, int]] = {}
    for i, j in combinations(range(spec.code_width), 2):
        pattern = bits[:, i] * 2 + bits[:, j]
        counts = np.bincount(pattern, minlength=4)
        pairs[(i, j)] = {f"{p >> 1}{p & 1}": int(counts[p]) for p in range(4)}
    return BalanceReport(per_bit_ones=[int(c) for c in per_bit], pair_pattern_counts=pairs)


def exact_rank(rows: np.ndarray) -> int:
    """Rank over the rationals via fraction-free elimination on Python ints."""
    basis: List[Tuple[int, List[int]]] = []  # (pivot column, row)
    rows = np.asarray(rows)
    if rows.size == 0:
        return 0
    # duplicate rows and columns leave the rank unchanged
    unique = np.unique(np.unique(rows, axis=0), axis=1)
    n_cols = unique.shape[1]
    for raw in unique:
        row = [int(x) for x in raw]
        for col, b in basis:
            if row[col]:
                f, g = b[col], row[col]
                row = [f * x - g * y for x, y in zip(row, b)]
        pivot = next((c for c, x in enumerate(row) if x), None)
        if pivot is None:
            continue
        common = math.gcd(*row)
        basis.append((pivot, [x // common for x in row]))
        if len(basis) == n_cols:
            break
    return len(basis)


def effective_rank(spec: CodeSpec) -> int:
    x = encode_batch(np.arange(spec.vocab_size), spec, dtype=np.float64)
    return exact_rank(x.astype(np.int64))


def trainable_input_params(input_kind: str, vocab_size: int, d_model: int) -> int:
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input kind {input_kind!r}")
    return vocab_size * d_model if input_kind == "learned" else 0
