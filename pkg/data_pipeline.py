# data_pipeline.py
"""
Corpus ingestion, byte-level tokenization, document-level splitting and
deterministic batch streaming.

Tokenizer: one token per byte (V=256), no special tokens. When documents are
packed into a stream they are joined with a single 0x00 separator byte.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from errors import EmptyCorpus, InsufficientData, IoFailure
from gf2_linear import philox

logger = logging.getLogger(__name__)

BYTE_VOCAB = 256
SEPARATOR = 0


@dataclass(frozen=True)
class Document:
    id: int
    content: bytes

    def __post_init__(self):
        if not self.content:
            raise EmptyCorpus(f"document {self.id} is empty")


def document_id(content: bytes) -> int:
    """Stable 64-bit id from content, so duplicates share one id."""
    return int.from_bytes(hashlib.blake2b(content, digest_size=8).digest(), "little")


def make_documents(contents: Sequence[bytes]) -> List[Document]:
    docs: Dict[int, Document] = {}
    dropped = 0
    for content in contents:
        if not content:
            continue
        doc_id = document_id(content)
        if doc_id in docs:
            dropped += 1
            continue
        docs[doc_id] = Document(doc_id, content)
    if dropped:
        logger.warning("dropped %d duplicate document(s)", dropped)
    return list(docs.values())


def load_corpus(path: Union[str, Path]) -> List[Document]:
    """A directory holds one document per file; a single file holds documents
    separated by blank lines."""
    path = Path(path)
    try:
        if path.is_dir():
            files = sorted(p for p in path.rglob("*") if p.is_file())
            contents = [p.read_bytes().strip() for p in files]
        else:
            raw = path.read_bytes().replace(b"\r\n", b"\n")
            contents = [chunk.strip() for chunk in raw.split(b"\n\n")]
    except OSError as e:
        raise IoFailure(f"cannot read corpus {path}: {e}") from e
    docs = make_documents(contents)
    if not docs:
        raise EmptyCorpus(f"no documents found in {path}")
    logger.info("loaded %d document(s), %d bytes from %s", len(docs), sum(len(d.content) for d in docs), path)
    return docs


def tokenize_bytes(doc: Document) -> np.ndarray:
    return np.frombuffer(doc.content, dtype=np.uint8).astype(np.int64)


def detokenize(ids: Sequence[int]) -> bytes:
    return bytes(int(i) for i in ids)


# -----------------------------
# Split
# -----------------------------
def split_score(doc_id: int, seed: int) -> float:
    """Uniform in [0, 1), a function of (id, seed) only."""
    digest = hashlib.blake2b(f"{seed}:{doc_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


@dataclass(frozen=True)
class SplitAssignment:
    val_fraction: float
    seed: int
    assignment: Dict[int, str]  # id -> "train" | "val"

    def ids(self, split: str) -> List[int]:
        return sorted(i for i, s in self.assignment.items() if s == split)

    def documents(self, corpus: Sequence[Document], split: str) -> List[Document]:
        return [d for d in corpus if self.assignment.get(d.id) == split]


def split_documents(corpus: Sequence[Document], val_fraction: float, seed: int) -> SplitAssignment:
    if not corpus:
        raise EmptyCorpus("cannot split an empty corpus")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    assignment = {d.id: ("val" if split_score(d.id, seed) < val_fraction else "train") for d in corpus}
    n_val = sum(1 for s in assignment.values() if s == "val")
    logger.info("split %d documents: %d train, %d val", len(assignment), len(assignment) - n_val, n_val)
    return SplitAssignment(val_fraction=val_fraction, seed=seed, assignment=assignment)


# -----------------------------
# Streaming
# -----------------------------
def pack_documents(docs: Sequence[Document], seed: Optional[int] = None, epoch: int = 0) -> np.ndarray:
    """Concatenate in id order, or in a (seed, epoch)-shuffled order; 0x00 between documents."""
    ordered = sorted(docs, key=lambda d: d.id)
    if seed is not None:
        perm = philox(seed, epoch).permutation(len(ordered))
        ordered = [ordered[i] for i in perm]
    parts: List[np.ndarray] = []
    for i, doc in enumerate(ordered):
        if i:
            parts.append(np.array([SEPARATOR], dtype=np.int64))
        parts.append(tokenize_bytes(doc))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def windows(stream: np.ndarray, context_len: int) -> np.ndarray:
    """Non-overlapping windows of context_len+1 tokens; the ragged tail is dropped."""
    span = context_len + 1
    n = len(stream) // span
    return stream[: n * span].reshape(n, span)


def batch_stream(
    docs: Sequence[Document],
    context_len: int,
    batch_size: int,
    seed: Optional[int],
    epochs: Optional[int] = 1,
) -> Iterator[Dict[str, np.ndarray]]:
    """Yields {tokens[B,T], targets[B,T]}; targets are tokens shifted by one.

    ``seed=None`` keeps id order (validation). ``epochs=None`` streams forever,
    reshuffling each epoch. The last batch of an epoch may be smaller.
    """
    if batch_size < 1 or context_len < 1:
        raise ValueError("batch_size and context_len must be positive")
    first = windows(pack_documents(docs, seed, 0), context_len)
    if len(first) == 0:
        raise InsufficientData(f"fewer than {context_len + 1} tokens available")
    epoch = 0
    while epochs is None or epoch < epochs:
        win = first if epoch == 0 else windows(pack_documents(docs, seed, epoch), context_len)
        for start in range(0, len(win), batch_size):
            chunk = win[start : start + batch_size]
            yield {"tokens": chunk[:, :-1], "targets": chunk[:, 1:]}
        epoch += 1
