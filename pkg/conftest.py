# conftest.py
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import run_config  # noqa: E402
from transformer_lm import ModelConfig  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_registry(monkeypatch, tmp_path):
    """Registry and outputs default to the test's temp dir, whatever the shell env says."""
    monkeypatch.setattr(run_config, "DB_PATH", None)
    monkeypatch.setattr(run_config, "OUT_DIR", str(tmp_path / "runs"))


@pytest.fixture
def tiny_config():
    def make(input_kind="fixed_code", **overrides):
        fields = dict(vocab_size=256, d_model=32, n_layers=2, n_heads=2, context_len=16, input_kind=input_kind)
        fields.update(overrides)
        return ModelConfig(**fields)

    return make


def _documents(n: int, seed: int = 0):
    words = ["alpha", "beta", "gamma", "delta", "code", "token", "table", "free", "lift", "tile"]
    docs = []
    for i in range(n):
        body = " ".join(words[(i * 7 + j * (seed + 3)) % len(words)] for j in range(18))
        docs.append(f"doc {i}: {body}.")
    return docs


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("\n\n".join(_documents(40)) + "\n")
    return path


@pytest.fixture
def corpus_dir(tmp_path):
    root = tmp_path / "docs"
    root.mkdir()
    for i, text in enumerate(_documents(5)):
        (root / f"{i:02d}.txt").write_text(text)
    return root


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full training runs (deselect with -m 'not slow')")
