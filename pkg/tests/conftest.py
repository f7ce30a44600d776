from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
CORPUS_DIR = TESTS_DIR / "corpus"
SCRIPTS_DIR = TESTS_DIR.parent / "scripts"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def corpus_files() -> list[Path]:
    files = sorted(CORPUS_DIR.glob("*.nqir"))
    assert files, "corpus is missing; run scripts/generate_corpus.py"
    return files


def load_corpus(name: str) -> str:
    return (CORPUS_DIR / name).read_text()


@pytest.fixture(scope="session")
def corpus_builders():
    """The builder functions that generate the corpus, for executor tests."""
    sys.path.insert(0, str(SCRIPTS_DIR))
    try:
        import generate_corpus
    finally:
        sys.path.pop(0)
    return generate_corpus
