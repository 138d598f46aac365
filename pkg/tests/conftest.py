from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # expose tests/oracles.py

from evopref.db import AlgorithmRecord, AlgorithmStore


def make_store(gaps, task_id: str = "toy") -> AlgorithmStore:
    """Store with one valid record per gap, sources distinct by index."""
    store = AlgorithmStore()
    for i, gap in enumerate(gaps):
        store.insert(
            AlgorithmRecord(
                task_id=task_id,
                source_text=f"def h():\n    return {i}",
                fitness=float(gap),
                origin="generated",
            )
        )
    return store


@pytest.fixture
def toy_store() -> AlgorithmStore:
    return make_store([3.0, 1.0, 2.0])
