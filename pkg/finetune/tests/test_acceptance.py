"""Acceptance: DPO smoke criterion.

Zero-effect adapters reproduce ln 2 exactly, twenty steps on sixteen
synthetic pairs strictly reduce the loss, and a dataset produced by the
data factory's sample command trains with no transformation. The factory
is driven purely through its external interfaces: the database file
schema and the CLI.
"""

import json
import math
import subprocess
import sys
import time

import pytest

from preftune.train import TrainConfig, train
from test_train import smoke_config, write_pairs


def test_dpo_smoke_zero_adapter_ln2_and_loss_decreases(tmp_path):
    start = time.monotonic()
    dataset = write_pairs(tmp_path / "pairs.jsonl", 16)
    result = train(smoke_config(dataset, tmp_path / "out"))
    assert len(result.losses) == 20
    assert result.initial_loss == pytest.approx(math.log(2), abs=1e-3), (
        "zero-effect adapter must reproduce -log sigmoid(0) exactly"
    )
    assert result.final_loss < result.initial_loss, "training must strictly reduce the loss"
    assert time.monotonic() - start < 600
    print("PASS dpo smoke: step-0 loss ln 2, 20 steps strictly reduced loss")


def _factory_db_rows(n: int, task_id: str) -> list[str]:
    """Synthetic algorithm database in the factory's documented file schema."""
    rows = []
    for i in range(n):
        rows.append(
            json.dumps(
                {
                    "id": i + 1,
                    "task_id": task_id,
                    "source_text": (
                        "def select_next_node(current_node, destination_node, "
                        "unvisited_nodes, distance_matrix):\n"
                        f"    # candidate {i}\n"
                        f"    return unvisited_nodes[{i} % len(unvisited_nodes)]"
                    ),
                    "fitness": float(i) * 0.5,
                    "origin": "generated",
                    "valid": True,
                    "created_at": i,
                }
            )
        )
    return rows


def test_dpo_smoke_consumes_factory_dataset_unchanged(tmp_path):
    start = time.monotonic()
    task_id = "tsp-synth"
    db_path = tmp_path / "db.jsonl"
    db_path.write_text("\n".join(_factory_db_rows(60, task_id)) + "\n", encoding="utf-8")

    out_dir = tmp_path / "sampled"
    proc = subprocess.run(
        [
            sys.executable, "-m", "evopref.cli", "sample",
            "--db", str(db_path), "--task", task_id, "--strategy", "dar",
            "--m", "5", "--tau", "3.0", "--pairs", "8", "--seed", "0",
            "--out", str(out_dir),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    dataset = out_dir / "dataset.jsonl"
    assert dataset.exists()

    config = TrainConfig(
        dataset_path=str(dataset),
        output_dir=str(tmp_path / "trained"),
        learning_rate=1e-3,
        epochs=10,
        batch_size=8,
        max_seq_len=256,
        adapter_rank=8,
        seed=0,
        max_steps=6,
    )
    result = train(config)
    assert result.initial_loss == pytest.approx(math.log(2), abs=1e-3)
    assert result.final_loss < result.initial_loss
    assert time.monotonic() - start < 600
    print("PASS dpo smoke: factory-sampled dataset trained with no transformation")
