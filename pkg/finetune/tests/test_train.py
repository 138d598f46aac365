import json
import math
from pathlib import Path

import pytest
import torch

from preftune import lora
from preftune.data import DatasetError, load_pairs
from preftune.model import build_model
from preftune.train import TrainConfig, batch_loss, looks_like_code, smoke_eval, train


def write_pairs(path: Path, n: int = 16) -> Path:
    rows = []
    for i in range(n):
        rows.append(
            json.dumps(
                {
                    "prompt": "Please design a scoring function.",
                    "chosen": f"def score(x):\n    return x * {i} + 1",
                    "rejected": f"I cannot write code, sorry ({i}).",
                    "chosen_fitness": float(i),
                    "rejected_fitness": float(i) + 30.0,
                    "chosen_tier": 1,
                    "rejected_tier": 3,
                }
            )
        )
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def smoke_config(dataset: Path, out: Path, **overrides) -> TrainConfig:
    defaults = dict(
        dataset_path=str(dataset),
        output_dir=str(out),
        learning_rate=1e-3,
        epochs=10,
        batch_size=8,
        max_seq_len=128,
        adapter_rank=8,
        seed=0,
        max_steps=20,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestLoader:
    def test_loads_interchange_rows(self, tmp_path):
        path = write_pairs(tmp_path / "pairs.jsonl", 4)
        pairs = load_pairs(path)
        assert len(pairs) == 4
        assert pairs[0].chosen.startswith("def score")

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"prompt": "p", "chosen": "c"}\n')
        with pytest.raises(DatasetError, match="rejected"):
            load_pairs(path)

    def test_empty_dataset_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n")
        with pytest.raises(DatasetError):
            load_pairs(path)


class TestTrain:
    def test_twenty_steps_reduce_loss(self, tmp_path):
        dataset = write_pairs(tmp_path / "pairs.jsonl", 16)
        result = train(smoke_config(dataset, tmp_path / "out"))
        assert len(result.losses) == 20
        assert result.initial_loss == pytest.approx(math.log(2), abs=1e-3)
        assert result.final_loss < result.initial_loss

    def test_outputs_written(self, tmp_path):
        dataset = write_pairs(tmp_path / "pairs.jsonl", 8)
        result = train(smoke_config(dataset, tmp_path / "out", max_steps=4))
        lines = result.loss_csv.read_text().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == 5
        assert (result.adapter_dir / "adapter.pt").exists()
        assert (result.adapter_dir / "adapter_config.json").exists()

    def test_deterministic_given_seed(self, tmp_path):
        dataset = write_pairs(tmp_path / "pairs.jsonl", 8)
        a = train(smoke_config(dataset, tmp_path / "a", max_steps=5, seed=4))
        b = train(smoke_config(dataset, tmp_path / "b", max_steps=5, seed=4))
        assert a.losses == b.losses

    def test_fresh_model_batch_loss_is_ln2_everywhere(self, tmp_path):
        from preftune.data import batches, load_pairs

        dataset = write_pairs(tmp_path / "pairs.jsonl", 16)
        pairs = load_pairs(dataset)
        model = build_model("tiny-byte-lm", init_seed=1)
        lora.attach_adapters(model, rank=8, alpha=32.0, dropout=0.05)
        model.eval()
        generator = torch.Generator().manual_seed(0)
        for batch in batches(pairs, 4, 128, generator):
            loss = batch_loss(model, batch, beta=0.4)
            assert float(loss.detach()) == pytest.approx(math.log(2), abs=1e-3)


class TestOomTranslation:
    def test_allocation_failures_get_actionable_message(self):
        from preftune.train import OutOfMemory, _translate_oom

        raw = RuntimeError("DefaultCPUAllocator: can't allocate memory: you tried to allocate ...")
        translated = _translate_oom(raw, max_seq_len=2048)
        assert isinstance(translated, OutOfMemory)
        assert "max-seq-len" in str(translated)
        assert "1024" in str(translated)

    def test_unrelated_runtime_errors_pass_through(self):
        from preftune.train import _translate_oom

        raw = RuntimeError("shape mismatch")
        assert _translate_oom(raw, 128) is raw


class TestSmokeEval:
    def test_reports_extraction_rate(self, tmp_path):
        dataset = write_pairs(tmp_path / "pairs.jsonl", 4)
        config = smoke_config(dataset, tmp_path / "out", max_seq_len=96)
        report = smoke_eval(config, n_samples=3, max_new_tokens=12)
        assert report["n_samples"] == 3
        assert 0.0 <= report["extraction_success_rate"] <= 1.0
        assert len(report["samples"]) == 3

    def test_code_detector(self):
        assert looks_like_code("```python\ndef f():\n    pass\n```")
        assert looks_like_code("def select_next_node(a):\n    return a")
        assert not looks_like_code("no code here at all")


class TestCli:
    def test_train_then_smoke_eval(self, tmp_path):
        from preftune.cli import main

        dataset = write_pairs(tmp_path / "pairs.jsonl", 8)
        out = tmp_path / "run"
        code = main(
            [
                "train", "--dataset", str(dataset), "--out", str(out),
                "--learning-rate", "1e-3", "--batch-size", "8",
                "--max-seq-len", "96", "--adapter-rank", "4", "--max-steps", "4",
            ]
        )
        assert code == 0
        assert (out / "loss.csv").exists()
        code = main(
            [
                "smoke-eval", "--dataset", str(dataset), "--out", str(out),
                "--adapter", str(out / "adapter"), "--max-seq-len", "96",
                "--adapter-rank", "4", "--n-samples", "2", "--max-new-tokens", "8",
            ]
        )
        assert code == 0
        assert (out / "smoke_eval.json").exists()
