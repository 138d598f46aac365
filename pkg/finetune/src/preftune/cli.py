"""Command-line entry points: train on a preference file, then smoke-eval."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from preftune.train import TrainConfig, smoke_eval, train


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="preference-pair JSONL file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--base-model", default="tiny-byte-lm")
    parser.add_argument("--beta", type=float, default=0.4)
    parser.add_argument("--learning-rate", type=float, default=5e-6)
    parser.add_argument("--warmup-ratio", type=float, default=0.05)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--max-seq-len", type=int, default=2048)
    parser.add_argument("--adapter-rank", type=int, default=64)
    parser.add_argument("--adapter-alpha", type=float, default=32.0)
    parser.add_argument("--adapter-dropout", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-steps", type=int, default=None)


def _config_from(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        dataset_path=args.dataset,
        output_dir=args.out,
        base_model=args.base_model,
        beta=args.beta,
        learning_rate=args.learning_rate,
        warmup_ratio=args.warmup_ratio,
        epochs=args.epochs,
        batch_size=args.batch_size,
        max_seq_len=args.max_seq_len,
        adapter_rank=args.adapter_rank,
        adapter_alpha=args.adapter_alpha,
        adapter_dropout=args.adapter_dropout,
        seed=args.seed,
        max_steps=args.max_steps,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="preftune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train_parser = sub.add_parser("train", help="fit adapters with the DPO loss")
    _add_config_args(train_parser)

    eval_parser = sub.add_parser("smoke-eval", help="sample from a tuned model")
    _add_config_args(eval_parser)
    eval_parser.add_argument("--adapter", default=None, help="adapter directory")
    eval_parser.add_argument("--n-samples", type=int, default=8)
    eval_parser.add_argument("--max-new-tokens", type=int, default=64)
    eval_parser.add_argument("--temperature", type=float, default=1.0)

    args = parser.parse_args(argv)
    config = _config_from(args)

    if args.command == "train":
        result = train(config)
        print(
            json.dumps(
                {
                    "steps": len(result.losses),
                    "initial_loss": result.initial_loss,
                    "final_loss": result.final_loss,
                    "loss_csv": str(result.loss_csv),
                    "adapter_dir": str(result.adapter_dir),
                }
            )
        )
        return 0

    report = smoke_eval(
        config,
        adapter_dir=args.adapter,
        n_samples=args.n_samples,
        max_new_tokens=args.max_new_tokens,
        temperature=args.temperature,
    )
    out_path = Path(args.out) / "smoke_eval.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({k: report[k] for k in ("n_samples", "extraction_success_rate")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
