"""Loader for the preference-pair JSONL interchange format.

One object per line with keys {prompt, chosen, rejected, chosen_fitness,
rejected_fitness, chosen_tier, rejected_tier}; files produced by the data
factory load without transformation. Only the three text fields matter for
training, the rest ride along as metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from preftune.model import BOS_ID, encode

REQUIRED_KEYS = ("prompt", "chosen", "rejected")


class DatasetError(ValueError):
    """The dataset file violates the interchange schema."""


@dataclass(frozen=True)
class Pair:
    prompt: str
    chosen: str
    rejected: str


def load_pairs(path: str | Path) -> list[Pair]:
    pairs: list[Pair] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"line {lineno}: expected an object")
            missing = [k for k in REQUIRED_KEYS if k not in obj]
            if missing:
                raise DatasetError(f"line {lineno}: missing field {missing[0]!r}")
            pairs.append(Pair(obj["prompt"], obj["chosen"], obj["rejected"]))
    if not pairs:
        raise DatasetError("dataset holds no pairs")
    return pairs


def encode_example(prompt: str, completion: str, max_seq_len: int) -> tuple[list[int], list[int]]:
    """Token ids [BOS, prompt..., completion...] plus a completion mask.

    When the pair exceeds ``max_seq_len`` the prompt is truncated from the
    left; the completion carries the loss, so it is kept whole as long as
    it fits at all.
    """
    prompt_ids = encode(prompt)
    completion_ids = encode(completion)
    completion_ids = completion_ids[: max_seq_len - 2]
    room = max_seq_len - 1 - len(completion_ids)
    prompt_ids = prompt_ids[-max(room, 0) :] if room > 0 else []
    ids = [BOS_ID] + prompt_ids + completion_ids
    mask = [0] * (1 + len(prompt_ids)) + [1] * len(completion_ids)
    return ids, mask


def collate(examples: list[tuple[list[int], list[int]]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to the batch maximum; padded positions stay outside the mask."""
    width = max(len(ids) for ids, _ in examples)
    tokens = torch.zeros(len(examples), width, dtype=torch.long)
    mask = torch.zeros(len(examples), width, dtype=torch.long)
    for row, (ids, m) in enumerate(examples):
        tokens[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[row, : len(m)] = torch.tensor(m, dtype=torch.long)
    return tokens, mask


def batches(pairs: list[Pair], batch_size: int, max_seq_len: int, generator: torch.Generator):
    """Shuffled batches of (chosen_tokens, chosen_mask, rejected_tokens, rejected_mask)."""
    order = torch.randperm(len(pairs), generator=generator).tolist()
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        chosen = collate([encode_example(p.prompt, p.chosen, max_seq_len) for p in chunk])
        rejected = collate([encode_example(p.prompt, p.rejected, max_seq_len) for p in chunk])
        yield chosen[0], chosen[1], rejected[0], rejected[1]
