"""Tiny byte-level causal language models, built locally and deterministically.

The base-model identifier selects an architecture preset; weights come from
a seeded initialization, so "the base model" is reproducible everywhere
without downloads. Sub-million parameters: these exist to exercise the
training mechanics, not to write good code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

BOS_ID = 256
VOCAB_SIZE = 257  # 256 byte values plus BOS


@dataclass(frozen=True)
class ModelPreset:
    d_model: int
    n_heads: int
    n_layers: int
    d_ff: int
    max_len: int


PRESETS = {
    "tiny-byte-lm": ModelPreset(d_model=64, n_heads=2, n_layers=2, d_ff=128, max_len=2048),
    "mini-byte-lm": ModelPreset(d_model=128, n_heads=4, n_layers=4, d_ff=256, max_len=2048),
}


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids: list[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


class _Attention(nn.Module):
    def __init__(self, preset: ModelPreset):
        super().__init__()
        self.n_heads = preset.n_heads
        self.d_head = preset.d_model // preset.n_heads
        self.q_proj = nn.Linear(preset.d_model, preset.d_model)
        self.k_proj = nn.Linear(preset.d_model, preset.d_model)
        self.v_proj = nn.Linear(preset.d_model, preset.d_model)
        self.out_proj = nn.Linear(preset.d_model, preset.d_model)

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        batch, seq, dim = x.shape

        def heads(proj):
            return proj(x).view(batch, seq, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = heads(self.q_proj), heads(self.k_proj), heads(self.v_proj)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head) + causal_mask
        attn = F.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(batch, seq, dim)
        return self.out_proj(y)


class _Block(nn.Module):
    def __init__(self, preset: ModelPreset):
        super().__init__()
        self.ln1 = nn.LayerNorm(preset.d_model)
        self.attn = _Attention(preset)
        self.ln2 = nn.LayerNorm(preset.d_model)
        self.ff = nn.Sequential(
            nn.Linear(preset.d_model, preset.d_ff),
            nn.GELU(),
            nn.Linear(preset.d_ff, preset.d_model),
        )

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), causal_mask)
        return x + self.ff(self.ln2(x))


class ByteLM(nn.Module):
    """Decoder-only transformer over bytes with learned positions."""

    def __init__(self, preset: ModelPreset):
        super().__init__()
        self.preset = preset
        self.tok_emb = nn.Embedding(VOCAB_SIZE, preset.d_model)
        self.pos_emb = nn.Embedding(preset.max_len, preset.d_model)
        self.blocks = nn.ModuleList(_Block(preset) for _ in range(preset.n_layers))
        self.ln_f = nn.LayerNorm(preset.d_model)
        self.head = nn.Linear(preset.d_model, VOCAB_SIZE, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(batch, seq) int64 -> (batch, seq, vocab) logits."""
        _, seq_len = tokens.shape
        if seq_len > self.preset.max_len:
            raise ValueError(f"sequence length {seq_len} exceeds context {self.preset.max_len}")
        positions = torch.arange(seq_len, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(positions)[None, :, :]
        causal = torch.full((seq_len, seq_len), float("-inf"), device=tokens.device)
        causal = torch.triu(causal, diagonal=1)
        for block in self.blocks:
            x = block(x, causal)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def sample(
        self, prompt_ids: list[int], max_new_tokens: int, temperature: float,
        generator: torch.Generator,
    ) -> list[int]:
        """Ancestral sampling; truncates the prompt from the left if needed."""
        ids = [BOS_ID] + list(prompt_ids)
        out: list[int] = []
        for _ in range(max_new_tokens):
            window = ids[-self.preset.max_len :]
            logits = self.forward(torch.tensor([window], dtype=torch.long))[0, -1]
            if temperature <= 0:
                nxt = int(logits.argmax())
            else:
                probs = F.softmax(logits / temperature, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=generator))
            ids.append(nxt)
            out.append(nxt)
        return out


def build_model(identifier: str, init_seed: int = 0) -> ByteLM:
    """Construct a preset model with seeded weights; no downloads involved."""
    if identifier not in PRESETS:
        raise ValueError(
            f"unknown base model {identifier!r}; available: {sorted(PRESETS)}"
        )
    generator = torch.Generator().manual_seed(init_seed)
    torch.manual_seed(init_seed)  # nn modules draw from the global generator
    model = ByteLM(PRESETS[identifier])
    model.eval()
    return model


def sequence_logprob(
    model: nn.Module, tokens: torch.Tensor, completion_mask: torch.Tensor
) -> torch.Tensor:
    """Sum of per-token log-probs where ``completion_mask`` is set.

    ``tokens`` is (batch, seq) and already starts with BOS; position t is
    scored with the logits at position t-1.
    """
    logits = model(tokens[:, :-1])
    logprobs = F.log_softmax(logits.float(), dim=-1)
    target = tokens[:, 1:]
    picked = logprobs.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    return (picked * completion_mask[:, 1:].float()).sum(dim=-1)
