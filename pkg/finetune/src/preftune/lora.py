"""Low-rank adapters over the linear layers of a frozen base model.

The B factor starts at zero, so a freshly attached adapter is a no-op and
the policy coincides with the reference exactly. Disabling adapters turns
the same module back into the reference model, which is how reference
log-probabilities are computed without a second weight copy.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch
import torch.nn as nn


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.enabled = True

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.base(x)
        if not self.enabled:
            return out
        update = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return out + self.scaling * update


def attach_adapters(model: nn.Module, rank: int, alpha: float, dropout: float) -> list[str]:
    """Freeze the base model and wrap every Linear with an adapter.

    Returns the dotted names of the wrapped modules.
    """
    for param in model.parameters():
        param.requires_grad_(False)
    wrapped: list[str] = []
    for name, module in list(model.named_modules()):
        for child_name, child in list(module.named_children()):
            if isinstance(child, nn.Linear) and not isinstance(child, LoRALinear):
                full = f"{name}.{child_name}" if name else child_name
                setattr(module, child_name, LoRALinear(child, rank, alpha, dropout))
                wrapped.append(full)
    return wrapped


def adapter_modules(model: nn.Module) -> list[LoRALinear]:
    return [m for m in model.modules() if isinstance(m, LoRALinear)]


def adapter_parameters(model: nn.Module):
    for module in adapter_modules(model):
        yield module.lora_a
        yield module.lora_b


def set_adapters_enabled(model: nn.Module, enabled: bool) -> None:
    for module in adapter_modules(model):
        module.enabled = enabled


def zero_adapters(model: nn.Module) -> None:
    """Reset every adapter to the exact no-op state."""
    with torch.no_grad():
        for module in adapter_modules(model):
            module.lora_b.zero_()


def save_adapter(model: nn.Module, out_dir: str | Path, meta: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = {}
    index = 0
    for name, module in model.named_modules():
        if isinstance(module, LoRALinear):
            state[f"{name}.lora_a"] = module.lora_a.detach().cpu()
            state[f"{name}.lora_b"] = module.lora_b.detach().cpu()
            index += 1
    torch.save(state, out_dir / "adapter.pt")
    (out_dir / "adapter_config.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out_dir


def load_adapter(model: nn.Module, adapter_dir: str | Path) -> None:
    state = torch.load(Path(adapter_dir) / "adapter.pt", weights_only=True)
    named = dict(model.named_modules())
    with torch.no_grad():
        for key, tensor in state.items():
            module_name, param_name = key.rsplit(".", 1)
            module = named[module_name]
            getattr(module, param_name).copy_(tensor)
