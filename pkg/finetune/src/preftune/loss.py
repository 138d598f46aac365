"""The DPO objective over sequence log-probabilities.

Only log-probability margins enter the loss: the reward that the
preference order encodes is implicit in the policy/reference ratio and is
never materialized.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def dpo_loss(
    policy_logprobs_pos: torch.Tensor,
    policy_logprobs_neg: torch.Tensor,
    ref_logprobs_pos: torch.Tensor,
    ref_logprobs_neg: torch.Tensor,
    beta: float,
) -> torch.Tensor:
    """Mean over the batch of -log sigmoid(beta * margin).

    The margin is (lp+_policy - lp+_ref) - (lp-_policy - lp-_ref); the loss
    is strictly positive and decreases as the chosen-minus-rejected margin
    grows.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    for name, t in (
        ("policy_logprobs_pos", policy_logprobs_pos),
        ("policy_logprobs_neg", policy_logprobs_neg),
        ("ref_logprobs_pos", ref_logprobs_pos),
        ("ref_logprobs_neg", ref_logprobs_neg),
    ):
        if not torch.isfinite(t).all():
            raise ValueError(f"{name} contains non-finite values")
    margin = (policy_logprobs_pos - ref_logprobs_pos) - (policy_logprobs_neg - ref_logprobs_neg)
    return -F.logsigmoid(beta * margin).mean()
