"""Gap computation against best-known references and per-run aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

SENSES = ("minimize", "maximize")


@dataclass(frozen=True)
class FitnessReport:
    """Per-instance objectives and gaps plus their mean; the search fitness.

    ``average_gap`` is ``None`` when the candidate was infeasible.
    """

    per_instance_objective: list[float]
    per_instance_gap: list[float]
    average_gap: float | None
    feasible: bool
    reason: str = ""


def compute_gap(objective: float, reference: float, sense: str) -> float:
    """Percent shortfall of ``objective`` against ``reference``.

    Positive means worse than the reference in either sense.
    """
    if reference <= 0:
        raise ValueError(f"reference must be > 0, got {reference}")
    if sense == "minimize":
        return 100.0 * (objective - reference) / reference
    if sense == "maximize":
        return 100.0 * (reference - objective) / reference
    raise ValueError(f"unknown sense {sense!r}")


def aggregate(objectives: Sequence[float], gaps: Sequence[float]) -> FitnessReport:
    """Feasible report whose fitness is the arithmetic mean gap."""
    if len(objectives) != len(gaps):
        raise ValueError("objectives and gaps must align")
    if not gaps:
        raise ValueError("cannot aggregate an empty gap list")
    return FitnessReport(
        per_instance_objective=list(objectives),
        per_instance_gap=list(gaps),
        average_gap=sum(gaps) / len(gaps),
        feasible=True,
    )


def infeasible_report(reason: str) -> FitnessReport:
    return FitnessReport(
        per_instance_objective=[],
        per_instance_gap=[],
        average_gap=None,
        feasible=False,
        reason=reason,
    )
