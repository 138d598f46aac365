"""Algorithm-design tasks: admissible sets, TSP, and CVRP.

Each task defines instance data, an objective, a gap against a reference,
and desk-scale brute-force oracles.
"""

from evopref.tasks.fitness import FitnessReport, aggregate, compute_gap
from evopref.tasks.registry import TaskSpec, available_tasks, get_task, load_instances, write_instances

__all__ = [
    "FitnessReport",
    "TaskSpec",
    "aggregate",
    "available_tasks",
    "compute_gap",
    "get_task",
    "load_instances",
    "write_instances",
]
