"""Named task specifications, instance files, and solution validation.

An instance file is UTF-8 JSONL: a header object echoing the generation
parameters, then one instance object per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Any

import numpy as np

from evopref.tasks import asp, routing
from evopref.tasks.fitness import compute_gap

HEADER_SCHEMA = "evopref-instances-v1"

KINDS = ("asp", "tsp", "cvrp")

FUNCTION_NAMES = {"asp": "priority", "tsp": "select_next_node", "cvrp": "select_next_node"}
SENSES = {"asp": "maximize", "tsp": "minimize", "cvrp": "minimize"}

DEFAULT_ROUTING_INSTANCES = 16


class UnknownTaskError(KeyError):
    """The task name is not in the registry."""


class InstanceFileError(ValueError):
    """An instance file is malformed; the message names the offending line."""


class SolutionInvalid(ValueError):
    """A reported solution failed host-side re-validation."""


@dataclass
class TaskSpec:
    """One concrete task: instances with references, plus evaluation metadata."""

    task_id: str
    kind: str
    params: dict[str, Any]
    instances: list[dict[str, Any]] = field(default_factory=list)

    @property
    def sense(self) -> str:
        return SENSES[self.kind]

    @property
    def function_name(self) -> str:
        return FUNCTION_NAMES[self.kind]

    def references(self) -> list[float]:
        key = {"asp": "reference_size", "tsp": "reference_length", "cvrp": "reference_cost"}[
            self.kind
        ]
        return [float(inst[key]) for inst in self.instances]

    def gaps_for(self, objectives: list[float]) -> list[float]:
        refs = self.references()
        if len(objectives) != len(refs):
            raise ValueError(
                f"expected {len(refs)} objectives, got {len(objectives)}"
            )
        return [compute_gap(obj, ref, self.sense) for obj, ref in zip(objectives, refs)]


def make_asp_task(task_id: str, n: int, w: int, reference_size: int | None = None) -> TaskSpec:
    """Single-instance admissible set task.

    Without an explicit reference size, tiny instances use the exact optimum
    and larger ones fall back to the support-count bound C(n, w) as a
    normalizer.
    """
    if reference_size is None:
        if asp.candidate_count(n, w) <= 16:
            reference_size = asp.brute_force_max(n, w)
        else:
            reference_size = comb(n, w)
    if reference_size > comb(n, w):
        raise ValueError("reference_size exceeds the unique-support bound C(n, w)")
    params = {"n": n, "w": w, "reference_size": reference_size}
    return TaskSpec(
        task_id=task_id,
        kind="asp",
        params=params,
        instances=[dict(params)],
    )


def make_tsp_task(task_id: str, n: int, n_instances: int, seed: int) -> TaskSpec:
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n_instances):
        inst = routing.tsp_generate(n, rng)
        inst.reference_length = routing.tsp_reference(inst)
        instances.append({"coords": inst.coords, "reference_length": inst.reference_length})
    return TaskSpec(
        task_id=task_id,
        kind="tsp",
        params={"n": n, "n_instances": n_instances, "seed": seed},
        instances=instances,
    )


def make_cvrp_task(
    task_id: str, n_customers: int, capacity: int, n_instances: int, seed: int
) -> TaskSpec:
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(n_instances):
        inst = routing.cvrp_generate(n_customers, capacity, rng)
        inst.reference_cost = routing.cvrp_reference(inst)
        instances.append(
            {
                "coords": inst.coords,
                "demands": inst.demands,
                "capacity": inst.capacity,
                "reference_cost": inst.reference_cost,
            }
        )
    return TaskSpec(
        task_id=task_id,
        kind="cvrp",
        params={
            "n_customers": n_customers,
            "capacity": capacity,
            "n_instances": n_instances,
            "seed": seed,
        },
        instances=instances,
    )


# name -> builder(seed, n_instances) registry
_REGISTRY = {
    "asp": lambda seed, k: make_asp_task("asp", n=15, w=10, reference_size=3003),
    "asp3x2": lambda seed, k: make_asp_task("asp3x2", n=3, w=2),
    "tsp7": lambda seed, k: make_tsp_task("tsp7", n=7, n_instances=k or DEFAULT_ROUTING_INSTANCES, seed=seed),
    "tsp50": lambda seed, k: make_tsp_task("tsp50", n=50, n_instances=k or DEFAULT_ROUTING_INSTANCES, seed=seed),
    "cvrp5": lambda seed, k: make_cvrp_task("cvrp5", n_customers=5, capacity=15, n_instances=k or DEFAULT_ROUTING_INSTANCES, seed=seed),
    "cvrp50": lambda seed, k: make_cvrp_task("cvrp50", n_customers=50, capacity=40, n_instances=k or DEFAULT_ROUTING_INSTANCES, seed=seed),
    "cvrp100": lambda seed, k: make_cvrp_task("cvrp100", n_customers=100, capacity=50, n_instances=k or DEFAULT_ROUTING_INSTANCES, seed=seed),
}


def available_tasks() -> list[str]:
    return sorted(_REGISTRY)


def get_task(name: str, seed: int = 0, n_instances: int | None = None) -> TaskSpec:
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise UnknownTaskError(
            f"unknown task {name!r}; available: {', '.join(available_tasks())}"
        ) from None
    return builder(seed, n_instances)


def write_instances(spec: TaskSpec, path: str | Path) -> Path:
    """Write the header object plus one instance object per line."""
    path = Path(path)
    header = {
        "schema": HEADER_SCHEMA,
        "task_id": spec.task_id,
        "kind": spec.kind,
        "params": spec.params,
        "n_instances": len(spec.instances),
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for inst in spec.instances:
            fh.write(json.dumps(inst) + "\n")
    return path


def load_instances(path: str | Path) -> TaskSpec:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise InstanceFileError("empty instance file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise InstanceFileError(f"line 1: invalid JSON ({exc.msg})") from exc
    if not isinstance(header, dict) or header.get("schema") != HEADER_SCHEMA:
        raise InstanceFileError("line 1: missing or unknown header schema")
    instances = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InstanceFileError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise InstanceFileError(f"line {lineno}: expected an instance object")
        instances.append(obj)
    return TaskSpec(
        task_id=header["task_id"],
        kind=header["kind"],
        params=header.get("params", {}),
        instances=instances,
    )


def validate_solution(
    spec: TaskSpec, instance_idx: int, solution: Any, objective: float, tol: float = 1e-9
) -> None:
    """Re-check a scaffold-reported solution against the claimed objective."""
    inst = spec.instances[instance_idx]
    if spec.kind == "tsp":
        coords = inst["coords"]
        route = list(solution)
        if not routing.tsp_validate(route, len(coords)):
            raise SolutionInvalid(f"instance {instance_idx}: route is not a permutation")
        length = routing.tour_length(route, routing.distance_matrix(coords))
        if abs(length - objective) > tol:
            raise SolutionInvalid(
                f"instance {instance_idx}: tour length {length} != objective {objective}"
            )
    elif spec.kind == "cvrp":
        cvrp = routing.CvrpInstance(
            coords=inst["coords"], demands=inst["demands"], capacity=inst["capacity"]
        )
        routes = [list(r) for r in solution]
        if not routing.cvrp_feasible(routes, cvrp):
            raise SolutionInvalid(f"instance {instance_idx}: infeasible routes")
        cost = routing.cvrp_cost(routes, cvrp)
        if abs(cost - objective) > tol:
            raise SolutionInvalid(
                f"instance {instance_idx}: cost {cost} != objective {objective}"
            )
    elif spec.kind == "asp":
        members = [tuple(v) for v in solution]
        if len(members) != int(objective):
            raise SolutionInvalid(
                f"instance {instance_idx}: set size {len(members)} != objective {objective}"
            )
        supports = {asp.support(v) for v in members}
        if len(supports) != len(members):
            raise SolutionInvalid(f"instance {instance_idx}: duplicate supports")
        n, w = inst["n"], inst["w"]
        for v in members:
            if len(v) != n or sum(1 for x in v if x) != w or any(x not in (0, 1, 2) for x in v):
                raise SolutionInvalid(f"instance {instance_idx}: malformed vector {v}")
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                for k in range(j + 1, len(members)):
                    if not asp.triple_ok(members[i], members[j], members[k]):
                        raise SolutionInvalid(
                            f"instance {instance_idx}: inadmissible triple ({i},{j},{k})"
                        )
    else:
        raise ValueError(f"unknown task kind {spec.kind!r}")
