"""TSP and CVRP instances, constructive evaluation loops, and exact oracles.

The constructive loops here are the host-side mirror of the sandbox
scaffolds: they accumulate route legs in the same order with the same
float64 arithmetic, so a candidate heuristic evaluated in-process and in a
child process produces bit-identical objectives.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BRUTE_FORCE_TSP_LIMIT = 9
BRUTE_FORCE_CVRP_LIMIT = 7

DEMAND_LOW, DEMAND_HIGH = 1, 9  # uniform integer demands


class InstanceTooLarge(ValueError):
    """Exact enumeration was requested beyond the desk-scale limits."""


class ConstructionError(RuntimeError):
    """A heuristic produced an unusable step during route construction."""


def distance_matrix(coords: Sequence[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(coords, dtype=float)
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    return np.sqrt(dx * dx + dy * dy)


@dataclass
class TspInstance:
    coords: list[list[float]]
    reference_length: float | None = None
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.coords) < 2:
            raise ValueError("TSP needs at least 2 nodes")
        self.dist = distance_matrix(self.coords)

    @property
    def n(self) -> int:
        return len(self.coords)


@dataclass
class CvrpInstance:
    """Node 0 is the depot; customers are 1..n."""

    coords: list[list[float]]
    demands: list[int]
    capacity: int
    reference_cost: float | None = None
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.coords) != len(self.demands):
            raise ValueError("coords and demands must align")
        if self.demands[0] != 0:
            raise ValueError("depot demand must be 0")
        if any(d <= 0 for d in self.demands[1:]):
            raise ValueError("customer demands must be positive")
        if max(self.demands) > self.capacity:
            raise ValueError("every demand must fit the vehicle capacity")
        self.dist = distance_matrix(self.coords)

    @property
    def n_customers(self) -> int:
        return len(self.coords) - 1


def tsp_generate(n: int, rng: np.random.Generator) -> TspInstance:
    """Uniform coordinates in the unit square."""
    if n < 2:
        raise ValueError("TSP needs at least 2 nodes")
    coords = rng.random((n, 2)).tolist()
    return TspInstance(coords=coords)


def cvrp_generate(n_customers: int, capacity: int, rng: np.random.Generator) -> CvrpInstance:
    """Depot plus ``n_customers`` uniform points; integer demands in [1, 9]."""
    if n_customers < 1:
        raise ValueError("CVRP needs at least 1 customer")
    if capacity < DEMAND_HIGH:
        raise ValueError(f"capacity must be >= {DEMAND_HIGH} to fit any demand")
    coords = rng.random((n_customers + 1, 2)).tolist()
    demands = [0] + rng.integers(DEMAND_LOW, DEMAND_HIGH + 1, size=n_customers).tolist()
    return CvrpInstance(coords=coords, demands=demands, capacity=capacity)


# --- objectives and validation ---


def tsp_validate(route: Sequence[int], n: int) -> bool:
    return len(route) == n and sorted(route) == list(range(n))


def tour_length(route: Sequence[int], dist: np.ndarray) -> float:
    """Closed-tour length including the edge back to ``route[0]``."""
    total = 0.0
    for a, b in zip(route, route[1:]):
        total += float(dist[a][b])
    total += float(dist[route[-1]][route[0]])
    return total


def cvrp_feasible(routes: Sequence[Sequence[int]], instance: CvrpInstance) -> bool:
    """Customers partitioned exactly once, every route within capacity."""
    seen: list[int] = []
    for route in routes:
        if not route:
            return False
        load = sum(instance.demands[c] for c in route)
        if load > instance.capacity:
            return False
        seen.extend(route)
    return sorted(seen) == list(range(1, instance.n_customers + 1))


def cvrp_cost(routes: Sequence[Sequence[int]], instance: CvrpInstance) -> float:
    """Total distance including depot departure and return legs."""
    dist = instance.dist
    total = 0.0
    for route in routes:
        current = 0
        for node in route:
            total += float(dist[current][node])
            current = node
        total += float(dist[current][0])
    return total


# --- constructive evaluation loops (mirrored by the sandbox scaffolds) ---

TspSelect = Callable[[int, int, np.ndarray, np.ndarray], int]
CvrpSelect = Callable[[int, int, np.ndarray, int, np.ndarray, np.ndarray], int]


def tsp_construct(select_next_node: TspSelect, instance: TspInstance) -> tuple[list[int], float]:
    """Build a tour from node 0 by repeatedly asking the heuristic for the next node."""
    n = instance.n
    dist = instance.dist
    unvisited = list(range(1, n))
    route = [0]
    current = 0
    total = 0.0
    while unvisited:
        nxt = int(select_next_node(current, 0, np.array(unvisited, dtype=int), dist))
        if nxt not in unvisited:
            raise ConstructionError(f"selected node {nxt} is not unvisited")
        total += float(dist[current][nxt])
        unvisited.remove(nxt)
        route.append(nxt)
        current = nxt
    total += float(dist[current][0])
    return route, total


def cvrp_construct(
    select_next_node: CvrpSelect, instance: CvrpInstance
) -> tuple[list[list[int]], float]:
    """Build routes from the depot; any non-feasible selection sends the vehicle home.

    A heuristic that refuses to pick a feasible customer while standing at
    the depot with full capacity cannot make progress and aborts the
    construction.
    """
    dist = instance.dist
    demands = np.array(instance.demands, dtype=int)
    capacity = instance.capacity
    unvisited = list(range(1, instance.n_customers + 1))
    routes: list[list[int]] = []
    current_route: list[int] = []
    current = 0
    rest = capacity
    total = 0.0
    max_steps = 4 * len(unvisited) + 8
    steps = 0
    while unvisited:
        steps += 1
        if steps > max_steps:
            raise ConstructionError("construction exceeded the step budget")
        choice = int(
            select_next_node(current, 0, np.array(unvisited, dtype=int), rest, demands, dist)
        )
        if choice in unvisited and instance.demands[choice] <= rest:
            total += float(dist[current][choice])
            rest -= instance.demands[choice]
            current = choice
            current_route.append(choice)
            unvisited.remove(choice)
        else:
            if current == 0:
                raise ConstructionError(
                    f"no feasible customer selected from the depot (got {choice})"
                )
            total += float(dist[current][0])
            current = 0
            rest = capacity
            routes.append(current_route)
            current_route = []
    total += float(dist[current][0])
    if current_route:
        routes.append(current_route)
    return routes, total


# --- exact oracles (desk scale) ---


def tsp_brute_force(instance: TspInstance) -> float:
    """Optimal tour length by exhaustive enumeration of (n-1)!/2 tours."""
    n = instance.n
    if n > BRUTE_FORCE_TSP_LIMIT:
        raise InstanceTooLarge(f"TSP brute force allows n <= {BRUTE_FORCE_TSP_LIMIT}, got {n}")
    dist = instance.dist
    best = float("inf")
    nodes = list(range(1, n))
    for perm in itertools.permutations(nodes):
        if n > 2 and perm[0] > perm[-1]:
            continue  # each tour and its reversal cost the same
        best = min(best, tour_length([0, *perm], dist))
    return best


def cvrp_brute_force(instance: CvrpInstance) -> float:
    """Optimal cost over all feasible customer partitions and route orders."""
    n = instance.n_customers
    if n > BRUTE_FORCE_CVRP_LIMIT:
        raise InstanceTooLarge(
            f"CVRP brute force allows <= {BRUTE_FORCE_CVRP_LIMIT} customers, got {n}"
        )
    dist = instance.dist
    demands = instance.demands

    route_cost_cache: dict[frozenset[int], float] = {}

    def best_route_cost(block: frozenset[int]) -> float:
        cached = route_cost_cache.get(block)
        if cached is not None:
            return cached
        best = float("inf")
        for perm in itertools.permutations(sorted(block)):
            cost = float(dist[0][perm[0]])
            for a, b in zip(perm, perm[1:]):
                cost += float(dist[a][b])
            cost += float(dist[perm[-1]][0])
            best = min(best, cost)
        route_cost_cache[block] = best
        return best

    customers = list(range(1, n + 1))
    best_total = float("inf")

    def split(remaining: list[int], acc_cost: float) -> None:
        nonlocal best_total
        if acc_cost >= best_total:
            return
        if not remaining:
            best_total = acc_cost
            return
        first, rest = remaining[0], remaining[1:]
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                block = frozenset((first, *extra))
                if sum(demands[c] for c in block) > instance.capacity:
                    continue
                left = [c for c in rest if c not in block]
                split(left, acc_cost + best_route_cost(block))

    split(customers, 0.0)
    return best_total


# --- built-in reference heuristics ("best-known" stand-ins at desk scale) ---


def tsp_reference(instance: TspInstance) -> float:
    """Exact optimum when enumerable, nearest-neighbour tour otherwise."""
    if instance.n <= BRUTE_FORCE_TSP_LIMIT:
        return tsp_brute_force(instance)
    return _nearest_neighbor_tour(instance)


def _nearest_neighbor_tour(instance: TspInstance) -> float:
    dist = instance.dist
    unvisited = list(range(1, instance.n))
    current = 0
    total = 0.0
    while unvisited:
        nxt = min(unvisited, key=lambda j: (float(dist[current][j]), j))
        total += float(dist[current][nxt])
        unvisited.remove(nxt)
        current = nxt
    total += float(dist[current][0])
    return total


def cvrp_reference(instance: CvrpInstance) -> float:
    """Exact optimum when enumerable, capacity-aware nearest neighbour otherwise."""
    if instance.n_customers <= BRUTE_FORCE_CVRP_LIMIT:
        return cvrp_brute_force(instance)
    return _nearest_feasible_tour(instance)


def _nearest_feasible_tour(instance: CvrpInstance) -> float:
    dist = instance.dist
    unvisited = list(range(1, instance.n_customers + 1))
    current = 0
    rest = instance.capacity
    total = 0.0
    while unvisited:
        feasible = [c for c in unvisited if instance.demands[c] <= rest]
        if not feasible:
            total += float(dist[current][0])
            current = 0
            rest = instance.capacity
            continue
        nxt = min(feasible, key=lambda j: (float(dist[current][j]), j))
        total += float(dist[current][nxt])
        rest -= instance.demands[nxt]
        unvisited.remove(nxt)
        current = nxt
    total += float(dist[current][0])
    return total
