"""Independent oracles for the test suite.

Everything here re-derives expected values with its own logic instead of
importing the code paths under test: an exhaustive admissibility check, the
seed routing rules re-implemented natively, and a Monte-Carlo simulation of
each pair-sampling process.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

_ALLOWED = ([0, 1, 2], [0, 0, 1], [0, 0, 2])


def admissible_from_scratch(members) -> bool:
    """Full re-check: unique supports and every distinct triple admissible."""
    supports = [tuple(i for i, x in enumerate(v) if x != 0) for v in members]
    if len(set(supports)) != len(supports):
        return False
    for a, b, c in combinations(members, 3):
        if not any(sorted((x, y, z)) in _ALLOWED for x, y, z in zip(a, b, c)):
            return False
    return True


def euclid(a, b) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    return math.sqrt(dx * dx + dy * dy)


def tsp_seed_tour_length(coords) -> float:
    """The seed rule (always take the first unvisited node) replayed natively."""
    n = len(coords)
    order = [0] + list(range(1, n))
    total = 0.0
    for a, b in zip(order, order[1:]):
        total += euclid(coords[a], coords[b])
    total += euclid(coords[order[-1]], coords[0])
    return total


def cvrp_seed_cost(coords, demands, capacity) -> float:
    """The seed rule (max demand/distance among feasible) replayed natively."""
    unvisited = list(range(1, len(coords)))
    current = 0
    rest = capacity
    total = 0.0
    while unvisited:
        best_score = -1.0
        best_node = -1
        for node in unvisited:
            if demands[node] > rest:
                continue
            distance = euclid(coords[current], coords[node])
            score = demands[node] / distance if distance > 0 else float("inf")
            if score > best_score:
                best_score = score
                best_node = node
        if best_node == -1:
            total += euclid(coords[current], coords[0])
            current = 0
            rest = capacity
            continue
        total += euclid(coords[current], coords[best_node])
        rest -= demands[best_node]
        current = best_node
        unvisited.remove(best_node)
    total += euclid(coords[current], coords[0])
    return total


# --- Monte-Carlo simulation of the pair-sampling processes ---
#
# The simulations draw with replacement: removing 2*n_pairs records from a
# database of tens of thousands shifts the pools by well under a percent,
# far inside the 2-standard-error acceptance band.


def mc_rank_sampler(gaps: np.ndarray, m: int, tau: float, n_draws: int, seed: int = 12345):
    """Mean/std of |gap- - gap+| under the tiered sampling process.

    ``gaps`` must be sorted ascending (best first).
    """
    rng = np.random.default_rng(seed)
    n = len(gaps)
    size = n // m
    usable = gaps[: size * m]
    weights = np.exp((m - 2 - np.arange(1, m - 1)) / tau)
    probs = weights / weights.sum()
    tier = rng.choice(m - 2, size=n_draws, p=probs) + 1  # 1-based
    pos_idx = (tier - 1) * size + rng.integers(0, size, n_draws)
    neg_idx = rng.integers((tier + 1) * size, m * size)
    deltas = np.abs(usable[neg_idx] - usable[pos_idx])
    return float(deltas.mean()), float(deltas.std())


def mc_top1(gaps: np.ndarray, n_draws: int, seed: int = 12345):
    rng = np.random.default_rng(seed)
    neg = gaps[rng.integers(1, len(gaps), n_draws)]
    deltas = np.abs(neg - gaps[0])
    return float(deltas.mean()), float(deltas.std())


def mc_topk(gaps: np.ndarray, k_percent: float, n_draws: int, seed: int = 12345):
    rng = np.random.default_rng(seed)
    cut = max(1, math.ceil(k_percent * len(gaps) / 100.0))
    pos = gaps[rng.integers(0, cut, n_draws)]
    neg = gaps[rng.integers(cut, len(gaps), n_draws)]
    deltas = np.abs(neg - pos)
    return float(deltas.mean()), float(deltas.std())
