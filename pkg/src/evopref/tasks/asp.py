"""Admissible set construction: candidates, feasibility checks, greedy builder.

An admissible set over {0,1,2}^n collects vectors with exactly w non-zero
entries, pairwise-distinct supports, and, for every three distinct members,
some coordinate whose three values form {0,1,2}, {0,0,1}, or {0,0,2}.
"""

from __future__ import annotations

from math import comb, isfinite
from typing import Callable, Iterator, NamedTuple, Sequence

Vector = tuple[int, ...]

# Sorted value-triples that satisfy the per-coordinate condition.
_OK_TRIPLES = {(0, 1, 2), (0, 0, 1), (0, 0, 2)}

DEFAULT_MAX_CANDIDATES = 4_000_000
_BRUTE_FORCE_LIMIT = 16


class InstanceTooLarge(ValueError):
    """The candidate space exceeds the configured budget."""


def candidate_count(n: int, w: int) -> int:
    return comb(n, w) * 2**w


def enumerate_candidates(
    n: int, w: int, max_candidates: int = DEFAULT_MAX_CANDIDATES
) -> list[Vector]:
    """All vectors in {0,1,2}^n with exactly w non-zeros, in lexicographic order."""
    if not 0 < w <= n:
        raise ValueError(f"need 0 < w <= n, got n={n}, w={w}")
    count = candidate_count(n, w)
    if count > max_candidates:
        raise InstanceTooLarge(
            f"A({n},{w}) has {count} candidates, budget is {max_candidates}"
        )
    return list(_gen(n, w, ()))


def _gen(n: int, w_left: int, prefix: Vector) -> Iterator[Vector]:
    pos = len(prefix)
    if w_left == 0:
        yield prefix + (0,) * (n - pos)
        return
    if n - pos < w_left:
        return
    if n - pos > w_left:
        yield from _gen(n, w_left, prefix + (0,))
    yield from _gen(n, w_left - 1, prefix + (1,))
    yield from _gen(n, w_left - 1, prefix + (2,))


def support(v: Vector) -> Vector:
    return tuple(i for i, x in enumerate(v) if x)


def triple_ok(a: Vector, b: Vector, c: Vector) -> bool:
    """True iff some coordinate's three values form an allowed multiset."""
    if not (len(a) == len(b) == len(c)):
        raise ValueError("vectors must have equal length")
    for x, y, z in zip(a, b, c):
        if tuple(sorted((x, y, z))) in _OK_TRIPLES:
            return True
    return False


def can_add(current_set: Sequence[Vector], v: Vector, supports: set[Vector] | None = None) -> bool:
    """Whether appending ``v`` keeps an admissible ``current_set`` admissible.

    Only triples containing ``v`` need checking: any other triple lies inside
    the already-admissible set.
    """
    if supports is None:
        supports = {support(u) for u in current_set}
    if support(v) in supports:
        return False
    members = list(current_set)
    for i in range(len(members)):
        a = members[i]
        for j in range(i + 1, len(members)):
            if not triple_ok(a, members[j], v):
                return False
    return True


class GreedyResult(NamedTuple):
    members: list[Vector]
    size: int


def greedy_construct(
    scores: Sequence[float] | Callable[[Vector, int, int], float], n: int, w: int
) -> GreedyResult:
    """Scan candidates by descending score, appending each admissible one.

    ``scores`` is either a callable ``(el, n, w) -> float`` or a sequence
    aligned with ``enumerate_candidates(n, w)``. Score ties break by
    lexicographic candidate order. Non-finite scores abort the construction.
    """
    candidates = enumerate_candidates(n, w)
    if callable(scores):
        values = [float(scores(el, n, w)) for el in candidates]
    else:
        values = [float(s) for s in scores]
        if len(values) != len(candidates):
            raise ValueError(
                f"expected {len(candidates)} scores, got {len(values)}"
            )
    for s in values:
        if not isfinite(s):
            raise ValueError("priority scores must be finite")
    order = sorted(range(len(candidates)), key=lambda i: (-values[i], i))
    members: list[Vector] = []
    supports: set[Vector] = set()
    for i in order:
        v = candidates[i]
        if can_add(members, v, supports):
            members.append(v)
            supports.add(support(v))
    return GreedyResult(members, len(members))


def brute_force_max(n: int, w: int) -> int:
    """Exact maximum admissible-set size by DFS; only for tiny candidate spaces."""
    count = candidate_count(n, w)
    if count > _BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(
            f"A({n},{w}) has {count} candidates; brute force allows {_BRUTE_FORCE_LIMIT}"
        )
    candidates = enumerate_candidates(n, w)

    best = 0

    def dfs(members: list[Vector], supports: set[Vector], start: int) -> None:
        nonlocal best
        best = max(best, len(members))
        if len(members) + (len(candidates) - start) <= best:
            return
        for i in range(start, len(candidates)):
            v = candidates[i]
            if can_add(members, v, supports):
                members.append(v)
                supports.add(support(v))
                dfs(members, supports, i + 1)
                members.pop()
                supports.remove(support(v))

    dfs([], set(), 0)
    return best
