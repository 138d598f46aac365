"""Preference-pair sampling from a fitness-ranked algorithm database.

The rank-based strategy partitions the ranked records into M equal tiers,
draws the chosen sample from a temperature-biased tier near the top, and the
rejected sample from tiers at least two below, so every pair carries a clear
quality gap while mid-range candidates still contribute. Top-1 and top-k%
baselines are provided for comparison runs.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from evopref.db import AlgorithmStore

MIN_SUBSETS = 3  # one positive tier plus the skipped tier plus one negative tier
_MAX_REDRAWS = 100

STRATEGIES = ("dar", "top1", "topk")


class SamplerConfigError(ValueError):
    """Invalid sampler configuration (M, tau, k, strategy)."""


class PartitionError(ValueError):
    """The ranked id list cannot be partitioned as requested."""


class DepletionError(RuntimeError):
    """A draw found no eligible candidates for the selected tier."""


class PartialDatasetError(RuntimeError):
    """Pair construction ran out of records; carries the pairs built so far."""

    def __init__(self, message: str, pairs: list["PreferencePair"]):
        super().__init__(message)
        self.pairs = pairs


@dataclass
class RankPartition:
    """M equally-sized, fitness-ordered, disjoint subsets of record ids.

    ``subsets[0]`` holds the best records. The N mod M worst leftovers are
    kept in ``discarded`` and never sampled.
    """

    subsets: list[list[int]]
    subset_size: int
    discarded: list[int] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.subsets)

    def remaining(self) -> int:
        return sum(len(s) for s in self.subsets)

    def remove(self, record_id: int) -> None:
        for subset in self.subsets:
            try:
                subset.remove(record_id)
                return
            except ValueError:
                continue
        raise KeyError(f"id {record_id} not in partition")


@dataclass(frozen=True)
class PreferencePair:
    """One training triple: fixed prompt, chosen source, rejected source.

    Tier indices are 1-based; baselines record 0 for both tiers.
    """

    prompt: str
    chosen_source: str
    rejected_source: str
    chosen_fitness: float
    rejected_fitness: float
    chosen_tier: int
    rejected_tier: int


@dataclass(frozen=True)
class SamplerConfig:
    m: int = 10
    tau: float = 3.0
    strategy: str = "dar"
    k_percent: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.m < MIN_SUBSETS:
            raise SamplerConfigError(f"m must be >= {MIN_SUBSETS}, got {self.m}")
        if not self.tau > 0:
            raise SamplerConfigError(f"tau must be > 0, got {self.tau}")
        if self.strategy not in STRATEGIES:
            raise SamplerConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "topk":
            if self.k_percent is None or not 0 < self.k_percent < 100:
                raise SamplerConfigError("topk requires k_percent in (0, 100)")


class DrawnPair(NamedTuple):
    chosen_tier: int
    rejected_tier: int
    chosen_id: int
    rejected_id: int


def partition(ranked_ids: Sequence[int], m: int) -> RankPartition:
    """Split a best-first id list into M subsets of floor(N/M) ids each.

    The trailing N mod M (worst) ids are discarded rather than spread, so the
    subsets stay literally equally sized.
    """
    n = len(ranked_ids)
    if m < MIN_SUBSETS:
        raise PartitionError(f"need at least {MIN_SUBSETS} subsets, got m={m}")
    if n < m:
        raise PartitionError(f"cannot split {n} records into {m} subsets")
    size = n // m
    subsets = [list(ranked_ids[i * size : (i + 1) * size]) for i in range(m)]
    discarded = list(ranked_ids[m * size :])
    return RankPartition(subsets=subsets, subset_size=size, discarded=discarded)


def tier_distribution(m: int, tau: float) -> list[float]:
    """Probability of picking positive tier i, for i in 1..M-2.

    Softmax of weights exp((M-2-i)/tau): strictly decreasing in i for finite
    tau and uniform in the tau -> infinity limit. Exponents are shifted by
    their maximum so extreme tau/M combinations cannot overflow.
    """
    if m < MIN_SUBSETS:
        raise SamplerConfigError(f"m must be >= {MIN_SUBSETS}, got {m}")
    if not tau > 0:
        raise SamplerConfigError(f"tau must be > 0, got {tau}")
    exponents = [(m - 2 - i) / tau for i in range(1, m - 1)]
    peak = exponents[0]  # largest: i = 1
    weights = [math.exp(e - peak) for e in exponents]
    total = sum(weights)
    return [w / total for w in weights]


def _choose_tier(probs: Sequence[float], rng: random.Random) -> int:
    """1-based tier index sampled from ``probs``."""
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs, start=1):
        acc += p
        if u < acc:
            return i
    return len(probs)  # guard against rounding at u ~ 1.0


def draw_pair(part: RankPartition, config: SamplerConfig, rng: random.Random) -> DrawnPair:
    """Draw one (chosen, rejected) id pair from the partition.

    The chosen tier i follows ``tier_distribution``; the rejected record is
    uniform over tiers i+2..M, skipping the adjacent tier so the pair always
    carries at least one full quality-tier gap.
    """
    probs = tier_distribution(part.m, config.tau)
    tier = _choose_tier(probs, rng)
    pos_pool = part.subsets[tier - 1]
    if not pos_pool:
        raise DepletionError(f"tier {tier} is exhausted")
    neg_tiers = [(j, part.subsets[j - 1]) for j in range(tier + 2, part.m + 1)]
    neg_total = sum(len(pool) for _, pool in neg_tiers)
    if neg_total == 0:
        raise DepletionError(f"all tiers >= {tier + 2} are exhausted")
    chosen_id = pos_pool[rng.randrange(len(pos_pool))]
    pick = rng.randrange(neg_total)
    for j, pool in neg_tiers:
        if pick < len(pool):
            return DrawnPair(tier, j, chosen_id, pool[pick])
        pick -= len(pool)
    raise AssertionError("unreachable: pick exceeded pool sizes")


def sample_pairs(
    part: RankPartition,
    records: Mapping[int, tuple[str, float]],
    prompt: str,
    n_pairs: int,
    config: SamplerConfig,
    rng: random.Random,
) -> list[PreferencePair]:
    """Build ``n_pairs`` pairs, consuming both members of each from ``part``.

    ``records`` maps id -> (source_text, fitness). The partition is mutated
    in place; on depletion the tier draw is retried up to a fixed bound
    before failing with the pairs built so far.
    """
    pairs: list[PreferencePair] = []
    for _ in range(n_pairs):
        drawn = None
        for _attempt in range(_MAX_REDRAWS):
            try:
                drawn = draw_pair(part, config, rng)
                break
            except DepletionError:
                continue
        if drawn is None:
            raise PartialDatasetError(
                f"partition depleted after {len(pairs)} of {n_pairs} pairs", pairs
            )
        chosen_source, chosen_fitness = records[drawn.chosen_id]
        rejected_source, rejected_fitness = records[drawn.rejected_id]
        pairs.append(
            PreferencePair(
                prompt=prompt,
                chosen_source=chosen_source,
                rejected_source=rejected_source,
                chosen_fitness=chosen_fitness,
                rejected_fitness=rejected_fitness,
                chosen_tier=drawn.chosen_tier,
                rejected_tier=drawn.rejected_tier,
            )
        )
        part.remove(drawn.chosen_id)
        part.remove(drawn.rejected_id)
    return pairs


def _records_map(db: AlgorithmStore, ids: Sequence[int]) -> dict[int, tuple[str, float]]:
    out = {}
    for record_id in ids:
        record = db.get(record_id)
        out[record_id] = (record.source_text, record.fitness)
    return out


def build_dataset(
    db: AlgorithmStore,
    task_id: str,
    task_prompt: str,
    n_pairs: int,
    config: SamplerConfig,
) -> list[PreferencePair]:
    """Rank, partition once, then draw ``n_pairs`` pairs without replacement.

    Deletions shrink a working copy of the partition; the store itself is
    never mutated.
    """
    ranked = db.ranked(task_id)
    part = partition(ranked, config.m)
    records = _records_map(db, ranked)
    rng = random.Random(config.rng_seed)
    return sample_pairs(part, records, task_prompt, n_pairs, config, rng)


def baseline_top1(
    db: AlgorithmStore,
    task_id: str,
    task_prompt: str,
    n_pairs: int,
    rng: random.Random,
) -> list[PreferencePair]:
    """Every pair's chosen sample is the single best record.

    The best record is reused across pairs; only rejected samples are
    consumed without replacement.
    """
    ranked = db.ranked(task_id)
    records = _records_map(db, ranked)
    best_source, best_fitness = records[ranked[0]]
    pool = list(ranked[1:])
    pairs: list[PreferencePair] = []
    for _ in range(n_pairs):
        if not pool:
            raise PartialDatasetError(
                f"negative pool depleted after {len(pairs)} of {n_pairs} pairs", pairs
            )
        neg_id = pool.pop(rng.randrange(len(pool)))
        neg_source, neg_fitness = records[neg_id]
        pairs.append(
            PreferencePair(
                prompt=task_prompt,
                chosen_source=best_source,
                rejected_source=neg_source,
                chosen_fitness=best_fitness,
                rejected_fitness=neg_fitness,
                chosen_tier=0,
                rejected_tier=0,
            )
        )
    return pairs


def topk_pool_size(n: int, k_percent: float) -> int:
    """Positive-pool size: ceil(k*N/100), at least 1."""
    return max(1, math.ceil(k_percent * n / 100.0))


def baseline_topk(
    db: AlgorithmStore,
    task_id: str,
    task_prompt: str,
    n_pairs: int,
    k_percent: float,
    rng: random.Random,
) -> list[PreferencePair]:
    """Chosen uniform from the best k% records, rejected uniform from the rest.

    Both sides are consumed without replacement.
    """
    if not 0 < k_percent < 100:
        raise SamplerConfigError(f"k_percent must be in (0, 100), got {k_percent}")
    ranked = db.ranked(task_id)
    records = _records_map(db, ranked)
    cut = topk_pool_size(len(ranked), k_percent)
    pos_pool = list(ranked[:cut])
    neg_pool = list(ranked[cut:])
    pairs: list[PreferencePair] = []
    for _ in range(n_pairs):
        if not pos_pool or not neg_pool:
            raise PartialDatasetError(
                f"pool depleted after {len(pairs)} of {n_pairs} pairs", pairs
            )
        pos_id = pos_pool.pop(rng.randrange(len(pos_pool)))
        neg_id = neg_pool.pop(rng.randrange(len(neg_pool)))
        pos_source, pos_fitness = records[pos_id]
        neg_source, neg_fitness = records[neg_id]
        pairs.append(
            PreferencePair(
                prompt=task_prompt,
                chosen_source=pos_source,
                rejected_source=neg_source,
                chosen_fitness=pos_fitness,
                rejected_fitness=neg_fitness,
                chosen_tier=0,
                rejected_tier=0,
            )
        )
    return pairs


class DeltaStats(NamedTuple):
    mean: float
    std: float


def delta(pair: PreferencePair) -> float:
    """Absolute gap difference between the pair's two samples."""
    return abs(pair.rejected_fitness - pair.chosen_fitness)


def delta_stats(pairs: Sequence[PreferencePair]) -> DeltaStats:
    """Sample mean and population standard deviation of the pair deltas."""
    if not pairs:
        raise ValueError("delta_stats requires at least one pair")
    deltas = [delta(p) for p in pairs]
    mean = sum(deltas) / len(deltas)
    var = sum((d - mean) ** 2 for d in deltas) / len(deltas)
    return DeltaStats(mean, math.sqrt(var))
