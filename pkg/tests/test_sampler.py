import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_store
from evopref.sampler import (
    DepletionError,
    PartialDatasetError,
    PartitionError,
    SamplerConfig,
    SamplerConfigError,
    baseline_top1,
    baseline_topk,
    build_dataset,
    delta,
    delta_stats,
    draw_pair,
    partition,
    sample_pairs,
    tier_distribution,
    topk_pool_size,
)

# Recomputed with mpmath at 40 digits: softmax of exp((5-2-i)/3), i=1..3.
TIER_M5_TAU3 = (0.44844086379904073, 0.32132191985276878, 0.23023721634819049)


class TestTierDistribution:
    def test_m5_tau3_matches_high_precision_values(self):
        probs = tier_distribution(5, 3.0)
        assert probs == pytest.approx(TIER_M5_TAU3, abs=1e-12)

    def test_m3_single_tier(self):
        assert tier_distribution(3, 3.0) == [1.0]

    def test_large_tau_limit_is_uniform(self):
        probs = tier_distribution(10, 1e9)
        for p in probs:
            assert abs(p - 1 / 8) < 1e-6

    def test_small_tau_concentrates_on_best_tier(self):
        probs = tier_distribution(10, 0.1)
        assert probs[0] > 0.99

    @pytest.mark.parametrize("m", [3, 4, 5, 10, 25])
    @pytest.mark.parametrize("tau", [0.1, 1.0, 3.0, 50.0])
    def test_normalized_and_strictly_decreasing(self, m, tau):
        probs = tier_distribution(m, tau)
        assert len(probs) == m - 2
        assert abs(sum(probs) - 1.0) <= 1e-12
        assert all(a > b for a, b in zip(probs, probs[1:]))

    def test_bad_parameters(self):
        with pytest.raises(SamplerConfigError):
            tier_distribution(5, 0.0)
        with pytest.raises(SamplerConfigError):
            tier_distribution(5, -1.0)
        with pytest.raises(SamplerConfigError):
            tier_distribution(2, 1.0)

    def test_extreme_sharpness_does_not_overflow(self):
        probs = tier_distribution(50, 0.01)
        assert abs(sum(probs) - 1.0) <= 1e-12
        assert probs[0] > 0.999
        assert all(p >= 0 for p in probs)


class TestPartition:
    def test_exact_division(self):
        part = partition(list(range(10)), 5)
        assert [len(s) for s in part.subsets] == [2] * 5
        assert part.subsets[0] == [0, 1]
        assert part.discarded == []

    def test_leftover_worst_ids_discarded(self):
        part = partition(list(range(11)), 5)
        assert part.subset_size == 2
        assert part.discarded == [10]

    def test_m_below_minimum_rejected(self):
        with pytest.raises(PartitionError):
            partition(list(range(10)), 2)

    def test_fewer_records_than_subsets_rejected(self):
        with pytest.raises(PartitionError):
            partition(list(range(4)), 5)

    @given(
        st.integers(min_value=3, max_value=12).flatmap(
            lambda m: st.tuples(st.just(m), st.integers(min_value=m, max_value=200))
        )
    )
    def test_subsets_disjoint_equal_sized_ordered(self, m_n):
        m, n = m_n
        ids = list(range(n))
        part = partition(ids, m)
        assert all(len(s) == n // m for s in part.subsets)
        flat = [i for s in part.subsets for i in s]
        assert len(flat) == len(set(flat))
        assert flat + part.discarded == ids  # order (and hence ranking) preserved


class TestDrawPair:
    def test_m3_always_tier1_vs_tier3(self):
        part = partition(list(range(30)), 3)
        rng = random.Random(7)
        config = SamplerConfig(m=3)
        for _ in range(200):
            drawn = draw_pair(part, config, rng)
            assert drawn.chosen_tier == 1
            assert drawn.rejected_tier == 3
            assert drawn.chosen_id in range(0, 10)
            assert drawn.rejected_id in range(20, 30)

    def test_tier_gap_always_at_least_two(self):
        part = partition(list(range(200)), 10)
        rng = random.Random(0)
        config = SamplerConfig(m=10, tau=3.0)
        for _ in range(2000):
            drawn = draw_pair(part, config, rng)
            assert drawn.rejected_tier - drawn.chosen_tier >= 2

    def test_fixed_seed_reproduces_sequence(self):
        part = partition(list(range(100)), 10)
        config = SamplerConfig(m=10)
        rng1, rng2 = random.Random(9), random.Random(9)
        s1 = [draw_pair(part, config, rng1) for _ in range(50)]
        s2 = [draw_pair(part, config, rng2) for _ in range(50)]
        assert s1 == s2

    def test_depletion_raises(self):
        part = partition(list(range(9)), 3)
        part.subsets[2].clear()
        with pytest.raises(DepletionError):
            draw_pair(part, SamplerConfig(m=3), random.Random(0))


class TestSamplePairsNoReplacement:
    def test_ids_distinct_and_partition_shrinks(self):
        store = make_store(range(100))
        ranked = store.ranked("toy")
        part = partition(ranked, 10)
        records = {i: (store.get(i).source_text, store.get(i).fitness) for i in ranked}
        before = part.remaining()
        pairs = sample_pairs(part, records, "x", 20, SamplerConfig(m=10), random.Random(1))
        assert len(pairs) == 20
        sources = [p.chosen_source for p in pairs] + [p.rejected_source for p in pairs]
        assert len(set(sources)) == 40
        assert before - part.remaining() == 40

    def test_exact_depletion_boundary_succeeds(self):
        # M=3: every pair consumes one id from tier 1 and one from tier 3
        store = make_store(range(15))
        ranked = store.ranked("toy")
        part = partition(ranked, 3)
        records = {i: (store.get(i).source_text, store.get(i).fitness) for i in ranked}
        pairs = sample_pairs(part, records, "x", 5, SamplerConfig(m=3), random.Random(3))
        assert len(pairs) == 5
        assert part.subsets[0] == [] and part.subsets[2] == []

    def test_requesting_beyond_capacity_carries_partial_pairs(self):
        store = make_store(range(15))
        ranked = store.ranked("toy")
        part = partition(ranked, 3)
        records = {i: (store.get(i).source_text, store.get(i).fitness) for i in ranked}
        with pytest.raises(PartialDatasetError) as excinfo:
            sample_pairs(part, records, "x", 6, SamplerConfig(m=3), random.Random(3))
        assert len(excinfo.value.pairs) == 5

    def test_pair_invariants_hold(self):
        store = make_store([float(g) for g in range(80)])
        pairs = build_dataset(store, "toy", "prompt-x", 15, SamplerConfig(m=8, rng_seed=11))
        for p in pairs:
            assert 1 <= p.chosen_tier <= 6
            assert p.rejected_tier >= p.chosen_tier + 2
            assert p.rejected_tier <= 8
            assert p.chosen_fitness <= p.rejected_fitness
            assert p.prompt == "prompt-x"

    def test_same_seed_identical_dataset(self):
        store = make_store(range(60))
        config = SamplerConfig(m=6, rng_seed=99)
        a = build_dataset(store, "toy", "x", 8, config)
        b = build_dataset(store, "toy", "x", 8, config)
        assert a == b


class TestBaselines:
    def test_top1_reuses_single_best(self):
        store = make_store([1.0, 2.0, 3.0, 4.0])
        pairs = baseline_top1(store, "toy", "x", 3, random.Random(0))
        assert all(p.chosen_fitness == 1.0 for p in pairs)
        assert all(p.chosen_tier == 0 and p.rejected_tier == 0 for p in pairs)
        rejected = {p.rejected_fitness for p in pairs}
        assert len(rejected) == 3  # negatives consumed without replacement

    def test_top1_depletion(self):
        store = make_store([1.0, 2.0])
        with pytest.raises(PartialDatasetError) as excinfo:
            baseline_top1(store, "toy", "x", 2, random.Random(0))
        assert len(excinfo.value.pairs) == 1

    def test_topk_pool_sizes(self):
        assert topk_pool_size(100, 10) == 10
        assert topk_pool_size(4, 50) == 2
        assert topk_pool_size(1000, 1) == 10
        assert topk_pool_size(50, 1) == 1  # ceiling, minimum 1

    def test_topk_pools_respected_and_consumed(self):
        store = make_store(range(100))
        pairs = baseline_topk(store, "toy", "x", 10, 10.0, random.Random(2))
        # positive pool is exactly the 10 best gaps 0..9
        assert all(p.chosen_fitness <= 9.0 for p in pairs)
        assert all(p.rejected_fitness >= 10.0 for p in pairs)
        chosen = [p.chosen_fitness for p in pairs]
        assert len(set(chosen)) == 10  # all consumed, none reused

    def test_topk_exhaustion_is_partial_error(self):
        store = make_store(range(10))
        with pytest.raises(PartialDatasetError):
            baseline_topk(store, "toy", "x", 5, 10.0, random.Random(0))  # pos pool size 1


class TestDelta:
    def test_examples(self):
        store = make_store([10.0, 35.0, 20.0, 40.0, 30.0, 50.0])
        pairs = build_dataset(store, "toy", "x", 2, SamplerConfig(m=3, rng_seed=0))
        for p in pairs:
            assert delta(p) == p.rejected_fitness - p.chosen_fitness

    def test_mean_and_population_std(self):
        from evopref.sampler import PreferencePair

        pairs = [
            PreferencePair("x", "a", "b", 0.0, d, 1, 3) for d in (10.0, 20.0, 30.0)
        ]
        stats = delta_stats(pairs)
        assert stats.mean == pytest.approx(20.0)
        assert stats.std == pytest.approx(math.sqrt(200.0 / 3.0))

    def test_single_pair_delta(self):
        from evopref.sampler import PreferencePair

        assert delta(PreferencePair("x", "a", "b", 10.0, 35.0, 1, 3)) == 25.0

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            delta_stats([])


class TestConfig:
    def test_validation(self):
        with pytest.raises(SamplerConfigError):
            SamplerConfig(m=2)
        with pytest.raises(SamplerConfigError):
            SamplerConfig(tau=0.0)
        with pytest.raises(SamplerConfigError):
            SamplerConfig(strategy="nope")
        with pytest.raises(SamplerConfigError):
            SamplerConfig(strategy="topk", k_percent=100.0)
        SamplerConfig(strategy="topk", k_percent=5.0)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=3, max_value=8),
    st.integers(min_value=0, max_value=10_000),
)
def test_property_every_pair_has_tier_gap_and_fitness_order(m, seed):
    store = make_store([float(i) for i in range(m * 6)])
    pairs = build_dataset(store, "toy", "x", 3, SamplerConfig(m=m, rng_seed=seed))
    for p in pairs:
        assert p.rejected_tier - p.chosen_tier >= 2
        assert p.chosen_fitness <= p.rejected_fitness
