import math

import pytest

from specverify.models import TableArModel
from specverify.oracle import (
    SINGLE_DRAFT_VERIFIERS,
    YieldDistribution,
    enumerate_yield,
    monte_carlo_fit,
    target_joint_distribution,
    total_variation,
)

from conftest import pair_for


@pytest.mark.parametrize("verifier", SINGLE_DRAFT_VERIFIERS)
def test_identical_models_yield_the_target_exactly(identical_pair, verifier):
    p, q = identical_pair
    yielded = enumerate_yield(verifier, p, q, 3, 3)
    assert total_variation(yielded, target_joint_distribution(p, 3)) <= 1e-12


@pytest.mark.parametrize("verifier", SINGLE_DRAFT_VERIFIERS)
def test_random_pairs_are_lossless(verifier):
    for seed in range(5):
        p, q = pair_for(seed, vocab=3, depth=3, eps=1.0)
        yielded = enumerate_yield(verifier, p, q, 3, 3)
        assert total_variation(yielded, target_joint_distribution(p, 3)) <= 1e-9
        assert abs(yielded.total() - 1.0) <= 1e-9


def test_enumeration_guards():
    p, q = pair_for(0, vocab=3, depth=3)
    with pytest.raises(ValueError):
        enumerate_yield("capped-hsd", p, q, 3, 2)  # length shorter than draft
    with pytest.raises(ValueError):
        enumerate_yield("nonsense", p, q, 3, 3)
    with pytest.raises(ValueError):
        enumerate_yield("capped-hsd", p, q, 3, 4)  # models too shallow for length
    big_p, big_q = pair_for(0, vocab=12, depth=6, eps=0.3)
    with pytest.raises(ValueError):
        enumerate_yield("capped-hsd", big_p, big_q, 6, 6)  # 12^6 drafts


def test_total_variation_properties():
    a = YieldDistribution({(0,): 1.0}, 1)
    b = YieldDistribution({(1,): 1.0}, 1)
    assert total_variation(a, a) == 0.0
    assert total_variation(a, b) == 1.0
    with pytest.raises(ValueError):
        total_variation(a, YieldDistribution({(0, 0): 1.0}, 2))


def test_total_variation_is_half_l1():
    p, q = pair_for(3, vocab=3, depth=2, eps=1.0)
    a = target_joint_distribution(p, 2)
    b = target_joint_distribution(q, 2)
    half_l1 = 0.5 * math.fsum(abs(a.probs[k] - b.probs[k]) for k in a.probs)
    assert abs(total_variation(a, b) - half_l1) <= 1e-15


def test_monte_carlo_requires_enough_trials(small_pair):
    p, q = small_pair
    with pytest.raises(ValueError):
        monte_carlo_fit("capped-hsd", p, q, 3, 3, 5000, 1)


def test_monte_carlo_passes_for_identical_models(identical_pair):
    p, q = identical_pair
    report = monte_carlo_fit("capped-hsd", p, q, 3, 3, 20_000, 11)
    assert report.passed
    assert report.tv < report.tv_bound


def test_monte_carlo_passes_for_a_real_pair(small_pair):
    p, q = small_pair
    report = monte_carlo_fit("tokenwise", p, q, 3, 3, 30_000, 12)
    assert report.passed


def test_monte_carlo_catches_a_corrupted_verifier(small_pair):
    p, q = small_pair
    report = monte_carlo_fit("capped-hsd", p, q, 3, 3, 30_000, 13, mutate="h-double")
    assert not report.passed
    assert report.z_violations >= 1


def test_enumeration_catches_doubled_acceptance():
    detected = 0
    for seed in range(5):
        p, q = pair_for(seed, vocab=3, depth=3, eps=1.0)
        yielded = enumerate_yield("capped-hsd", p, q, 3, 3, mutate="h-double")
        if total_variation(yielded, target_joint_distribution(p, 3)) > 1e-9:
            detected += 1
    assert detected == 5


def test_enumeration_catches_unclamped_acceptance():
    detected = 0
    for seed in range(20):
        p, q = pair_for(seed, vocab=3, depth=3, eps=1.0)
        yielded = enumerate_yield("capped-hsd", p, q, 3, 3, mutate="unclamp")
        if total_variation(yielded, target_joint_distribution(p, 3)) > 1e-9:
            detected += 1
    assert detected >= 1


def test_mutation_validation(small_pair):
    p, q = small_pair
    with pytest.raises(ValueError):
        enumerate_yield("capped-hsd", p, q, 3, 3, mutate="nonsense")
    with pytest.raises(ValueError):
        enumerate_yield("tokenwise", p, q, 3, 3, mutate="unclamp")
    with pytest.raises(ValueError):
        monte_carlo_fit("capped-hsd", p, q, 3, 3, 10_000, 1, mutate="unclamp")
    with pytest.raises(ValueError):
        monte_carlo_fit("multidraft-hsd", p, q, 3, 3, 10_000, 1, k_drafts=2, mutate="h-double")


def test_monte_carlo_is_worker_count_independent(small_pair):
    p, q = small_pair
    serial = monte_carlo_fit("capped-hsd", p, q, 2, 2, 10_000, 21, workers=1)
    parallel = monte_carlo_fit("capped-hsd", p, q, 2, 2, 10_000, 21, workers=3)
    assert serial == parallel


def test_monte_carlo_multidraft_small_run():
    p, q = pair_for(5, vocab=2, depth=3, eps=0.8)
    for verifier, k in (("multidraft-hsd", 3), ("multidraft-tokenwise", 2)):
        report = monte_carlo_fit(verifier, p, q, 2, 2, 20_000, 22, k_drafts=k)
        assert report.passed, (verifier, report.tv, report.max_z)


def test_monte_carlo_rejects_shallow_models():
    p, q = pair_for(6, vocab=2, depth=2, eps=0.5)
    with pytest.raises(ValueError):
        monte_carlo_fit("capped-hsd", p, q, 2, 2, 10_000, 1)  # no room for a bonus


def test_fit_report_round_trips_to_dict(small_pair):
    p, q = small_pair
    report = monte_carlo_fit("capped-hsd", p, q, 2, 2, 10_000, 23)
    doc = report.to_dict()
    assert doc["pass"] == report.passed
    assert doc["verifier"] == "capped-hsd"
    assert isinstance(doc["worst_sequence"], list)


def test_target_joint_guard():
    model = TableArModel(12, 8, generator=lambda prefix: (1.0 / 12,) * 12)
    with pytest.raises(ValueError):
        target_joint_distribution(model, 8)
