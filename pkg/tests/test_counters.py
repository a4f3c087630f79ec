import copy
import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distbn.counters import (
    ExactCounter,
    SampledCounter,
    counter_rng,
    occurrence_ranks,
    product_probe,
)


def _state(c: SampledCounter):
    return (c.estimate(), c.ledger, c.local, c.total, c.round, c.p, c._countdown, c._ticks, c.base, c.snapshot)


def _expected_estimates(counter: SampledCounter, schedule: list[int]) -> list[Fraction]:
    """Exact expectation of the estimate after each prefix, over every coin sequence."""
    sums = [Fraction(0)] * len(schedule)

    def walk(c, t, weight):
        if t == len(schedule):
            return
        outcomes = [(None, Fraction(1))] if c.p >= 1 else [(True, Fraction(c.p)), (False, 1 - Fraction(c.p))]
        for report, w in outcomes:
            nxt = copy.deepcopy(c) if len(outcomes) > 1 else c
            nxt.increment(schedule[t], report=report)
            sums[t] += weight * w * Fraction(nxt.estimate())
            walk(nxt, t + 1, weight * w)

    walk(counter, 0, Fraction(1))
    return sums


# -- exact counter ------------------------------------------------------------------


def test_exact_counter():
    c = ExactCounter(3)
    assert c.estimate() == 0
    c.increment(1)
    assert c.estimate() == 1 and c.ledger.update_messages == 1
    c.feed(np.array([0, 2, 2, 1]))
    assert c.estimate() == 5 and c.ledger.update_messages == 5 and c.local == [1, 2, 2]
    assert c.ledger.control_messages == 0


# -- sampled counter: unbiasedness --------------------------------------------------------


@pytest.mark.parametrize("p", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("k", [1, 2])
def test_enumerated_expectation_fixed_probability(p, k):
    rng = np.random.default_rng(int(p * 100) + k)
    for length in (1, 5, 12):
        schedule = rng.integers(0, k, size=length).tolist()
        sums = _expected_estimates(SampledCounter(0.5, k, 0, fixed_p=p), schedule)
        assert sums == [Fraction(t + 1) for t in range(length)]


@pytest.mark.parametrize("k,eps", [(1, 1.0), (2, math.sqrt(2) / 4), (2, math.sqrt(2) / 2)])
def test_enumerated_expectation_across_rounds(k, eps):
    # these settings make sqrt(k)/eps a power of two, so every p_j is dyadic and
    # the estimator arithmetic is exact; rounds change inside the 12 increments
    rng = np.random.default_rng(7)
    schedule = rng.integers(0, k, size=12).tolist()
    probe = SampledCounter(eps, k, 0)
    for s in schedule:
        probe.increment(s, report=True)
    assert probe.round >= 2
    sums = _expected_estimates(SampledCounter(eps, k, 0), schedule)
    assert sums == [Fraction(t + 1) for t in range(12)]


def test_forced_suppression_rejected_while_exact():
    c = SampledCounter(0.5, 2, 0)
    with pytest.raises(ValueError):
        c.increment(0, report=False)


@pytest.mark.parametrize("eps,k", [(0.1, 1), (0.2, 4)])
def test_monte_carlo_mean_and_variance_small_count(eps, k):
    C, trials = 1000, 2000
    sites = np.random.default_rng(5).integers(0, k, size=C)
    ranks = occurrence_ranks(sites, k)
    est = np.empty(trials)
    for t in range(trials):
        c = SampledCounter(eps, k, counter_rng(9, t))
        c.feed(sites, ranks)
        est[t] = c.estimate()
    sd = est.std(ddof=1)
    assert abs(est.mean() - C) <= 3 * max(sd, 1e-9) / math.sqrt(trials)
    assert est.var(ddof=1) <= 1.2 * (eps * C) ** 2


# -- batched path -------------------------------------------------------------------------


@given(
    st.integers(1, 12),
    st.sampled_from([0.05, 0.2, 0.5, 1.0]),
    st.integers(0, 6000),
    st.lists(st.integers(0, 6000), max_size=5),
    st.integers(0, 2**32 - 1),
)
def test_feed_matches_per_increment(k, eps, length, cuts, seed):
    sites = np.random.default_rng(seed).integers(0, k, size=length)
    a, b = SampledCounter(eps, k, seed), SampledCounter(eps, k, seed)
    for s in sites:
        a.increment(int(s))
    prev = 0
    for cut in sorted(min(c, length) for c in cuts) + [length]:
        b.feed(sites[prev:cut])
        prev = cut
    assert _state(a) == _state(b)
    # the random streams must also be aligned: continuing both gives the same result
    more = np.random.default_rng(seed + 1).integers(0, k, size=500)
    for s in more:
        a.increment(int(s))
    b.feed(more)
    assert _state(a) == _state(b)


def test_occurrence_ranks():
    sites = np.array([2, 0, 2, 2, 1, 0])
    assert occurrence_ranks(sites, 3).tolist() == [1, 1, 2, 3, 1, 2]


# -- invariants -------------------------------------------------------------------------------


def test_state_invariants_hold_throughout():
    k = 5
    c = SampledCounter(0.05, k, 3)
    rng = np.random.default_rng(3)
    prev_p, prev_update, prev_control = 1.0, 0, 0
    for step in range(30000):
        s = int(rng.integers(0, k))
        c.increment(s)
        if step % 97 == 0:
            assert c.total == sum(c.local)
            assert all(v <= loc for v, loc in zip(c.last, c.local))
            assert 0 < c.p <= prev_p
            assert c.ledger.update_messages >= prev_update and c.ledger.control_messages >= prev_control
            assert c.base == sum(c.snapshot)
            prev_p, prev_update, prev_control = c.p, c.ledger.update_messages, c.ledger.control_messages
    assert c.round > 0


def test_p_one_prefix_is_exact():
    c = SampledCounter(0.01, 4, 0)  # p stays 1 until the total passes 200
    for i in range(150):
        c.increment(i % 4)
        assert c.estimate() == c.total
    assert c.ledger.update_messages == 150 and c.ledger.control_messages == 0


def test_message_budget_example():
    eps, k, C = 0.1, 16, 10**6
    sites = np.random.default_rng(0).integers(0, k, size=C)
    c = SampledCounter(eps, k, 1)
    c.feed(sites)
    assert c.ledger.update_messages <= 40 * (math.sqrt(k) / eps) * math.log2(C)
    assert C / c.ledger.update_messages >= 30


def test_messages_grow_logarithmically():
    eps, k = 0.1, 4
    points = [10**5 * 2**i for i in range(7)]
    msgs = np.zeros(len(points))
    for seed in range(3):
        sites = np.random.default_rng(seed).integers(0, k, size=points[-1])
        c = SampledCounter(eps, k, seed)
        prev = 0
        for i, p in enumerate(points):
            c.feed(sites[prev:p])
            prev = p
            msgs[i] += c.ledger.update_messages
    x = np.log2(points)
    slope, intercept = np.polyfit(x, msgs, 1)
    resid = msgs - (slope * x + intercept)
    r2 = 1 - resid.var() / msgs.var()
    assert slope > 0 and r2 >= 0.9


def test_same_seed_same_run():
    sites = np.random.default_rng(1).integers(0, 8, size=20000)
    runs = []
    for _ in range(2):
        c = SampledCounter(0.05, 8, counter_rng(4, 1, 2))
        c.feed(sites)
        runs.append(_state(c))
    assert runs[0] == runs[1]


def test_argument_validation():
    with pytest.raises(ValueError):
        SampledCounter(0.0, 2)
    with pytest.raises(ValueError):
        SampledCounter(1.5, 2)
    with pytest.raises(ValueError):
        SampledCounter(0.1, 0)
    with pytest.raises(ValueError):
        SampledCounter(0.1, 2, fixed_p=0.0)
    with pytest.raises(ValueError):
        ExactCounter(0)


def test_warns_once_when_sites_exceed_guarantee(caplog):
    with caplog.at_level(logging.WARNING, logger="distbn.counters"):
        SampledCounter(0.9, 7)
        SampledCounter(0.9, 7)
    assert sum("exceeds" in r.message for r in caplog.records) == 1


# -- products ------------------------------------------------------------------------------------


def test_product_probe_exact_when_p_is_one():
    c = SampledCounter(0.5, 2, 0)
    for s in [0, 1, 1]:
        c.increment(s)
    probe = product_probe([c])
    assert probe.estimate == probe.exact == 3 and probe.ratio == 1


def test_product_variance_for_two_optimal_factors():
    eps = 0.16
    jk = np.array([1.0, 8.0])
    alpha = math.sqrt(np.sum(jk ** (2 / 3)))
    nu = jk ** (1 / 3) * eps / (16 * alpha)
    assert math.isclose(np.sum(nu**2), eps**2 / 256, rel_tol=1e-12)
    C, k, trials = 10**4, 4, 2000
    sites = np.random.default_rng(2).integers(0, k, size=C)
    ranks = occurrence_ranks(sites, k)
    ratios = np.empty(trials)
    for t in range(trials):
        counters = [SampledCounter(float(f), k, counter_rng(21, t, i)) for i, f in enumerate(nu)]
        for c in counters:
            c.feed(sites, ranks)
        ratios[t] = product_probe(counters).ratio
    assert ratios.var(ddof=1) <= 2 * np.sum(nu**2) * 1.3
