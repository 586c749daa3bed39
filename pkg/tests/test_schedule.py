import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ml2rgodic.schedule import PowerSumCache, StepSchedule, power_sums, refined_schedule, step


def test_step_examples():
    assert step(StepSchedule(1.0, 0.5), 4) == pytest.approx(0.5, abs=0)
    assert step(StepSchedule(2.0, 0.2), 1) == 2.0
    assert step(StepSchedule(1.0, 0.2, clamp=0.002), 1) == 0.002


def test_step_validation():
    with pytest.raises(ValueError):
        StepSchedule(-1.0, 0.5)
    with pytest.raises(ValueError):
        StepSchedule(1.0, 1.5)
    with pytest.raises(ValueError):
        StepSchedule(1.0, 0.5, clamp=0.0)
    with pytest.raises(ValueError):
        step(StepSchedule(1.0, 0.5), 0)


@given(gamma1=st.floats(0.01, 10), a=st.floats(0.05, 0.95),
       clamp=st.one_of(st.none(), st.floats(0.001, 5)), k=st.integers(1, 10**6))
def test_step_monotone_positive(gamma1, a, clamp, k):
    s = StepSchedule(gamma1, a, clamp)
    g1, g2 = step(s, k), step(s, k + 1)
    assert g1 > 0 and g2 <= g1


def test_power_sums_small_examples():
    ps = power_sums(StepSchedule(1.0, 0.5), 2, 2)
    assert ps[1] == pytest.approx(1.0 + 2 ** -0.5, rel=1e-15)
    assert ps[2] == pytest.approx(1.5, rel=1e-15)


def test_power_sums_paper_bracket():
    ps = power_sums(StepSchedule(1.0, 0.2), 10**6, 1)
    lo = (10 ** 4.8 - 2) / 0.8
    hi = 10 ** 4.8 / 0.8
    assert lo <= ps[1] <= hi


def test_power_sums_asymptotic_ratios():
    a, g1, n = 0.2, 1.0, 10**6
    ps = power_sums(StepSchedule(g1, a), n, 3)
    for l in (2, 3):
        pred = (1 - a) / (1 - a * l) * g1 ** (l - 1) * n ** (-a * (l - 1))
        assert ps[l] / ps[1] == pytest.approx(pred, rel=0.01)


def test_power_sums_accuracy_vs_fsum():
    sched = StepSchedule(1.3, 1 / 3)
    n = 10**6
    ps = power_sums(sched, n, 2)
    ks = np.arange(1, n + 1, dtype=float)
    for l in (1, 2):
        exact = math.fsum((1.3 * ks ** (-1 / 3)) ** l)
        assert ps[l] == pytest.approx(exact, rel=1e-12)


@given(gamma1=st.floats(0.1, 5), a=st.floats(0.1, 0.9), n=st.integers(1, 3000),
       l=st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_power_sums_increment_property(gamma1, a, n, l):
    # one-step extension adds exactly step(n+1)^l, up to one rounding of the sum
    sched = StepSchedule(gamma1, a)
    cache = PowerSumCache(sched, l)
    p0 = cache.extend(n)
    p1 = cache.extend(n + 1)
    inc = step(sched, n + 1) ** l
    tol = 8 * np.finfo(float).eps * max(p1[l], inc)
    assert abs((p1[l] - p0[l]) - inc) <= tol


def test_cache_incremental_matches_fresh():
    sched = StepSchedule(0.7, 0.4, clamp=0.5)
    cache = PowerSumCache(sched, 3)
    cache.extend(100)
    snap = cache.extend(5000)
    fresh = power_sums(sched, 5000, 3)
    for l in (1, 2, 3):
        assert snap[l] == pytest.approx(fresh[l], rel=1e-14)
    with pytest.raises(ValueError):
        cache.extend(10)


def test_refined_schedule_examples():
    assert refined_schedule(StepSchedule(1.0, 0.2), 2, 3).gamma1 == 1.0
    assert refined_schedule(StepSchedule(1.0, 0.2), 4, 2).gamma1 == pytest.approx(0.25)
    assert refined_schedule(StepSchedule(6.0, 0.2), 3, 3).gamma1 == pytest.approx(2.0)


@given(M=st.integers(2, 6), gamma1=st.floats(0.1, 5), a=st.floats(0.1, 0.9))
def test_refined_schedule_level2_identity(M, gamma1, a):
    sched = StepSchedule(gamma1, a)
    assert refined_schedule(sched, 2, M) == sched


def test_refined_schedule_scales_clamp_proportionally():
    sched = StepSchedule(4.0, 0.25, clamp=1.0)
    ref = refined_schedule(sched, 3, 2)
    for k in (1, 5, 50, 5000):
        assert step(ref, k) == pytest.approx(step(sched, k) / 2.0, rel=1e-15)
