import math

import mpmath
import pytest
from hypothesis import given, strategies as st

from lifeguard.config import ConfigError
from lifeguard.core.timeouts import LocalHealth, gossip_budget, suspicion_bounds, suspicion_timeout

mpmath.mp.dps = 40


def oracle_timeout(lo, hi, k, c):
    lo, hi = mpmath.mpf(lo), mpmath.mpf(hi)
    v = hi - (hi - lo) * mpmath.log10(c + 1) / mpmath.log10(k + 1)
    return max(lo, v)


def test_timeout_examples():
    assert suspicion_timeout(10_000, 60_000, 3, 0) == 60_000
    assert suspicion_timeout(10_000, 60_000, 3, 3) == pytest.approx(10_000)
    assert suspicion_timeout(10_000, 60_000, 3, 1) == pytest.approx(35_000, abs=1e-6)
    assert suspicion_timeout(10_000, 60_000, 3, 5) == 10_000
    assert round(suspicion_timeout(10_000, 60_000, 3, 2) / 1000, 2) == 20.38


def test_timeout_rejects_inverted_bounds():
    with pytest.raises(ConfigError):
        suspicion_timeout(2000, 1000, 3, 0)


@given(st.integers(1, 60), st.integers(0, 60), st.integers(1, 6), st.integers(0, 12))
def test_timeout_matches_oracle(lo_s, extra_s, k, c):
    lo, hi = lo_s * 1000, (lo_s + extra_s) * 1000
    assert abs(suspicion_timeout(lo, hi, k, c) - float(oracle_timeout(lo, hi, k, c))) < 1e-6


@given(st.floats(100, 1e5), st.floats(0, 1e5), st.integers(1, 8))
def test_timeout_non_increasing_in_c(lo, extra, k):
    vals = [suspicion_timeout(lo, lo + extra, k, c) for c in range(k + 3)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == lo + extra
    assert all(v == pytest.approx(lo) for v in vals[k:])


def test_bounds_examples():
    assert suspicion_bounds(10, 2, 2, 1000) == pytest.approx((2000, 4000))
    lo, hi = suspicion_bounds(128, 5, 6, 1000)
    assert abs(lo - 10536) <= 1 and abs(hi - 63216) <= 1
    assert suspicion_bounds(1, 5, 6, 1000) == (1000, 6000)


def test_swim_equivalent_timeout_is_constant():
    lo, hi = suspicion_bounds(128, 5, 1, 1000)
    assert {suspicion_timeout(lo, hi, 3, c) for c in range(6)} == {lo}


def test_gossip_budget():
    assert gossip_budget(128, 4) == 9
    assert gossip_budget(1, 4) == 2
    assert gossip_budget(9, 4) == 4


def test_local_health_saturates():
    h = LocalHealth(8)
    for _ in range(20):
        h.apply(1)
    assert h.value == 8
    assert h.scale(1000) == 9000 and h.scale(500) == 4500
    for _ in range(20):
        h.apply(-1)
    assert h.value == 0
    assert h.scale(1000) == 1000


def test_local_health_disabled_stays_zero():
    h = LocalHealth(8, enabled=False)
    h.apply(3)
    assert h.value == 0


@given(st.lists(st.sampled_from([-1, 1, 2]), max_size=200))
def test_local_health_bounds(events):
    h = LocalHealth(8)
    for d in events:
        h.apply(d)
        assert 0 <= h.value <= 8
        assert h.scale(1000) == 1000 * (h.value + 1)
