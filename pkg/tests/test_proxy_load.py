from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshgate.proxy_load import (
    Diagnostics,
    ProxyEstimate,
    TtfbSample,
    ema_update,
    penalty_tick,
    raw_proxy_latency,
)

ms = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)
alphas = st.floats(min_value=1e-3, max_value=1.0)


def seeded(ema: float, last: float | None = None) -> ProxyEstimate:
    """An estimate with one confirmed sample behind it."""
    return ProxyEstimate("p", raw=ema, ema=ema, ema_pending=ema, last_ttfb=ema if last is None else last, samples=1)


class TestRaw:
    def test_subtracts_two_rtts(self):
        assert raw_proxy_latency(TtfbSample("p", 100.0, 20.0)) == 60.0

    def test_clamps_and_counts(self):
        diag = Diagnostics()
        assert raw_proxy_latency(TtfbSample("p", 30.0, 20.0), diag) == 0.0
        raw_proxy_latency(TtfbSample("p", 100.0, 20.0), diag)
        assert diag.samples == 2 and diag.clamped == 1 and diag.clamp_rate == 0.5

    def test_collocated_client(self):
        assert raw_proxy_latency(TtfbSample("p", 42.0, 0.0)) == 42.0

    @pytest.mark.parametrize("ttfb, rtt", [(0.0, 1.0), (-1.0, 1.0), (5.0, -1.0), (math.nan, 1.0)])
    def test_invalid_samples(self, ttfb, rtt):
        with pytest.raises(ValueError):
            TtfbSample("p", ttfb, rtt)


class TestEma:
    def test_arithmetic(self):
        assert ema_update(seeded(100.0), 200.0, 0.05).ema == pytest.approx(105.0)

    def test_first_sample_initializes(self):
        est = ema_update(ProxyEstimate("p"), 80.0, 0.05)
        assert est.ema == est.ema_pending == 80.0 and est.samples == 1

    def test_alpha_one_tracks_raw(self):
        assert ema_update(seeded(100.0), 7.0, 1.0).ema == 7.0

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            ema_update(seeded(1.0), 1.0, 0.0)
        with pytest.raises(ValueError):
            penalty_tick(seeded(1.0), 1.0, 1.5)

    def test_metadata(self):
        est = ema_update(ProxyEstimate("p"), 10.0, 0.5, origin_node="c2", round=4)
        assert (est.origin_node, est.round, est.last_ttfb, est.raw) == ("c2", 4, 10.0, 10.0)


class TestPenalty:
    def test_pending_strictly_increases_while_waiting(self):
        # oracle: iterate the recurrence by hand
        alpha, pending, last = 0.05, 500.0, 500.0
        expected = []
        for waited in (1000.0, 2000.0):
            last = max(last, waited)
            pending = alpha * last + (1 - alpha) * pending
            expected.append(pending)

        est = seeded(500.0, last=500.0)
        seen = []
        for waited in (1000.0, 2000.0):
            est = penalty_tick(est, waited, alpha)
            seen.append(est.published)
        assert seen == pytest.approx(expected)
        assert 500.0 < seen[0] < seen[1]

    def test_short_wait_does_not_inflate(self):
        est = ProxyEstimate("p", ema=300.0, ema_pending=300.0, last_ttfb=500.0, samples=1)
        out = penalty_tick(est, 100.0, 0.05)
        assert out.last_ttfb == 500.0
        assert out.ema_pending == pytest.approx(0.05 * 500.0 + 0.95 * 300.0)

    def test_completion_resumes_from_confirmed_chain(self):
        alpha = 0.05
        est = seeded(200.0, last=200.0)
        for waited in (400.0, 900.0, 1500.0):
            est = penalty_tick(est, waited, alpha)
        assert est.published > 200.0 and est.ema == 200.0
        done = ema_update(est, 1600.0, alpha)
        assert done.published == pytest.approx(alpha * 1600.0 + (1 - alpha) * 200.0)

    @settings(max_examples=1000, deadline=None)
    @given(ms, st.lists(st.floats(0.0, 1e6), min_size=1, max_size=20), alphas)
    def test_never_decreases_when_waiting_grows(self, start, increments, alpha):
        est = seeded(start, last=start)
        waited = start
        for inc in increments:
            waited += inc
            before = est.published
            est = penalty_tick(est, waited, alpha)
            assert est.published >= before - 1e-9 * (1.0 + before)


@settings(max_examples=1000, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6), st.floats(min_value=0.0, max_value=1e6))
def test_clamp_property(ttfb, rtt):
    value = raw_proxy_latency(TtfbSample("p", ttfb, rtt))
    assert value >= 0.0
    assert value == max(0.0, ttfb - 2.0 * rtt)
    assert value <= ttfb


@settings(max_examples=1000, deadline=None)
@given(ms, st.lists(ms, min_size=1, max_size=30))
def test_alpha_one_identity(start, stream):
    est = seeded(start)
    for x in stream:
        est = ema_update(est, x, 1.0)
        assert est.ema == x and est.published == x


@settings(max_examples=1000, deadline=None)
@given(ms, ms, alphas, st.integers(1, 60))
def test_geometric_decay(start, target, alpha, steps):
    est = seeded(start)
    gap = abs(start - target)
    for _ in range(steps):
        before = abs(est.ema - target)
        est = ema_update(est, target, alpha)
        after = abs(est.ema - target)
        assert after <= before * (1.0 - alpha) + 1e-9 * (1.0 + gap)
    closed_form = gap * (1.0 - alpha) ** steps
    assert abs(est.ema - target) == pytest.approx(closed_form, rel=1e-6, abs=1e-6 * (1.0 + gap))
