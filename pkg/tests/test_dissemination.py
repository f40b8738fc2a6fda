from __future__ import annotations

import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import star
from meshgate.coords import CoordinateShare, NetworkCoordinate
from meshgate.dissemination import (
    GossipPayload,
    RecoveryTimer,
    RecoveryTimers,
    bounded_reports,
    merge_reports,
    personalized_timeout,
    recovery_probe,
    simulate_spread,
    spread_rounds,
)
from meshgate.proxy_load import ProxyEstimate
from meshgate.simnet.engine import Simulation
from meshgate.simnet.scenario import scenario_from_dict

reports = st.builds(
    ProxyEstimate,
    proxy=st.sampled_from(["p1", "p2", "p3"]),
    raw=st.floats(0, 1e3),
    ema=st.floats(0, 1e3),
    ema_pending=st.floats(0, 1e3),
    last_ttfb=st.floats(0, 1e3),
    origin_node=st.sampled_from(["a", "b", "c"]),
    round=st.integers(0, 10),
    samples=st.integers(1, 5),
)
report_lists = st.lists(reports, max_size=8)


def rep(proxy, round, origin="a", ema=1.0):
    return ProxyEstimate(proxy, ema=ema, ema_pending=ema, origin_node=origin, round=round, samples=1)


class TestMerge:
    def test_into_empty(self):
        assert merge_reports({}, [rep("p1", 5)]) == {"p1": rep("p1", 5)}

    def test_keeps_newer_round(self):
        assert merge_reports({"p1": rep("p1", 7)}, [rep("p1", 5)])["p1"].round == 7

    def test_round_tie_prefers_lower_origin(self):
        merged = merge_reports({"p1": rep("p1", 3, "b", 9.0)}, [rep("p1", 3, "a", 1.0)])
        assert merged["p1"].origin_node == "a"

    @settings(max_examples=1000, deadline=None)
    @given(report_lists, st.randoms(use_true_random=False))
    def test_order_independent(self, items, rnd):
        shuffled = list(items)
        rnd.shuffle(shuffled)
        assert merge_reports({}, items) == merge_reports({}, shuffled)

    @settings(max_examples=1000, deadline=None)
    @given(st.lists(report_lists, max_size=6))
    def test_stored_round_never_decreases(self, batches):
        table: dict = {}
        for batch in batches:
            new = merge_reports(table, batch)
            for proxy, r in table.items():
                assert new[proxy].round >= r.round
            table = new


class TestPayload:
    def test_wire_size(self):
        coord = NetworkCoordinate((0.0, 0.0))
        share = CoordinateShare("a", coord, None, (("b", coord), ("c", coord)))
        payload = GossipPayload.from_share(share, [rep("p1", 1)])
        assert payload.wire_size() == 10 + 160 * 3
        assert payload.share == share

    def test_bounded_reports_keeps_freshest(self):
        table = {f"p{i}": rep(f"p{i}", i) for i in range(12)}
        table["unmeasured"] = ProxyEstimate("unmeasured")
        kept = bounded_reports(table, 8)
        assert len(kept) == 8
        assert {r.round for r in kept} == set(range(4, 12))


class TestTimeout:
    def test_intercept(self):
        assert personalized_timeout(0.0, 0) == 10.0

    def test_arithmetic(self):
        assert personalized_timeout(20.0, 2, 1.0, 5.0, 10.0) == 40.0

    def test_non_positive_clamps_to_b(self):
        assert personalized_timeout(10.0, 1, m1=-5.0, m2=-5.0, b=10.0) == 10.0

    def test_rejects_negative_inputs(self):
        with pytest.raises(ValueError):
            personalized_timeout(-1.0, 0)

    @settings(max_examples=1000, deadline=None)
    @given(st.floats(0, 1e3), st.integers(0, 50), st.floats(0.01, 1e3), st.integers(1, 50))
    def test_strictly_increasing(self, d, k, dd, dk):
        t = personalized_timeout(d, k)
        assert personalized_timeout(d + dd, k) > t
        assert personalized_timeout(d, k + dk) > t

    @pytest.mark.parametrize("seed", range(10))
    def test_closest_client_times_out_first(self, seed):
        rng = np.random.default_rng(seed)
        clients = rng.uniform(0, 100, (20, 2))
        proxy = rng.uniform(0, 100, 2)
        dist = np.linalg.norm(clients - proxy, axis=1)
        closer = [(dist < d).sum() for d in dist]
        timeouts = [personalized_timeout(d, int(k)) for d, k in zip(dist, closer)]
        assert int(np.argmin(timeouts)) == int(np.argmin(dist))


class TestRecoveryTimers:
    def test_update_cancels_probe(self):
        timers = RecoveryTimers()
        timer = timers.arm("p", 15.0, now=0.0)
        assert timers.disarm("p") and timers.cancellations == 1
        fired = []
        assert not recovery_probe(timers, timer, 20_000.0, fired.append)
        assert fired == []

    def test_fires_after_deadline_only(self):
        timers = RecoveryTimers()
        timer = timers.arm("p", 15.0, now=1000.0)
        assert timer.deadline == 16_000.0
        sent = []
        assert not recovery_probe(timers, timer, 15_999.0, lambda p: sent.append(p) or True)
        assert recovery_probe(timers, timer, 16_000.0, lambda p: sent.append(p) or True)
        assert sent == ["p"] and not timers.is_armed(timer)

    def test_failed_probe_parks_proxy_for_one_period(self):
        timers = RecoveryTimers()
        timer = timers.arm("p", 20.0, now=0.0)
        assert recovery_probe(timers, timer, 20_000.0, lambda p: False)
        assert not timers.available("p", 39_999.0)
        assert timers.available("p", 40_000.0)

    def test_double_arm_is_noop(self):
        timers = RecoveryTimers()
        assert timers.arm("p", 10.0, 0.0) is not None
        assert timers.arm("p", 10.0, 5.0) is None

    def test_timeout_must_be_positive(self):
        with pytest.raises(ValueError):
            RecoveryTimer("p", 0.0, 0.0)


def _probe_log(sim: Simulation) -> list[tuple[float, str, str]]:
    log = []
    original = sim._probe

    def spy(client, proxy, timeout_s):
        log.append((sim.now, client.cid, proxy))
        return original(client, proxy, timeout_s)

    sim._probe = spy
    return log


def _two_clients_one_idle_proxy():
    # on a line: c2 -45, a -2, c1 0, b 5; both use "a", "b" is 5 ms from c1 and 50 ms from c2
    pos = {"c1": 0.0, "c2": -45.0, "a": -2.0, "b": 5.0}
    order = ["c1", "c2", "a", "b"]
    rtt = [[abs(pos[x] - pos[y]) for y in order] for x in order]
    return scenario_from_dict(
        {
            "name": "idle-proxy",
            "duration_s": 900,
            "strategies": ["min_load"],
            "protocol": {"warmup_rounds": 20},
            "topology": {
                "clients": ["c1", "c2"],
                "proxies": ["a", "b"],
                "rtt_ms": rtt,
                "hops": [[1, 1], [1, 1]],
                "ping_jitter": 0.0,
            },
        }
    )


class TestRecoveryInSimulation:
    def test_nearer_client_probes_and_farther_is_cancelled(self):
        sim = Simulation(_two_clients_one_idle_proxy(), seed=1)
        log = _probe_log(sim)
        result = sim.run()
        probes_b = [(t, c) for t, c, p in log if p == "b"]
        assert probes_b, "idle proxy was never probed"
        assert probes_b[0][1] == "c1"
        assert sum(1 for _, c in probes_b if c == "c1") > sum(1 for _, c in probes_b if c == "c2")
        assert sim.clients["c2"].timers.cancellations > 0
        assert result.requests_issued == result.requests_completed + result.requests_aborted

    def test_silent_proxy_gets_probed(self):
        sc = star([10.0, 12.0], duration_s=400)
        sc.topology.proxies.append("q")
        sc.topology.rtt_ms = np.array(
            [[0.0, 20.0, 10.0, 30.0], [20.0, 0.0, 12.0, 35.0], [10.0, 12.0, 0.0, 25.0], [30.0, 35.0, 25.0, 0.0]]
        )
        sc.topology.hops = {"c1": {"p": 1, "q": 1}, "c2": {"p": 1, "q": 1}}
        for attr in ("proxy_capacity", "internet_delay_ms", "internet_bandwidth_mbps"):
            getattr(sc.topology, attr)["q"] = getattr(sc.topology, attr)["p"]
        sim = Simulation(sc, seed=2)
        log = _probe_log(sim)
        sim.run()
        assert any(p == "q" for _, _, p in log)


class TestSpread:
    def test_thirty_thousand_nodes(self):
        assert spread_rounds(30_000) == 15

    @pytest.mark.parametrize("n, r", [(1, 0), (2, 1), (3, 2), (256, 8), (257, 9)])
    def test_ceil_log2(self, n, r):
        assert spread_rounds(n) == r == math.ceil(math.log2(n))

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            spread_rounds(0)

    @pytest.mark.parametrize("mode", ["push", "pull", "push-pull"])
    def test_informed_count_non_decreasing(self, mode):
        counts = simulate_spread(128, np.random.default_rng(0), mode)
        assert counts[0] == 1 and counts[-1] == 128
        assert all(a <= b for a, b in zip(counts, counts[1:]))

    def test_single_node(self):
        assert simulate_spread(1, np.random.default_rng(0)) == [1]

    def test_push_pull_beats_push(self):
        rounds = {m: np.median([len(simulate_spread(256, np.random.default_rng(s), m)) - 1 for s in range(30)]) for m in ("push", "push-pull")}
        assert rounds["push-pull"] < rounds["push"]


def test_reduce_matches_single_merge():
    items = [rep("p1", 1, "b"), rep("p1", 4, "c"), rep("p2", 2), rep("p1", 4, "a")]
    stepwise = reduce(lambda acc, r: merge_reports(acc, [r]), items, {})
    assert stepwise == merge_reports({}, items)
    assert stepwise["p1"].origin_node == "a"


@settings(max_examples=1000, deadline=None)
@given(report_lists)
def test_idempotent(items):
    once = merge_reports({}, items)
    assert merge_reports(once, items) == once
    assert merge_reports(once, once.values()) == once


@settings(max_examples=1000, deadline=None)
@given(report_lists, report_lists)
def test_commutative(xs, ys):
    a, b = merge_reports({}, xs), merge_reports({}, ys)
    assert merge_reports(a, b.values()) == merge_reports(b, a.values())


@settings(max_examples=1000, deadline=None)
@given(report_lists, report_lists, report_lists)
def test_associative(xs, ys, zs):
    a, b, c = (merge_reports({}, v) for v in (xs, ys, zs))
    left = merge_reports(merge_reports(a, b.values()), c.values())
    right = merge_reports(a, merge_reports(b, c.values()).values())
    assert left == right
