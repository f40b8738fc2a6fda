"""Deterministic discrete-event simulation of a client/proxy mesh.

Time is kept in (float) milliseconds. Every random draw comes from a named
substream of the run seed, so a (scenario, strategy, seed) triple always
produces the same event sequence.

Request model, per download through proxy ``p``::

    arrives at p      = issued + 2 * rtt(c, p)
    service           = FIFO, 1000 / capacity(p) ms per request
    first byte        = service end + internet_delay(p)
    completed         = first byte + size / min(path bw, internet bw of p)
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import count
from typing import Callable, Optional

import numpy as np

from meshgate.coords import VivaldiNode, VivaldiParams, apply_share, predict_rtt, round_tick, system_error
from meshgate.dissemination import (
    GossipPayload,
    RecoveryTimer,
    RecoveryTimers,
    bounded_reports,
    merge_reports,
    personalized_timeout,
    recovery_probe,
)
from meshgate.proxy_load import Diagnostics, ProxyEstimate, TtfbSample, ema_update, penalty_tick, raw_proxy_latency
from meshgate.rng import stream
from meshgate.selection import Row, SelectionTable, Strategy, select
from meshgate.simnet.metrics import ClientRound, DownloadRecord, RoundMetrics
from meshgate.simnet.scenario import Scenario, validate_scenario


class InvalidScenario(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario: " + "; ".join(problems))


class SimulationAborted(RuntimeError):
    pass


@dataclass
class HttpRequest:
    client: str
    proxy: str
    size: int
    issued_at: float
    first_byte_at: Optional[float] = None
    completed_at: Optional[float] = None
    aborted_at: Optional[float] = None
    probe: bool = False
    probe_timeout_s: float = 0.0

    @property
    def done(self) -> bool:
        return self.completed_at is not None or self.aborted_at is not None


class ProxyServer:
    """Single FIFO server with a deterministic per-request service time."""

    def __init__(self, proxy: str, capacity_rps: float):
        self.proxy = proxy
        self.service_ms = 1000.0 / capacity_rps
        self.free_at = -math.inf
        self.served = 0

    def admit(self, t: float) -> tuple[float, float]:
        start = max(t, self.free_at)
        end = start + self.service_ms
        self.free_at = end
        self.served += 1
        return start, end


class LiveTopology:
    """Time-dependent view of the scenario's links and proxies."""

    def __init__(self, scenario: Scenario):
        topo = scenario.topology
        self.topo = topo
        self._index = {e: i for i, e in enumerate(topo.endpoints)}
        self._rtt = np.asarray(topo.rtt_ms, dtype=float)
        self._slow = [f for f in scenario.faults if f.kind == "slow_path"]
        self._internet = [f for f in scenario.faults if f.kind == "internet_delay"]
        self._proxies = set(topo.proxies)

    def rtt(self, a: str, b: str, t: float) -> float:
        value = float(self._rtt[self._index[a], self._index[b]])
        for f in self._slow:
            if not f.active(t):
                continue
            link = f.link()
            if link is not None:
                if {a, b} == set(link):
                    value += f.magnitude
            elif f.target in (a, b) and not (a in self._proxies and b in self._proxies):
                value += f.magnitude
        return value

    def internet_delay(self, proxy: str, t: float) -> float:
        value = self.topo.internet_delay_ms[proxy]
        for f in self._internet:
            if f.target == proxy and f.active(t):
                value += f.magnitude
        return value

    def transfer_ms(self, proxy: str, size: int) -> float:
        mbps = min(self.topo.path_bandwidth_mbps, self.topo.internet_bandwidth_mbps[proxy])
        return size * 8.0 / (mbps * 1e6) * 1000.0


@dataclass
class _Client:
    cid: str
    node: VivaldiNode
    rng_coords: np.random.Generator
    rng_proxy: np.random.Generator
    table: dict[str, ProxyEstimate] = field(default_factory=dict)
    current: Optional[str] = None
    outstanding: Optional[HttpRequest] = None
    timers: RecoveryTimers = field(default_factory=RecoveryTimers)
    round: int = 0
    switches: int = 0
    selected: dict[int, Optional[str]] = field(default_factory=dict)
    bytes_by_round: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    downloads_by_round: dict[int, list[float]] = field(default_factory=lambda: defaultdict(list))
    aborts_by_round: dict[int, int] = field(default_factory=lambda: defaultdict(int))


class _MeshView:
    """What the coordinate protocol sees of the simulated network."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def ping(self, src, dst, count, rng):
        base = self.sim.live.rtt(src, dst, self.sim.now)
        jitter = self.sim.scenario.topology.ping_jitter
        if jitter > 0.0:
            return [base * (1.0 + jitter * float(e)) for e in rng.exponential(1.0, count)]
        return [base] * count

    def coordinate(self, node):
        client = self.sim.clients.get(node)
        return None if client is None else client.node.coord


@dataclass
class SimulationResult:
    scenario: Scenario
    strategy: Strategy
    seed: int
    rounds: list[RoundMetrics]
    downloads: list[DownloadRecord]
    requests_issued: int
    requests_completed: int
    requests_aborted: int
    probes_issued: int
    switches: dict[str, int]
    diagnostics: Diagnostics
    warnings: list[str] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario, strategy: Strategy | str | None = None, seed: Optional[int] = None):
        problems = validate_scenario(scenario)
        if problems:
            raise InvalidScenario(problems)
        self.scenario = scenario
        self.strategy = Strategy(strategy if strategy is not None else scenario.strategies[0])
        self.seed = scenario.seed if seed is None else int(seed)
        self.live = LiveTopology(scenario)
        self.view = _MeshView(self)

        proto = scenario.protocol
        self.period_ms = proto.round_period_s * 1000.0
        self.end_ms = scenario.duration_s * 1000.0
        self.cap_ms = scenario.workload.abort_after_s * 1000.0
        self.n_rounds = int(math.ceil(scenario.duration_s * 1000.0 / self.period_ms))
        self.vparams = VivaldiParams(
            dimensions=proto.dimensions,
            pings=proto.pings_per_round,
            closest=proto.closest,
            random=proto.random,
            step_constant=proto.step_constant,
            error_constant=proto.error_constant,
            error_cap=proto.error_cap,
            aggregate=proto.ping_aggregate,
            eviction_limit=proto.eviction_limit,
            proxy_step_constant=proto.proxy_step_constant,
        )

        topo = scenario.topology
        self.clients: dict[str, _Client] = {}
        for cid in topo.clients:
            rc = stream(self.seed, "coords", cid)
            rp = stream(self.seed, "proxy", cid)
            node = VivaldiNode.create(cid, rc, self.vparams, peers=topo.clients, proxies=topo.proxies)
            self.clients[cid] = _Client(cid, node, rc, rp)
        self.servers = {p: ProxyServer(p, topo.proxy_capacity[p]) for p in topo.proxies}

        self.now = 0.0
        self._heap: list = []
        self._seq = count()
        self.downloads: list[DownloadRecord] = []
        self.rounds: list[RoundMetrics] = []
        self.diagnostics = Diagnostics()
        self.issued = 0
        self.completed = 0
        self.aborted = 0
        self.probes = 0
        self.warnings: list[str] = []

    # -- event plumbing --

    def _at(self, t: float, handler: Callable, *args, priority: int = 1) -> None:
        heapq.heappush(self._heap, (t, priority, next(self._seq), handler, args))

    def _round_of(self, t: float) -> int:
        return int(math.floor(t / self.period_ms))

    def _charge(self, client: _Client, nbytes: int) -> None:
        k = self._round_of(self.now)
        if k >= 0:
            client.bytes_by_round[k] += nbytes

    # -- run --

    def run(self, max_events: int = 50_000_000) -> SimulationResult:
        proto = self.scenario.protocol
        n = len(self.clients)
        first = -proto.warmup_rounds
        for i, c in enumerate(self.clients.values()):
            offset = i * self.period_ms / n
            self._at(first * self.period_ms + offset, self._tick, c, first)
        for k in range(self.n_rounds):
            self._at((k + 1) * self.period_ms, self._snapshot, k, priority=0)
        self._schedule_background()

        processed = 0
        while self._heap:
            t, _prio, _seq, handler, args = heapq.heappop(self._heap)
            self.now = t
            handler(*args)
            processed += 1
            if processed > max_events:
                raise SimulationAborted(f"event budget of {max_events} exhausted at t={t:.0f} ms")

        return SimulationResult(
            scenario=self.scenario,
            strategy=self.strategy,
            seed=self.seed,
            rounds=self.rounds,
            downloads=self.downloads,
            requests_issued=self.issued,
            requests_completed=self.completed,
            requests_aborted=self.aborted,
            probes_issued=self.probes,
            switches={c.cid: c.switches for c in self.clients.values()},
            diagnostics=self.diagnostics,
            warnings=self.warnings,
        )

    def _schedule_background(self) -> None:
        for i, f in enumerate(self.scenario.faults):
            if f.kind != "proxy_load_burst" or f.magnitude <= 0:
                continue
            rng = stream(self.seed, "faults", str(i))
            t = f.start_s * 1000.0
            end = f.end_s * 1000.0
            mean_gap = 1000.0 / f.magnitude
            server = self.servers[f.target]
            while True:
                t += float(rng.exponential(mean_gap))
                if t >= end:
                    break
                self._at(t, self._background, server)

    def _background(self, server: ProxyServer) -> None:
        server.admit(self.now)

    # -- protocol rounds --

    def _tick(self, c: _Client, k: int) -> None:
        proto = self.scenario.protocol
        c.round = k
        c.node.round = k
        out = round_tick(c.node, c.rng_coords, self.view, c.rng_proxy)
        self._charge(c, out.pings_sent * self.scenario.workload.ping_size_bytes)
        if out.share is not None:
            reports = bounded_reports(c.table, self.vparams.capacity) if proto.share_load else ()
            payload = GossipPayload.from_share(out.share, reports)
            self._charge(c, payload.wire_size())
            self._deliver(payload, self.clients[out.neighbor])

        if k + 1 < self.n_rounds:
            self._at(self.now + self.period_ms, self._tick, c, k + 1)
        if k < 0:
            return

        self._penalize(c, k)
        if self.strategy is Strategy.MIN_LOAD:
            self._arm_recovery(c, k)
        choice = select(self._table(c), self.strategy, k, proto.staleness_rounds)
        if choice != c.current:
            if c.current is not None:
                c.switches += 1
            c.current = choice
        c.selected[k] = choice
        if c.outstanding is None:
            self._issue(c)

    def _deliver(self, payload: GossipPayload, to: _Client) -> None:
        apply_share(to.node, payload.share, to.rng_proxy)
        if not payload.proxy_reports:
            return
        merged = merge_reports(to.table, payload.proxy_reports)
        for proxy, report in merged.items():
            if to.table.get(proxy) is not report:
                to.timers.disarm(proxy)
        to.table = merged

    def _predicted(self, c: _Client, proxy: str) -> Optional[float]:
        return c.node.predicted_proxy_rtt(proxy)

    def _penalize(self, c: _Client, k: int) -> None:
        req = c.outstanding
        if req is None or req.first_byte_at is not None:
            return
        est = c.table.get(req.proxy)
        if est is None or est.samples == 0:
            return
        waited = self.now - req.issued_at - 2.0 * (self._predicted(c, req.proxy) or 0.0)
        c.table[req.proxy] = penalty_tick(est, waited, self.scenario.protocol.alpha, origin_node=c.cid, round=k)

    def _table(self, c: _Client) -> SelectionTable:
        topo = self.scenario.topology
        rows = {}
        for p in topo.proxies:
            est = c.table.get(p)
            measured = est is not None and est.samples > 0
            rows[p] = Row(
                predicted_rtt=self._predicted(c, p),
                proxy_load=est.published if measured else None,
                hops=topo.hops[c.cid][p],
                freshness=est.round if measured else None,
            )
        unavailable = {p for p in topo.proxies if not c.timers.available(p, self.now)}
        current = c.current if c.current in rows else None
        return SelectionTable(rows, current, self.scenario.protocol.threshold_ms, unavailable)

    # -- recovery --

    def _arm_recovery(self, c: _Client, k: int) -> None:
        proto = self.scenario.protocol
        busy = c.outstanding.proxy if c.outstanding is not None else None
        for p in self.scenario.topology.proxies:
            if p == busy or p in c.timers.timers or not c.timers.available(p, self.now):
                continue
            est = c.table.get(p)
            if est is not None and est.samples > 0 and k - est.round <= proto.staleness_rounds:
                continue
            distance, closer = self._rank_towards(c, p)
            timeout = personalized_timeout(distance, closer, proto.m1, proto.m2, proto.b)
            timer = c.timers.arm(p, timeout, self.now)
            if timer is not None:
                self._at(timer.deadline, self._fire_timer, c, timer)

    def _rank_towards(self, c: _Client, proxy: str) -> tuple[float, int]:
        entry = c.node.proxy_store.get(proxy)
        if entry is None:
            return 0.0, 0
        mine = predict_rtt(c.node.coord, entry.coord)
        closer = sum(
            1 for coord in c.node.known.values() if coord is not None and predict_rtt(coord, entry.coord) < mine
        )
        return mine, closer

    def _fire_timer(self, c: _Client, timer: RecoveryTimer) -> None:
        recovery_probe(c.timers, timer, self.now, lambda p: self._probe(c, p, timer.timeout))

    def _probe(self, c: _Client, proxy: str, timeout_s: float) -> bool:
        if self.now >= self.end_ms:
            return False
        wl = self.scenario.workload
        req = HttpRequest(c.cid, proxy, 0, self.now, probe=True, probe_timeout_s=timeout_s)
        self.probes += 1
        self._charge(c, wl.probe_request_bytes + wl.probe_response_bytes)
        self._at(self.now + 2.0 * self.live.rtt(c.cid, proxy, self.now), self._arrive, c, req)
        return True

    # -- downloads --

    def _issue(self, c: _Client) -> None:
        if c.outstanding is not None or c.current is None or self.now >= self.end_ms:
            return
        req = HttpRequest(c.cid, c.current, self.scenario.workload.size_bytes, self.now)
        c.outstanding = req
        self.issued += 1
        self._at(self.now + 2.0 * self.live.rtt(c.cid, req.proxy, self.now), self._arrive, c, req)

    def _arrive(self, c: _Client, req: HttpRequest) -> None:
        _start, end = self.servers[req.proxy].admit(self.now)
        first_byte = end + self.live.internet_delay(req.proxy, end)
        deadline = req.issued_at + self.cap_ms
        if first_byte <= deadline:
            self._at(first_byte, self._first_byte, c, req)
        if req.probe:
            if first_byte > deadline:
                self._at(deadline, self._abort, c, req)
            return
        completed = first_byte + self.live.transfer_ms(req.proxy, req.size)
        if completed <= deadline:
            self._at(completed, self._complete, c, req)
        else:
            self._at(deadline, self._abort, c, req)

    def _first_byte(self, c: _Client, req: HttpRequest) -> None:
        if req.aborted_at is not None:
            return
        req.first_byte_at = self.now
        sample = TtfbSample(req.proxy, self.now - req.issued_at, self._predicted(c, req.proxy) or 0.0, c.round)
        raw = raw_proxy_latency(sample, self.diagnostics)
        # a probe answers for a row that went stale, so it re-seeds rather than folds in
        est = ProxyEstimate(req.proxy) if req.probe else c.table.get(req.proxy) or ProxyEstimate(req.proxy)
        c.table[req.proxy] = ema_update(est, raw, self.scenario.protocol.alpha, origin_node=c.cid, round=c.round)
        c.timers.disarm(req.proxy)
        if req.probe:
            req.completed_at = self.now

    def _complete(self, c: _Client, req: HttpRequest) -> None:
        req.completed_at = self.now
        self.completed += 1
        elapsed = self.now - req.issued_at
        self.downloads.append(
            DownloadRecord(c.cid, req.proxy, req.issued_at, req.first_byte_at - req.issued_at, elapsed, "completed")
        )
        k = self._round_of(self.now)
        c.downloads_by_round[k].append(elapsed)
        self._finish(c)

    def _abort(self, c: _Client, req: HttpRequest) -> None:
        if req.done:
            return
        req.aborted_at = self.now
        if req.probe:
            c.timers.unavailable_until[req.proxy] = self.now + req.probe_timeout_s * 1000.0
            self.warnings.append(f"probe {c.cid}->{req.proxy} aborted at {self.now:.0f} ms")
            return
        self.aborted += 1
        ttfb = None if req.first_byte_at is None else req.first_byte_at - req.issued_at
        self.downloads.append(DownloadRecord(c.cid, req.proxy, req.issued_at, ttfb, self.now - req.issued_at, "aborted"))
        c.aborts_by_round[self._round_of(self.now)] += 1
        self.warnings.append(f"download {c.cid}->{req.proxy} aborted after {self.cap_ms:.0f} ms")
        self._finish(c)

    def _finish(self, c: _Client) -> None:
        c.outstanding = None
        think = self.scenario.workload.think_time_ms
        if think > 0:
            self._at(self.now + think, self._issue, c)
        else:
            self._issue(c)

    # -- observation --

    def _snapshot(self, k: int) -> None:
        topo = self.scenario.topology
        clients = list(self.clients.values())
        t = self.now
        true = np.array([[self.live.rtt(a.cid, b.cid, t) if a is not b else 0.0 for b in clients] for a in clients])
        err = system_error(true, [c.node.coord for c in clients]) if clients else None

        proxy_errs = []
        for c in clients:
            errs = [
                abs(pred - self.live.rtt(c.cid, p, t))
                for p in topo.proxies
                if (pred := self._predicted(c, p)) is not None
            ]
            if errs:
                proxy_errs.append(float(np.median(errs)))

        rows = []
        for c in clients:
            times = c.downloads_by_round.get(k, [])
            aborted = c.aborts_by_round.get(k, 0)
            if times:
                status = "ok"
            elif aborted:
                status = "aborted"
            elif c.outstanding is not None:
                status = "outstanding"
            else:
                status = "idle"
            estimates = {}
            for p in topo.proxies:
                est = c.table.get(p)
                estimates[p] = est.published if est is not None and est.samples > 0 else math.nan
            rows.append(
                ClientRound(
                    client=c.cid,
                    selected=c.selected.get(k),
                    downloads=len(times),
                    download_mean_ms=float(np.mean(times)) if times else math.nan,
                    download_max_ms=float(np.max(times)) if times else math.nan,
                    status=status,
                    overhead_bytes=int(c.bytes_by_round.get(k, 0)),
                    estimates=estimates,
                    predicted_rtt={p: (v if (v := self._predicted(c, p)) is not None else math.nan) for p in topo.proxies},
                )
            )
        self.rounds.append(
            RoundMetrics(
                round=k,
                time_s=k * self.period_ms / 1000.0,
                system_error_ms=err.value if err is not None and err.defined else math.nan,
                proxy_error_ms=float(np.median(proxy_errs)) if proxy_errs else math.nan,
                clients=rows,
            )
        )


def simulate(scenario: Scenario, seed: Optional[int] = None, strategy: Strategy | str | None = None) -> SimulationResult:
    return Simulation(scenario, strategy=strategy, seed=seed).run()
