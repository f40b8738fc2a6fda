"""Analytical and measured protocol overhead, in bytes per second.

The coordinate protocol costs every node ``2 * ping_size * pings/period``
of probing plus one gossip message per period carrying up to ``n_p`` load
reports and ``n_n`` neighbour coordinates at 160 bytes each over a 10 byte
header. Load sharing adds the active recovery probes, which the whole
system issues at roughly ``proxies * payload / timeout``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from scipy import stats

from meshgate.dissemination import ENTRY_BYTES, HEADER_BYTES

DEFAULT_PING_SIZE = 112  # bytes; reconstructed so the per-client total is 436 B/s


@dataclass(frozen=True)
class OverheadParams:
    n: int
    n_n: int = 8
    n_p: int = 8
    round_period: float = 10.0
    round_pings: int = 8
    ping_size: float = DEFAULT_PING_SIZE
    payload_request: int = 300
    payload_response: int = 500

    def __post_init__(self) -> None:
        if self.n < 0 or self.n_n < 0 or self.n_p < 0:
            raise ValueError("node, neighbour and proxy counts must be non-negative")
        for name in ("round_period", "round_pings", "ping_size", "payload_request", "payload_response"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def ping_freq(self) -> float:
        return self.round_pings / self.round_period

    @property
    def payload(self) -> int:
        return self.payload_request + self.payload_response


def ping_rate(p: OverheadParams) -> float:
    """Per-node probing bytes/s."""
    return 2.0 * p.ping_size * p.ping_freq


def vivaldi_data_rate(p: OverheadParams) -> float:
    """Per-node gossip bytes/s."""
    return (p.n_p * ENTRY_BYTES + p.n_n * ENTRY_BYTES + HEADER_BYTES) / p.round_period


def vivaldi_overhead(p: OverheadParams) -> float:
    """Aggregate coordinate-protocol bytes/s over all ``n`` nodes."""
    return (ping_rate(p) + vivaldi_data_rate(p)) * p.n


def ttfb_overhead(proxies: int, payload: float, timeout: float) -> float:
    """Aggregate recovery-probe bytes/s, with each proxy probed about once per ``timeout`` s."""
    if proxies < 0 or payload < 0:
        raise ValueError("proxies and payload must be non-negative")
    if not timeout > 0:
        raise ValueError("timeout must be positive")
    return proxies * payload / timeout


class Prediction(NamedTuple):
    params: OverheadParams
    proxies: int
    probe_interval_s: float
    vivaldi: float  # aggregate B/s
    ttfb: float  # aggregate B/s

    @property
    def total(self) -> float:
        return self.vivaldi + self.ttfb

    @property
    def per_client(self) -> float:
        return self.total / self.params.n if self.params.n else 0.0


def predict(scenario) -> Prediction:
    """Analytical overhead for a scenario's size and protocol settings.

    Neighbour and proxy counts are the table capacity capped by what the
    scenario can actually fill. A probe refreshes a proxy's row for every
    client, so a silent proxy is probed at most once per staleness window
    plus base timeout.
    """
    proto = scenario.protocol
    wl = scenario.workload
    capacity = proto.closest + proto.random
    n = len(scenario.topology.clients)
    proxies = len(scenario.topology.proxies)
    params = OverheadParams(
        n=n,
        n_n=min(capacity, max(n - 1, 0)),
        n_p=min(capacity, proxies),
        round_period=proto.round_period_s,
        round_pings=proto.pings_per_round,
        ping_size=wl.ping_size_bytes,
        payload_request=wl.probe_request_bytes,
        payload_response=wl.probe_response_bytes,
    )
    interval = proto.staleness_rounds * proto.round_period_s + proto.b
    ttfb = ttfb_overhead(proxies, params.payload, interval) if n else 0.0
    return Prediction(params, proxies, interval, vivaldi_overhead(params), ttfb)


def empirical_overhead(rounds: Sequence, round_period_s: float) -> float:
    """Measured protocol bytes/s per client, averaged over the whole run."""
    client_rounds = 0
    total = 0
    for rm in rounds:
        for row in rm.clients:
            client_rounds += 1
            total += row.overhead_bytes
    if client_rounds == 0:
        return 0.0
    return total / (client_rounds * round_period_s)


def aggregate_empirical(rounds: Sequence, round_period_s: float) -> float:
    """Measured protocol bytes/s summed over all clients."""
    if not rounds:
        return 0.0
    total = sum(row.overhead_bytes for rm in rounds for row in rm.clients)
    return total / (len(rounds) * round_period_s)


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def linear_fit(xs: Iterable[float], ys: Iterable[float]) -> LinearFit:
    xs, ys = list(xs), list(ys)
    if len(xs) < 2:
        raise ValueError("need at least two points")
    res = stats.linregress(xs, ys)
    r2 = res.rvalue**2 if math.isfinite(res.rvalue) else 1.0
    return LinearFit(float(res.slope), float(res.intercept), float(r2))


def format_report(pred: Prediction, empirical: float | None = None) -> str:
    p = pred.params
    lines = [
        f"nodes                 {p.n}",
        f"neighbours / proxies  {p.n_n} / {p.n_p}",
        f"round period          {p.round_period:g} s, {p.round_pings} pings of {p.ping_size:g} B",
        f"probe rate            {ping_rate(p):.1f} B/s per client",
        f"gossip data           {vivaldi_data_rate(p):.1f} B/s per client",
        f"recovery probes       {pred.ttfb:.1f} B/s total ({pred.proxies} proxies, every {pred.probe_interval_s:g} s)",
        f"predicted per client  {pred.per_client:.1f} B/s",
        f"predicted total       {pred.total:.1f} B/s",
    ]
    if empirical is not None:
        rel = (empirical - pred.per_client) / pred.per_client if pred.per_client else 0.0
        lines.append(f"measured per client   {empirical:.1f} B/s ({rel:+.1%} vs predicted)")
    return "\n".join(lines)
