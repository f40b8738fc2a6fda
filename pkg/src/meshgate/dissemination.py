"""Sharing proxy estimates between clients and recovering stale proxies."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from meshgate.coords import CoordinateShare, NetworkCoordinate
from meshgate.proxy_load import ProxyEstimate

ENTRY_BYTES = 160
HEADER_BYTES = 10

DEFAULT_M1 = 1.0  # s per ms of proxy distance
DEFAULT_M2 = 5.0  # s per closer client
DEFAULT_B = 10.0  # s


@dataclass(frozen=True)
class GossipPayload:
    sender: str
    sender_coord: NetworkCoordinate
    proxy_reports: tuple[ProxyEstimate, ...] = ()
    neighbor_digest: tuple[tuple[str, NetworkCoordinate], ...] = ()
    proxy_rtt: Optional[tuple[str, float]] = None

    @classmethod
    def from_share(cls, share: CoordinateShare, reports: Iterable[ProxyEstimate] = ()) -> "GossipPayload":
        return cls(share.sender, share.sender_coord, tuple(reports), share.neighbor_digest, share.proxy_rtt)

    @property
    def share(self) -> CoordinateShare:
        return CoordinateShare(self.sender, self.sender_coord, self.proxy_rtt, self.neighbor_digest)

    def wire_size(self) -> int:
        return HEADER_BYTES + ENTRY_BYTES * (len(self.proxy_reports) + len(self.neighbor_digest))


def bounded_reports(table: Mapping[str, ProxyEstimate], limit: int) -> tuple[ProxyEstimate, ...]:
    """At most ``limit`` measured reports, freshest kept."""
    reports = [r for r in table.values() if r.samples > 0]
    reports.sort(key=lambda r: (-r.round, r.proxy))
    return tuple(sorted(reports[:limit], key=lambda r: r.proxy))


def _precedence(report: ProxyEstimate) -> tuple:
    # newest round first, then lowest origin id; remaining fields make the order total
    return (-report.round, report.origin_node, astuple(report))


def merge_reports(
    local: Mapping[str, ProxyEstimate],
    incoming: Iterable[ProxyEstimate],
) -> dict[str, ProxyEstimate]:
    merged = dict(local)
    for report in incoming:
        current = merged.get(report.proxy)
        if current is None or _precedence(report) < _precedence(current):
            merged[report.proxy] = report
    return merged


def personalized_timeout(
    proxy_distance: float,
    num_closer: int,
    m1: float = DEFAULT_M1,
    m2: float = DEFAULT_M2,
    b: float = DEFAULT_B,
) -> float:
    """Seconds a client waits on a silent proxy before probing it itself."""
    if proxy_distance < 0 or num_closer < 0:
        raise ValueError("distance and rank must be non-negative")
    timeout = m1 * proxy_distance + m2 * num_closer + b
    return timeout if timeout > 0 else b


@dataclass
class RecoveryTimer:
    proxy: str
    timeout: float
    armed_at: float  # ms

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")

    @property
    def deadline(self) -> float:
        return self.armed_at + self.timeout * 1000.0


@dataclass
class RecoveryTimers:
    """One client's recovery timers plus the proxies it has given up on for now."""

    timers: dict[str, RecoveryTimer] = field(default_factory=dict)
    unavailable_until: dict[str, float] = field(default_factory=dict)
    probes: int = 0
    cancellations: int = 0

    def arm(self, proxy: str, timeout: float, now: float) -> Optional[RecoveryTimer]:
        if proxy in self.timers:
            return None
        timer = RecoveryTimer(proxy, timeout, now)
        self.timers[proxy] = timer
        return timer

    def disarm(self, proxy: str) -> bool:
        if self.timers.pop(proxy, None) is not None:
            self.cancellations += 1
            return True
        return False

    def is_armed(self, timer: RecoveryTimer) -> bool:
        return self.timers.get(timer.proxy) is timer

    def available(self, proxy: str, now: float) -> bool:
        return now >= self.unavailable_until.get(proxy, -math.inf)


def recovery_probe(
    timers: RecoveryTimers,
    timer: RecoveryTimer,
    now: float,
    probe: Callable[[str], bool],
) -> bool:
    """Fire an expired timer: probe the proxy unless an update already cancelled it.

    ``probe(proxy)`` issues the active request and reports whether it could
    be sent. A failed probe parks the proxy for one recovery period.
    Returns True when a probe went out.
    """
    if not timers.is_armed(timer) or now < timer.deadline:
        return False
    del timers.timers[timer.proxy]
    timers.probes += 1
    if not probe(timer.proxy):
        timers.unavailable_until[timer.proxy] = now + timer.timeout * 1000.0
    return True


def spread_rounds(n: int) -> int:
    """ceil(log2(n)): rounds for everyone to learn a fact under doubling spread."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1).bit_length()


def simulate_spread(
    n: int,
    rng: np.random.Generator,
    mode: str = "push-pull",
    max_rounds: int = 10_000,
) -> list[int]:
    """Informed-node counts per round for random-contact gossip on a complete graph.

    Each round every node contacts one uniformly random other node. Starts
    with one informed node; returns counts starting with round 0.
    """
    if mode not in ("push", "pull", "push-pull"):
        raise ValueError(f"unknown mode {mode!r}")
    informed = np.zeros(n, dtype=bool)
    informed[0] = True
    counts = [1]
    idx = np.arange(n)
    while counts[-1] < n and len(counts) <= max_rounds:
        if n == 1:
            break
        partner = rng.integers(0, n - 1, n)
        partner += partner >= idx  # skip self
        before = informed.copy()
        if mode in ("pull", "push-pull"):
            informed |= before[partner]
        if mode in ("push", "push-pull"):
            informed[partner[before]] = True
        counts.append(int(informed.sum()))
    return counts
