"""Passive proxy-load estimation from client-observed time to first byte.

A client that sees TTFB ``t`` through a proxy ``p`` at predicted mesh RTT
``r`` attributes ``t - 2r`` to the proxy itself (queueing, processing and
the proxy's own upstream first byte). Those raw values are noisy, so the
published figure is an exponential moving average with a waiting penalty:
while a request is outstanding, the estimate climbs towards the time
already waited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

DEFAULT_ALPHA = 0.05
REQUEST_RTT_FACTOR = 2.0  # handshake + request, each one mesh round trip


@dataclass(frozen=True)
class TtfbSample:
    proxy: str
    ttfb: float
    mesh_rtt: float
    round: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.ttfb) and self.ttfb > 0.0):
            raise ValueError(f"ttfb must be positive, got {self.ttfb!r}")
        if not (math.isfinite(self.mesh_rtt) and self.mesh_rtt >= 0.0):
            raise ValueError(f"mesh_rtt must be non-negative, got {self.mesh_rtt!r}")


@dataclass
class Diagnostics:
    samples: int = 0
    clamped: int = 0

    @property
    def clamp_rate(self) -> float:
        return self.clamped / self.samples if self.samples else 0.0


def raw_proxy_latency(
    sample: TtfbSample,
    diagnostics: Optional[Diagnostics] = None,
    rtt_factor: float = REQUEST_RTT_FACTOR,
) -> float:
    value = sample.ttfb - rtt_factor * sample.mesh_rtt
    if diagnostics is not None:
        diagnostics.samples += 1
        if value < 0.0:
            diagnostics.clamped += 1
    return max(0.0, value)


@dataclass(frozen=True)
class ProxyEstimate:
    """One client's view of a proxy's load, as stored and gossiped.

    ``ema`` is the confirmed moving average; ``ema_pending`` shadows it with
    waiting penalties applied and is what gets published. ``samples == 0``
    marks an estimate with no measurement behind it yet.
    """

    proxy: str
    raw: float = 0.0
    ema: float = 0.0
    ema_pending: float = 0.0
    last_ttfb: float = 0.0
    origin_node: str = ""
    round: int = -1
    samples: int = 0

    @property
    def published(self) -> float:
        return self.ema_pending


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")


def ema_update(
    est: ProxyEstimate,
    new_raw: float,
    alpha: float = DEFAULT_ALPHA,
    *,
    origin_node: Optional[str] = None,
    round: Optional[int] = None,
) -> ProxyEstimate:
    """Fold a completed measurement into the confirmed average.

    Resumes from ``est.ema`` regardless of any pending penalties, and resets
    the pending shadow to the new average.
    """
    _check_alpha(alpha)
    if new_raw < 0.0 or not math.isfinite(new_raw):
        raise ValueError(f"raw latency must be finite and >= 0, got {new_raw!r}")
    ema = new_raw if est.samples == 0 else alpha * new_raw + (1.0 - alpha) * est.ema
    return replace(
        est,
        raw=new_raw,
        ema=ema,
        ema_pending=ema,
        last_ttfb=new_raw,
        origin_node=est.origin_node if origin_node is None else origin_node,
        round=est.round if round is None else round,
        samples=est.samples + 1,
    )


def penalty_tick(
    est: ProxyEstimate,
    waiting_time: float,
    alpha: float = DEFAULT_ALPHA,
    *,
    origin_node: Optional[str] = None,
    round: Optional[int] = None,
) -> ProxyEstimate:
    """One measurement period passed with a request still outstanding."""
    _check_alpha(alpha)
    last = est.last_ttfb
    if waiting_time >= last:
        last = waiting_time
    pending = alpha * last + (1.0 - alpha) * est.ema_pending
    return replace(
        est,
        last_ttfb=last,
        ema_pending=pending,
        origin_node=est.origin_node if origin_node is None else origin_node,
        round=est.round if round is None else round,
    )
