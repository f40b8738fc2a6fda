"""Per-client proxy selection table and the three ranking strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

DEFAULT_THRESHOLD_MS = 50.0
DEFAULT_STALENESS_ROUNDS = 6


class Strategy(str, Enum):
    MIN_LOAD = "min_load"
    MIN_DELAY = "min_delay"
    MIN_HOP = "min_hop"

    def __str__(self) -> str:
        return self.value


@dataclass
class Row:
    predicted_rtt: Optional[float]
    proxy_load: Optional[float]
    hops: int
    freshness: Optional[int] = None  # round of the newest load report

    def __post_init__(self) -> None:
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        for name in ("predicted_rtt", "proxy_load"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass
class SelectionTable:
    rows: dict[str, Row] = field(default_factory=dict)
    current: Optional[str] = None
    threshold: float = DEFAULT_THRESHOLD_MS
    unavailable: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.current is not None and self.current not in self.rows:
            raise ValueError(f"current proxy {self.current!r} has no row")

    def is_fresh(self, proxy: str, now_round: int, staleness: int = DEFAULT_STALENESS_ROUNDS) -> bool:
        row = self.rows[proxy]
        return row.freshness is not None and now_round - row.freshness <= staleness

    def stale(self, now_round: int, staleness: int = DEFAULT_STALENESS_ROUNDS) -> list[str]:
        return sorted(p for p in self.rows if not self.is_fresh(p, now_round, staleness))


def score_min_load(row: Row) -> float:
    if row.predicted_rtt is None or row.proxy_load is None:
        raise ValueError("row lacks an RTT or load estimate")
    return row.predicted_rtt + row.proxy_load


def _argmin(scores: dict[str, float]) -> str:
    return min(scores, key=lambda p: (scores[p], p))


def _candidates(
    table: SelectionTable, strategy: Strategy, now_round: int, staleness: int
) -> dict[str, float]:
    out = {}
    for proxy, row in table.rows.items():
        if proxy in table.unavailable:
            continue
        if strategy is Strategy.MIN_LOAD:
            if row.predicted_rtt is None or not table.is_fresh(proxy, now_round, staleness):
                continue
            if row.proxy_load is None:
                continue
            out[proxy] = score_min_load(row)
        elif strategy is Strategy.MIN_DELAY:
            if row.predicted_rtt is not None:
                out[proxy] = row.predicted_rtt
        else:
            out[proxy] = float(row.hops)
    return out


def select(
    table: SelectionTable,
    strategy: Strategy | str,
    now_round: int = 0,
    staleness: int = DEFAULT_STALENESS_ROUNDS,
) -> Optional[str]:
    """Proxy to use for the next period.

    Dynamic strategies only move off ``table.current`` when the best
    alternative beats it by more than ``table.threshold``. ``min_hop`` is
    static and moves only when the current proxy is unavailable. With no
    usable row the current choice is kept; with no current choice either,
    the lowest predicted RTT (then lowest hop count) is the fallback.
    """
    strategy = Strategy(strategy)
    current = table.current
    current_ok = current is not None and current not in table.unavailable

    if strategy is Strategy.MIN_HOP and current_ok:
        return current

    scores = _candidates(table, strategy, now_round, staleness)
    if not scores:
        if current_ok:
            return current
        return _fallback(table)

    best = _argmin(scores)
    if current_ok and current in scores and best != current:
        if not scores[best] + table.threshold < scores[current]:
            return current
    return best


def _fallback(table: SelectionTable) -> Optional[str]:
    usable = {p: r for p, r in table.rows.items() if p not in table.unavailable}
    if not usable:
        return None
    with_rtt = {p: r.predicted_rtt for p, r in usable.items() if r.predicted_rtt is not None}
    if with_rtt:
        return _argmin(with_rtt)
    return _argmin({p: float(r.hops) for p, r in usable.items()})
