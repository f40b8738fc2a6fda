"""Per-round observations and their CSV/JSONL serializations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass
class DownloadRecord:
    client: str
    proxy: str
    issued_ms: float
    ttfb_ms: Optional[float]
    download_ms: float
    status: str  # "completed" | "aborted"


@dataclass
class ClientRound:
    client: str
    selected: Optional[str]
    downloads: int
    download_mean_ms: float
    download_max_ms: float
    status: str
    overhead_bytes: int
    estimates: dict[str, float] = field(default_factory=dict)
    predicted_rtt: dict[str, float] = field(default_factory=dict)


@dataclass
class RoundMetrics:
    round: int
    time_s: float
    system_error_ms: float
    proxy_error_ms: float
    clients: list[ClientRound]

    def selection_counts(self, proxies: Sequence[str]) -> dict[str, int]:
        counts = {p: 0 for p in proxies}
        for row in self.clients:
            if row.selected in counts:
                counts[row.selected] += 1
        return counts

    def mean_download_ms(self) -> float:
        """Mean download time over every download completed in this round."""
        total = sum(r.download_mean_ms * r.downloads for r in self.clients if r.downloads)
        n = sum(r.downloads for r in self.clients)
        return total / n if n else math.nan

    def max_download_ms(self) -> float:
        values = [r.download_max_ms for r in self.clients if r.downloads]
        return max(values) if values else math.nan


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.3f}"
    return str(value)


def round_columns(proxies: Sequence[str]) -> list[str]:
    base = [
        "round",
        "time_s",
        "client",
        "selected_proxy",
        "downloads",
        "download_mean_ms",
        "download_max_ms",
        "download_status",
        "system_error_ms",
        "proxy_error_ms",
        "overhead_bytes",
    ]
    return base + [f"est_ms:{p}" for p in proxies] + [f"rtt_ms:{p}" for p in proxies]


def rounds_csv(rounds: Iterable[RoundMetrics], proxies: Sequence[str], scenario_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario_hash={scenario_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(round_columns(proxies))
    for rm in rounds:
        for row in rm.clients:
            writer.writerow(
                [
                    rm.round,
                    _fmt(rm.time_s),
                    row.client,
                    row.selected or "",
                    row.downloads,
                    _fmt(row.download_mean_ms),
                    _fmt(row.download_max_ms),
                    row.status,
                    _fmt(rm.system_error_ms),
                    _fmt(rm.proxy_error_ms),
                    row.overhead_bytes,
                ]
                + [_fmt(row.estimates.get(p, math.nan)) for p in proxies]
                + [_fmt(row.predicted_rtt.get(p, math.nan)) for p in proxies]
            )
    return buf.getvalue()


def downloads_csv(records: Iterable[DownloadRecord], scenario_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario_hash={scenario_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client", "proxy", "issued_ms", "ttfb_ms", "download_ms", "status"])
    for r in records:
        writer.writerow([r.client, r.proxy, _fmt(r.issued_ms), _fmt(r.ttfb_ms), _fmt(r.download_ms), r.status])
    return buf.getvalue()


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def rounds_jsonl(rounds: Iterable[RoundMetrics]) -> str:
    lines = []
    for rm in rounds:
        for row in rm.clients:
            record = {
                "round": rm.round,
                "time_s": rm.time_s,
                "client": row.client,
                "selected_proxy": row.selected,
                "downloads": row.downloads,
                "download_mean_ms": row.download_mean_ms,
                "download_max_ms": row.download_max_ms,
                "download_status": row.status,
                "system_error_ms": rm.system_error_ms,
                "proxy_error_ms": rm.proxy_error_ms,
                "overhead_bytes": row.overhead_bytes,
                "estimates_ms": row.estimates,
            }
            lines.append(json.dumps({k: _json_safe(v) for k, v in record.items()}, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def ecdf(values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and their cumulative fractions."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        return x, x
    return x, np.arange(1, x.size + 1) / x.size


def ecdf_csv(values: Sequence[float], scenario_hash: str) -> str:
    x, y = ecdf(values)
    buf = io.StringIO()
    buf.write(f"# scenario_hash={scenario_hash}\n")
    buf.write("download_ms,fraction\n")
    for a, b in zip(x, y):
        buf.write(f"{a:.3f},{b:.6f}\n")
    return buf.getvalue()
