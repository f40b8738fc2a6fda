"""Run summaries, their JSON form, and side-by-side comparison tables."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from meshgate import overhead
from meshgate.selection import Strategy

PEAK_THRESHOLD_S = 2.0


class ScenarioMismatch(ValueError):
    pass


@dataclass
class StrategySummary:
    strategy: str
    downloads: int
    aborted: int
    avg_s: float
    median_s: float
    max_s: float
    peaks_over_2s: int
    switches: int
    probes: int
    coord_error_p50_ms: float
    coord_error_p80_ms: float
    overhead_predicted_bps: float
    overhead_empirical_bps: float

    def __post_init__(self) -> None:
        if self.downloads and not (self.max_s >= self.median_s >= 0.0):
            raise ValueError("expected max >= median >= 0")
        if math.isfinite(self.coord_error_p50_ms) and not self.coord_error_p80_ms >= self.coord_error_p50_ms:
            raise ValueError("coordinate error percentiles out of order")


@dataclass
class RunReport:
    scenario: str
    scenario_hash: str
    seed: int
    summaries: list[StrategySummary] = field(default_factory=list)

    def summary(self, strategy: str) -> StrategySummary:
        for s in self.summaries:
            if s.strategy == str(strategy):
                return s
        raise KeyError(strategy)

    def to_json(self) -> str:
        data = asdict(self)
        for s in data["summaries"]:
            for k, v in s.items():
                if isinstance(v, float) and not math.isfinite(v):
                    s[k] = None
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        data = json.loads(text)
        names = {f.name for f in fields(StrategySummary)}
        summaries = []
        for s in data["summaries"]:
            s = {k: (math.nan if v is None else v) for k, v in s.items() if k in names}
            summaries.append(StrategySummary(**s))
        return cls(data["scenario"], data["scenario_hash"], int(data["seed"]), summaries)

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _percentile(values: Sequence[float], q: float) -> float:
    vals = [v for v in values if math.isfinite(v)]
    return float(np.percentile(vals, q)) if vals else math.nan


def summarize(result) -> StrategySummary:
    """Condense a SimulationResult into the numbers a run report carries."""
    done = np.array([d.download_ms for d in result.downloads if d.status == "completed"]) / 1000.0
    errors = [rm.system_error_ms for rm in result.rounds]
    period = result.scenario.protocol.round_period_s
    return StrategySummary(
        strategy=str(result.strategy),
        downloads=int(done.size),
        aborted=result.requests_aborted,
        avg_s=float(done.mean()) if done.size else math.nan,
        median_s=float(np.median(done)) if done.size else math.nan,
        max_s=float(done.max()) if done.size else math.nan,
        peaks_over_2s=int((done > PEAK_THRESHOLD_S).sum()),
        switches=sum(result.switches.values()),
        probes=result.probes_issued,
        coord_error_p50_ms=_percentile(errors, 50),
        coord_error_p80_ms=_percentile(errors, 80),
        overhead_predicted_bps=overhead.predict(result.scenario).per_client,
        overhead_empirical_bps=overhead.empirical_overhead(result.rounds, period),
    )


def _num(v: float, digits: int) -> str:
    return "n/a" if not math.isfinite(v) else f"{v:.{digits}f}"


_ROWS: list[tuple[str, str, int]] = [
    ("avg download (s)", "avg_s", 3),
    ("median download (s)", "median_s", 3),
    ("max download (s)", "max_s", 3),
    ("downloads > 2 s", "peaks_over_2s", 0),
    ("downloads", "downloads", 0),
    ("aborted", "aborted", 0),
    ("proxy switches", "switches", 0),
    ("recovery probes", "probes", 0),
    ("coord error p50 (ms)", "coord_error_p50_ms", 2),
    ("coord error p80 (ms)", "coord_error_p80_ms", 2),
    ("overhead predicted (B/s)", "overhead_predicted_bps", 1),
    ("overhead measured (B/s)", "overhead_empirical_bps", 1),
]


def _table(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    line = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([line(header), line(["-" * w for w in widths]), *(line(r) for r in body)])


def format_report(report: RunReport) -> str:
    header = ["metric", *(s.strategy for s in report.summaries)]
    body = [[label, *(_num(float(getattr(s, attr)), d) for s in report.summaries)] for label, attr, d in _ROWS]
    title = f"scenario {report.scenario}  seed {report.seed}  hash {report.scenario_hash[:12]}"
    return title + "\n" + _table(header, body) + "\n"


@dataclass
class Comparison:
    scenario_hash: str
    columns: list[str]
    values: dict[str, list[float]]
    deltas: dict[str, list[float]]  # column minus the first column

    def improvement(self, column: str, attr: str = "avg_s") -> float:
        """Relative reduction of ``attr`` in ``column`` against the first column."""
        base = self.values[attr][0]
        return -self.deltas[attr][self.columns.index(column)] / base if base else math.nan


def _strategy_rank(name: str) -> int:
    order = [s.value for s in Strategy]
    return order.index(name) if name in order else len(order)


def compare(reports: Sequence[RunReport]) -> Comparison:
    """Line up every strategy run from ``reports`` against the first one.

    Columns follow report order, and within a report the fixed strategy
    order. A strategy seen in more than one report gets a ``#k`` suffix.
    """
    if not reports:
        raise ValueError("nothing to compare")
    first = reports[0]
    for r in reports[1:]:
        if r.scenario_hash != first.scenario_hash:
            raise ScenarioMismatch(
                f"scenario hash mismatch: {first.scenario_hash} ({first.scenario}) vs {r.scenario_hash} ({r.scenario})"
            )
    entries: list[tuple[str, StrategySummary]] = []
    seen: dict[str, int] = {}
    for r in reports:
        for s in sorted(r.summaries, key=lambda s: _strategy_rank(s.strategy)):
            seen[s.strategy] = seen.get(s.strategy, 0) + 1
            label = s.strategy if seen[s.strategy] == 1 else f"{s.strategy}#{seen[s.strategy]}"
            entries.append((label, s))
    if len(entries) < 2:
        raise ValueError("need at least two strategy runs to compare")
    values = {attr: [float(getattr(s, attr)) for _, s in entries] for _, attr, _ in _ROWS}
    deltas = {attr: [v - vals[0] for v in vals] for attr, vals in values.items()}
    return Comparison(first.scenario_hash, [label for label, _ in entries], values, deltas)


def format_comparison(cmp: Comparison) -> str:
    header = ["metric", *cmp.columns, *(f"d({c})" for c in cmp.columns[1:])]
    body = []
    for label, attr, d in _ROWS:
        vals = cmp.values[attr]
        dl = cmp.deltas[attr][1:]
        body.append([label, *(_num(v, d) for v in vals), *(_delta(v, d) for v in dl)])
    imp = ["avg improvement", *([""] * len(cmp.columns)), *(_pct(cmp.improvement(c)) for c in cmp.columns[1:])]
    body.append(imp)
    return f"scenario hash {cmp.scenario_hash[:12]}, deltas against {cmp.columns[0]}\n" + _table(header, body) + "\n"


def _delta(v: float, digits: int) -> str:
    return "n/a" if not math.isfinite(v) else f"{v + 0.0:+.{digits}f}"


def _pct(v: float) -> str:
    return "n/a" if not math.isfinite(v) else f"{v:+.1%}"

