"""Declarative simulation input: topology, workload, faults, protocol knobs.

Scenario files are TOML. Sections: top-level ``name``/``duration_s``/
``seed``/``strategies``, then ``[protocol]``, ``[workload]``,
``[topology]`` and any number of ``[[faults]]`` tables. See
``scenarios/three_faults.toml`` for a complete example.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from meshgate.selection import Strategy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FAULT_KINDS = ("proxy_load_burst", "internet_delay", "slow_path")
LINK_SEP = "~"


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed into a Scenario."""

    def __init__(self, message: str, field_path: str = "", line: Optional[int] = None):
        self.field_path = field_path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(f"field '{field_path}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class ProtocolParams:
    round_period_s: float = 10.0
    pings_per_round: int = 8
    closest: int = 4
    random: int = 4
    dimensions: int = 2
    step_constant: float = 0.25
    error_constant: float = 0.25
    error_cap: float = 1.0
    proxy_step_constant: float = 0.75
    ping_aggregate: str = "min"
    eviction_limit: int = 10
    alpha: float = 0.05
    threshold_ms: float = 50.0
    staleness_rounds: int = 6
    m1: float = 1.0
    m2: float = 5.0
    b: float = 10.0
    share_load: bool = True
    warmup_rounds: int = 0


@dataclass
class WorkloadParams:
    size_bytes: int = 1_000_000
    think_time_ms: float = 0.0
    abort_after_s: float = 60.0
    ping_size_bytes: int = 112
    probe_request_bytes: int = 300
    probe_response_bytes: int = 500


@dataclass
class FaultEvent:
    kind: str
    target: str
    start_s: float
    end_s: float
    magnitude: float

    def active(self, t_ms: float) -> bool:
        return self.start_s * 1000.0 <= t_ms < self.end_s * 1000.0

    def link(self) -> Optional[tuple[str, str]]:
        if LINK_SEP in self.target:
            a, b = self.target.split(LINK_SEP, 1)
            return a.strip(), b.strip()
        return None


@dataclass
class Topology:
    clients: list[str]
    proxies: list[str]
    rtt_ms: np.ndarray  # over clients + proxies, in that order
    hops: dict[str, dict[str, int]]
    proxy_capacity: dict[str, float]  # requests/s
    internet_delay_ms: dict[str, float]
    internet_bandwidth_mbps: dict[str, float]
    path_bandwidth_mbps: float = 20.0
    ping_jitter: float = 0.05

    @property
    def endpoints(self) -> list[str]:
        return self.clients + self.proxies

    def index(self, endpoint: str) -> int:
        return self.endpoints.index(endpoint)


@dataclass
class Scenario:
    name: str
    duration_s: float
    topology: Topology
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    faults: list[FaultEvent] = field(default_factory=list)
    strategies: list[str] = field(default_factory=lambda: [s.value for s in Strategy])
    seed: int = 1

    def to_dict(self) -> dict[str, Any]:
        topo = self.topology
        return {
            "name": self.name,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "strategies": list(self.strategies),
            "protocol": asdict(self.protocol),
            "workload": asdict(self.workload),
            "topology": {
                "clients": list(topo.clients),
                "proxies": list(topo.proxies),
                "rtt_ms": np.asarray(topo.rtt_ms, dtype=float).tolist(),
                "hops": [[topo.hops[c][p] for p in topo.proxies] for c in topo.clients],
                "proxy_capacity": dict(topo.proxy_capacity),
                "internet_delay_ms": dict(topo.internet_delay_ms),
                "internet_bandwidth_mbps": dict(topo.internet_bandwidth_mbps),
                "path_bandwidth_mbps": topo.path_bandwidth_mbps,
                "ping_jitter": topo.ping_jitter,
            },
            "faults": [asdict(f) for f in self.faults],
        }

    def content_hash(self) -> str:
        """Digest of everything that shapes a run except the seed and strategy list."""
        body = self.to_dict()
        body.pop("seed")
        body.pop("strategies")
        canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def without_faults(self) -> "Scenario":
        from dataclasses import replace

        return replace(self, name=f"{self.name}-nofaults", faults=[])


# -- parsing ----------------------------------------------------------------


def _build_params(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ScenarioError("expected a table", path)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ScenarioError("unknown key", f"{path}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ScenarioError("expected true/false", f"{path}.{key}")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioError("expected a number", f"{path}.{key}")
            if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
                raise ScenarioError("expected an integer", f"{path}.{key}")
            value = type(default)(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ScenarioError("expected a string", f"{path}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def _per_proxy(value: Any, proxies: list[str], path: str, default: float) -> dict[str, float]:
    if value is None:
        return {p: float(default) for p in proxies}
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return {p: float(value) for p in proxies}
    if isinstance(value, dict):
        missing = [p for p in proxies if p not in value]
        extra = [k for k in value if k not in proxies]
        if missing:
            raise ScenarioError(f"missing entries for {missing}", path)
        if extra:
            raise ScenarioError(f"unknown proxies {extra}", path)
        try:
            return {p: float(value[p]) for p in proxies}
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"expected numbers ({exc})", path) from None
    raise ScenarioError("expected a number or a table keyed by proxy", path)


def _id_list(value: Any, path: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ScenarioError("expected a list of identifiers", path)
    return list(value)


def _matrix(value: Any, shape: tuple[int, int], path: str) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("expected a numeric matrix", path) from None
    if m.shape != shape:
        raise ScenarioError(f"expected shape {shape}, got {m.shape}", path)
    return m


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    allowed = {"name", "duration_s", "seed", "strategies", "strategy", "protocol", "workload", "topology", "faults"}
    for key in data:
        if key not in allowed:
            raise ScenarioError("unknown key", key)
    if "topology" not in data:
        raise ScenarioError("missing section", "topology")
    topo_raw = data["topology"]
    if not isinstance(topo_raw, dict):
        raise ScenarioError("expected a table", "topology")
    topo_allowed = {
        "clients", "proxies", "rtt_ms", "hops", "proxy_capacity", "internet_delay_ms",
        "internet_bandwidth_mbps", "path_bandwidth_mbps", "ping_jitter",
    }
    for key in topo_raw:
        if key not in topo_allowed:
            raise ScenarioError("unknown key", f"topology.{key}")
    clients = _id_list(topo_raw.get("clients", []), "topology.clients")
    proxies = _id_list(topo_raw.get("proxies", []), "topology.proxies")
    n = len(clients) + len(proxies)
    if "rtt_ms" not in topo_raw:
        raise ScenarioError("missing", "topology.rtt_ms")
    rtt = _matrix(topo_raw["rtt_ms"], (n, n), "topology.rtt_ms") if n else np.zeros((0, 0))
    hops_raw = topo_raw.get("hops")
    if hops_raw is None:
        raise ScenarioError("missing", "topology.hops")
    if clients and proxies:
        hm = _matrix(hops_raw, (len(clients), len(proxies)), "topology.hops")
    else:
        hm = np.zeros((len(clients), len(proxies)))
    if np.any(hm != np.round(hm)):
        raise ScenarioError("hop counts must be integers", "topology.hops")
    hops = {c: {p: int(hm[i, j]) for j, p in enumerate(proxies)} for i, c in enumerate(clients)}

    def number(key: str, default: float) -> float:
        v = topo_raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioError("expected a number", f"topology.{key}")
        return float(v)

    topology = Topology(
        clients=clients,
        proxies=proxies,
        rtt_ms=rtt,
        hops=hops,
        proxy_capacity=_per_proxy(topo_raw.get("proxy_capacity"), proxies, "topology.proxy_capacity", 48.0),
        internet_delay_ms=_per_proxy(topo_raw.get("internet_delay_ms"), proxies, "topology.internet_delay_ms", 30.0),
        internet_bandwidth_mbps=_per_proxy(
            topo_raw.get("internet_bandwidth_mbps"), proxies, "topology.internet_bandwidth_mbps", 20.0
        ),
        path_bandwidth_mbps=number("path_bandwidth_mbps", 20.0),
        ping_jitter=number("ping_jitter", 0.05),
    )

    faults = []
    faults_raw = data.get("faults", [])
    if not isinstance(faults_raw, list):
        raise ScenarioError("expected an array of tables", "faults")
    for i, f in enumerate(faults_raw):
        path = f"faults[{i}]"
        if not isinstance(f, dict):
            raise ScenarioError("expected a table", path)
        for key in ("kind", "target", "start_s", "end_s", "magnitude"):
            if key not in f:
                raise ScenarioError("missing", f"{path}.{key}")
        extra = set(f) - {"kind", "target", "start_s", "end_s", "magnitude"}
        if extra:
            raise ScenarioError("unknown key", f"{path}.{sorted(extra)[0]}")
        try:
            faults.append(FaultEvent(str(f["kind"]), str(f["target"]), float(f["start_s"]), float(f["end_s"]), float(f["magnitude"])))
        except (TypeError, ValueError):
            raise ScenarioError("expected numbers for start_s/end_s/magnitude", path) from None

    if "strategies" in data and "strategy" in data:
        raise ScenarioError("give either 'strategy' or 'strategies'", "strategies")
    strategies = data.get("strategies", data.get("strategy", [s.value for s in Strategy]))
    if isinstance(strategies, str):
        strategies = [strategies]
    if not isinstance(strategies, list) or not all(isinstance(s, str) for s in strategies):
        raise ScenarioError("expected a strategy name or list of names", "strategies")

    duration = data.get("duration_s", 1600.0)
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        raise ScenarioError("expected a number", "duration_s")
    seed = data.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("expected an integer", "seed")
    name = data.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("expected a string", "name")

    return Scenario(
        name=name,
        duration_s=float(duration),
        topology=topology,
        protocol=_build_params(ProtocolParams, data.get("protocol"), "protocol"),
        workload=_build_params(WorkloadParams, data.get("workload"), "workload"),
        faults=faults,
        strategies=list(strategies),
        seed=seed,
    )


def parse_scenario(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ScenarioError(str(exc), line=line) from None
    return scenario_from_dict(data)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def packaged_scenarios() -> list[str]:
    root = resources.files("meshgate") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def packaged_scenario_text(name: str) -> str:
    return (resources.files("meshgate") / "scenarios" / f"{name}.toml").read_text(encoding="utf-8")


def resolve_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a path, or by name from the packaged fixtures."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if str(ref) in packaged_scenarios():
        return parse_scenario(packaged_scenario_text(str(ref)))
    raise FileNotFoundError(f"no scenario file or packaged fixture named {ref!r}")


# -- validation -------------------------------------------------------------


def validate_scenario(scenario: Scenario) -> list[str]:
    """Empty list when the scenario is runnable, otherwise one message per problem."""
    problems: list[str] = []
    topo = scenario.topology
    endpoints = topo.endpoints
    n = len(endpoints)

    if scenario.duration_s <= 0:
        problems.append("duration_s must be positive")
    if len(set(endpoints)) != n:
        problems.append("endpoint identifiers must be unique across clients and proxies")
    if any(LINK_SEP in e for e in endpoints):
        problems.append(f"endpoint identifiers may not contain '{LINK_SEP}'")
    if topo.clients and not topo.proxies:
        problems.append("clients need at least one proxy")

    rtt = np.asarray(topo.rtt_ms, dtype=float)
    if rtt.shape != (n, n):
        problems.append(f"rtt matrix shape {rtt.shape} does not match {n} endpoints")
    elif n:
        if not np.all(np.isfinite(rtt)):
            problems.append("rtt matrix has non-finite entries")
        elif not np.allclose(rtt, rtt.T, rtol=0.0, atol=1e-9):
            problems.append("rtt not symmetric at t=0")
        off = rtt[~np.eye(n, dtype=bool)]
        if off.size and np.any(off <= 0):
            problems.append("rtt entries must be positive off the diagonal")

    for c in topo.clients:
        for p in topo.proxies:
            if topo.hops.get(c, {}).get(p, 0) < 1:
                problems.append(f"hops {c}->{p} must be >= 1")
    for p, cap in topo.proxy_capacity.items():
        if not cap > 0:
            problems.append(f"proxy_capacity of {p} must be positive")
    for p, d in topo.internet_delay_ms.items():
        if d < 0:
            problems.append(f"internet_delay_ms of {p} must be >= 0")
    for p, bw in topo.internet_bandwidth_mbps.items():
        if not bw > 0:
            problems.append(f"internet_bandwidth_mbps of {p} must be positive")
    if not topo.path_bandwidth_mbps > 0:
        problems.append("path_bandwidth_mbps must be positive")
    if topo.ping_jitter < 0:
        problems.append("ping_jitter must be >= 0")

    valid = {s.value for s in Strategy}
    if not scenario.strategies:
        problems.append("no strategy named")
    for s in scenario.strategies:
        if s not in valid:
            problems.append(f"unknown strategy {s!r} (expected one of {sorted(valid)})")

    proto = scenario.protocol
    if proto.round_period_s <= 0:
        problems.append("protocol.round_period_s must be positive")
    if proto.pings_per_round < 1:
        problems.append("protocol.pings_per_round must be >= 1")
    if proto.closest < 0 or proto.random < 0 or proto.closest + proto.random < 1:
        problems.append("protocol.closest + protocol.random must be >= 1")
    if not 0 < proto.alpha <= 1:
        problems.append("protocol.alpha must be in (0, 1]")
    if proto.threshold_ms < 0:
        problems.append("protocol.threshold_ms must be >= 0")
    if proto.ping_aggregate not in ("min", "median"):
        problems.append("protocol.ping_aggregate must be 'min' or 'median'")
    if proto.dimensions < 1:
        problems.append("protocol.dimensions must be >= 1")
    if proto.warmup_rounds < 0:
        problems.append("protocol.warmup_rounds must be >= 0")
    if proto.b <= 0:
        problems.append("protocol.b must be positive")

    wl = scenario.workload
    if wl.size_bytes <= 0:
        problems.append("workload.size_bytes must be positive")
    if wl.abort_after_s <= 0:
        problems.append("workload.abort_after_s must be positive")
    if wl.think_time_ms < 0:
        problems.append("workload.think_time_ms must be >= 0")

    for i, f in enumerate(scenario.faults):
        tag = f"faults[{i}]"
        if f.kind not in FAULT_KINDS:
            problems.append(f"{tag}: unknown kind {f.kind!r}")
        if not f.start_s < f.end_s:
            problems.append(f"{tag}: window ({f.start_s:g},{f.end_s:g}) must have start < end")
        if f.start_s < 0 or f.end_s > scenario.duration_s:
            problems.append(
                f"{tag}: window ({f.start_s:g},{f.end_s:g}) outside the {scenario.duration_s:g} s run"
            )
        link = f.link()
        if link is not None:
            a, b = link
            if f.kind != "slow_path":
                problems.append(f"{tag}: only slow_path faults may target a link")
            if a not in endpoints or b not in endpoints:
                problems.append(f"{tag}: unknown link endpoint in {f.target!r}")
        elif f.target not in topo.proxies:
            problems.append(f"{tag}: unknown proxy {f.target!r}")
        if f.kind == "proxy_load_burst" and f.magnitude < 0:
            problems.append(f"{tag}: load magnitude must be >= 0")
    return problems


# -- generated scenarios ----------------------------------------------------


def synthetic_scenario(
    n_clients: int,
    n_proxies: int = 3,
    seed: int = 0,
    duration_s: float = 600.0,
    extent_ms: float = 40.0,
    strategies: Optional[list[str]] = None,
) -> Scenario:
    """Planar random topology with per-node access delays; no faults."""
    rng = np.random.default_rng(seed)
    clients = [f"c{i + 1}" for i in range(n_clients)]
    proxies = [f"proxy_{j + 1}" for j in range(n_proxies)]
    pts = rng.uniform(0.0, extent_ms, (n_clients + n_proxies, 2))
    access = rng.uniform(0.5, 2.0, n_clients + n_proxies)
    rtt = np.linalg.norm(pts[:, None] - pts[None], axis=2) + access[:, None] + access[None, :]
    np.fill_diagonal(rtt, 0.0)
    rtt = np.round(rtt, 3)
    hops = {}
    for i, c in enumerate(clients):
        hops[c] = {
            p: 1 + int(rtt[i, n_clients + j] // 8.0) for j, p in enumerate(proxies)
        }
    topo = Topology(
        clients=clients,
        proxies=proxies,
        rtt_ms=rtt,
        hops=hops,
        proxy_capacity={p: 48.0 for p in proxies},
        internet_delay_ms={p: 30.0 for p in proxies},
        internet_bandwidth_mbps={p: 20.0 for p in proxies},
    )
    return Scenario(
        name=f"synthetic-{n_clients}c{n_proxies}p-s{seed}",
        duration_s=duration_s,
        topology=topo,
        strategies=strategies or [Strategy.MIN_LOAD.value],
        seed=seed,
    )

