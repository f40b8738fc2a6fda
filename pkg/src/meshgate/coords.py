"""Vivaldi network coordinates, extended to track passive proxies.

Clients run the usual spring-relaxation protocol among themselves. Proxies
never run the protocol: each client keeps a private coordinate for every
proxy it knows and nudges it whenever it (or a neighbour) reports an RTT to
that proxy. Proxy coordinates never move client coordinates.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Protocol, Sequence

import numpy as np

Position = tuple[float, ...]


@dataclass(frozen=True)
class NetworkCoordinate:
    position: Position
    local_error: float = 1.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in self.position):
            raise ValueError(f"non-finite coordinate {self.position!r}")
        if not (math.isfinite(self.local_error) and self.local_error >= 0.0):
            raise ValueError(f"invalid local error {self.local_error!r}")

    @property
    def dimensions(self) -> int:
        return len(self.position)

    @classmethod
    def initial(
        cls,
        rng: np.random.Generator,
        dimensions: int = 2,
        spread: float = 0.1,
        error: float = 1.0,
    ) -> "NetworkCoordinate":
        """Origin plus a small uniform offset, so coincident starts never happen."""
        offset = rng.uniform(-spread, spread, dimensions)
        return cls(tuple(float(x) for x in offset), error)


def predict_rtt(a: NetworkCoordinate, b: NetworkCoordinate) -> float:
    return math.dist(a.position, b.position)


def _random_unit(dimensions: int, rng: Optional[np.random.Generator]) -> Position:
    if rng is None:
        return (1.0,) + (0.0,) * (dimensions - 1)
    while True:
        v = rng.standard_normal(dimensions)
        norm = float(np.linalg.norm(v))
        if norm > 1e-12:
            return tuple(float(x) / norm for x in v)


def vivaldi_update(
    local: NetworkCoordinate,
    peer: NetworkCoordinate,
    measured_rtt: float,
    step_constant: float = 0.25,
    error_constant: float = 0.25,
    error_cap: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> NetworkCoordinate:
    """One spring-relaxation step of ``local`` against ``peer``.

    The move is along the unit vector from ``peer`` to ``local`` scaled by
    the prediction error, with an adaptive timestep weighted by the two
    local errors. ``rng`` only matters when both positions coincide.
    """
    if not (math.isfinite(measured_rtt) and measured_rtt > 0.0):
        raise ValueError(f"measured RTT must be positive, got {measured_rtt!r}")
    if local.dimensions != peer.dimensions:
        raise ValueError("coordinate dimensions differ")

    predicted = predict_rtt(local, peer)
    total_error = local.local_error + peer.local_error
    weight = local.local_error / total_error if total_error > 0.0 else 0.5

    sample_error = abs(predicted - measured_rtt) / measured_rtt
    blend = error_constant * weight
    error = sample_error * blend + local.local_error * (1.0 - blend)
    error = min(max(error, 0.0), error_cap)

    force = step_constant * weight * (measured_rtt - predicted)
    if force == 0.0:
        return NetworkCoordinate(local.position, error)

    if predicted > 1e-12:
        direction = tuple((a - b) / predicted for a, b in zip(local.position, peer.position))
    else:
        direction = _random_unit(local.dimensions, rng)
    position = tuple(x + force * u for x, u in zip(local.position, direction))
    return NetworkCoordinate(position, error)


@dataclass
class VivaldiParams:
    dimensions: int = 2
    pings: int = 8
    closest: int = 4
    random: int = 4
    step_constant: float = 0.25
    error_constant: float = 0.25
    error_cap: float = 1.0
    aggregate: str = "min"
    eviction_limit: int = 10
    init_spread: float = 0.1
    # proxies never move themselves, so their stored coordinates take bigger steps
    proxy_step_constant: float = 0.75

    @property
    def capacity(self) -> int:
        return self.closest + self.random


@dataclass
class NeighborSet:
    closest: list[str] = field(default_factory=list)
    random: list[str] = field(default_factory=list)

    def members(self) -> list[str]:
        return self.closest + self.random

    def __len__(self) -> int:
        return len(self.closest) + len(self.random)

    def discard(self, node: str) -> None:
        if node in self.closest:
            self.closest.remove(node)
        if node in self.random:
            self.random.remove(node)

    def refresh(
        self,
        self_id: str,
        self_coord: NetworkCoordinate,
        known: Mapping[str, Optional[NetworkCoordinate]],
        closest: int,
        random: int,
        rng: np.random.Generator,
    ) -> None:
        """Re-rank the closest slots and top up the random slots."""
        ranked = sorted(
            (predict_rtt(self_coord, c), peer)
            for peer, c in known.items()
            if c is not None and peer != self_id
        )
        self.closest = [peer for _, peer in ranked[:closest]]
        taken = set(self.closest)
        self.random = [p for p in self.random if p in known and p not in taken][:random]
        taken.update(self.random)
        pool = sorted(p for p in known if p not in taken and p != self_id)
        need = random - len(self.random)
        if need > 0 and pool:
            picks = rng.choice(len(pool), size=min(need, len(pool)), replace=False)
            self.random.extend(pool[i] for i in sorted(picks))


@dataclass
class ProxyEntry:
    coord: NetworkCoordinate
    last_measured_rtt: float
    last_update_round: int


class ProxyCoordinateStore:
    """Per-node coordinates for proxies, bounded to ``capacity`` entries."""

    def __init__(self, capacity: int = 8):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: dict[str, ProxyEntry] = {}

    def __contains__(self, proxy: str) -> bool:
        return proxy in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, proxy: str) -> Optional[ProxyEntry]:
        return self.entries.get(proxy)

    def predicted_rtt(self, proxy: str, origin: NetworkCoordinate) -> Optional[float]:
        entry = self.entries.get(proxy)
        return None if entry is None else predict_rtt(origin, entry.coord)

    def evict_oldest(self) -> str:
        victim = min(self.entries, key=lambda p: (self.entries[p].last_update_round, p))
        del self.entries[victim]
        return victim


def update_proxy_coordinate(
    store: ProxyCoordinateStore,
    proxy: str,
    reporter_coord: NetworkCoordinate,
    reporter_rtt: float,
    round_no: int,
    rng: np.random.Generator,
    params: Optional[VivaldiParams] = None,
) -> ProxyCoordinateStore:
    """Treat (reporter_coord, reporter_rtt) as a measurement endpoint for ``proxy``."""
    params = params or VivaldiParams(dimensions=reporter_coord.dimensions)
    if not (math.isfinite(reporter_rtt) and reporter_rtt > 0.0):
        raise ValueError(f"reporter RTT must be positive, got {reporter_rtt!r}")
    entry = store.entries.get(proxy)
    if entry is None:
        if len(store.entries) >= store.capacity:
            store.evict_oldest()
        offset = rng.uniform(-params.init_spread, params.init_spread, reporter_coord.dimensions)
        start = tuple(x + float(o) for x, o in zip(reporter_coord.position, offset))
        coord = NetworkCoordinate(start, params.error_cap)
    else:
        coord = entry.coord
    coord = vivaldi_update(
        coord,
        reporter_coord,
        reporter_rtt,
        params.proxy_step_constant,
        params.error_constant,
        params.error_cap,
        rng,
    )
    store.entries[proxy] = ProxyEntry(coord, reporter_rtt, round_no)
    return store


@dataclass(frozen=True)
class PingSample:
    target: str
    rtts: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.rtts:
            raise ValueError("empty ping sample")
        if not all(math.isfinite(r) and r > 0.0 for r in self.rtts):
            raise ValueError(f"invalid RTTs in sample for {self.target}")

    def aggregate(self, method: str = "min") -> float:
        if method == "min":
            return min(self.rtts)
        if method == "median":
            return statistics.median(self.rtts)
        raise ValueError(f"unknown aggregate {method!r}")


class CoordinateError(NamedTuple):
    value: float
    node_errors: tuple[float, ...]
    defined: bool


def system_error(true_rtts, coords: Sequence[NetworkCoordinate]) -> CoordinateError:
    """Median over nodes of each node's median absolute path error."""
    matrix = np.asarray(true_rtts, dtype=float)
    n = len(coords)
    if matrix.shape != (n, n):
        raise ValueError(f"matrix shape {matrix.shape} does not match {n} coordinates")
    if n < 2:
        return CoordinateError(0.0, (), False)
    node_errors = []
    for i in range(n):
        errs = [abs(predict_rtt(coords[i], coords[j]) - matrix[i, j]) for j in range(n) if j != i]
        node_errors.append(float(np.median(errs)))
    return CoordinateError(float(np.median(node_errors)), tuple(node_errors), True)


# -- protocol rounds --------------------------------------------------------


class Network(Protocol):
    def ping(self, src: str, dst: str, count: int, rng: np.random.Generator) -> Optional[list[float]]:
        """RTTs of ``count`` pings, or None when ``dst`` is unreachable."""

    def coordinate(self, node: str) -> Optional[NetworkCoordinate]:
        ...


@dataclass(frozen=True)
class CoordinateShare:
    """What a node hands its round neighbour: itself, its last proxy RTT, its neighbours."""

    sender: str
    sender_coord: NetworkCoordinate
    proxy_rtt: Optional[tuple[str, float]]
    neighbor_digest: tuple[tuple[str, NetworkCoordinate], ...]


class RoundOutcome(NamedTuple):
    neighbor: Optional[str]
    neighbor_sample: Optional[PingSample]
    proxy: Optional[str]
    proxy_sample: Optional[PingSample]
    share: Optional[CoordinateShare]
    pings_sent: int


@dataclass
class VivaldiNode:
    node_id: str
    coord: NetworkCoordinate
    params: VivaldiParams = field(default_factory=VivaldiParams)
    proxies: list[str] = field(default_factory=list)
    known: dict[str, Optional[NetworkCoordinate]] = field(default_factory=dict)
    neighbors: NeighborSet = field(default_factory=NeighborSet)
    proxy_store: ProxyCoordinateStore = None  # type: ignore[assignment]
    last_proxy_rtt: Optional[tuple[str, float]] = None
    failures: dict[str, int] = field(default_factory=dict)
    round: int = 0

    def __post_init__(self) -> None:
        if self.proxy_store is None:
            self.proxy_store = ProxyCoordinateStore(self.params.capacity)

    @classmethod
    def create(
        cls,
        node_id: str,
        rng: np.random.Generator,
        params: Optional[VivaldiParams] = None,
        peers: Sequence[str] = (),
        proxies: Sequence[str] = (),
    ) -> "VivaldiNode":
        params = params or VivaldiParams()
        coord = NetworkCoordinate.initial(rng, params.dimensions, params.init_spread, params.error_cap)
        node = cls(node_id, coord, params, list(proxies))
        node.known = {p: None for p in peers if p != node_id}
        node.neighbors.refresh(node_id, coord, node.known, params.closest, params.random, rng)
        return node

    def predicted_proxy_rtt(self, proxy: str) -> Optional[float]:
        return self.proxy_store.predicted_rtt(proxy, self.coord)

    def learn(self, peer: str, coord: Optional[NetworkCoordinate]) -> None:
        if peer == self.node_id:
            return
        if coord is not None or peer not in self.known:
            self.known[peer] = coord

    def _record_failure(self, target: str) -> bool:
        self.failures[target] = self.failures.get(target, 0) + 1
        return self.failures[target] >= self.params.eviction_limit

    def _choose_proxy(self, rng: np.random.Generator) -> Optional[str]:
        if not self.proxies:
            return None
        unmeasured = [p for p in self.proxies if p not in self.proxy_store]
        pool = unmeasured if unmeasured else self.proxies
        return pool[int(rng.integers(len(pool)))]


def round_tick(
    node: VivaldiNode,
    rng: np.random.Generator,
    network: Network,
    proxy_rng: Optional[np.random.Generator] = None,
) -> RoundOutcome:
    """Run one protocol round for ``node``.

    Probes one random neighbour and one proxy with ``params.pings`` pings
    each, updates the node's own coordinate and its proxy coordinate, and
    returns the share to hand to the neighbour. ``rng`` drives everything
    client-side; ``proxy_rng`` drives proxy choice and proxy pings so the
    two streams stay independent.
    """
    p = node.params
    proxy_rng = proxy_rng if proxy_rng is not None else rng
    round_no = node.round
    pings = 0

    neighbor = None
    neighbor_sample = None
    members = node.neighbors.members()
    if members:
        neighbor = members[int(rng.integers(len(members)))]
        rtts = network.ping(node.node_id, neighbor, p.pings, rng)
        pings += p.pings
        peer_coord = network.coordinate(neighbor) if rtts else None
        if rtts and peer_coord is not None:
            node.failures.pop(neighbor, None)
            neighbor_sample = PingSample(neighbor, tuple(rtts))
            node.known[neighbor] = peer_coord
            node.coord = vivaldi_update(
                node.coord,
                peer_coord,
                neighbor_sample.aggregate(p.aggregate),
                p.step_constant,
                p.error_constant,
                p.error_cap,
                rng,
            )
        elif node._record_failure(neighbor):
            node.known.pop(neighbor, None)
            node.neighbors.discard(neighbor)
            node.failures.pop(neighbor, None)

    proxy = node._choose_proxy(proxy_rng)
    proxy_sample = None
    if proxy is not None:
        rtts = network.ping(node.node_id, proxy, p.pings, proxy_rng)
        pings += p.pings
        if rtts:
            node.failures.pop(proxy, None)
            proxy_sample = PingSample(proxy, tuple(rtts))
            rtt = proxy_sample.aggregate(p.aggregate)
            update_proxy_coordinate(node.proxy_store, proxy, node.coord, rtt, round_no, proxy_rng, p)
            node.last_proxy_rtt = (proxy, rtt)
        elif node._record_failure(proxy):
            node.proxy_store.entries.pop(proxy, None)
            node.failures.pop(proxy, None)

    share = None
    if neighbor_sample is not None:
        digest = tuple(
            (peer, node.known[peer])
            for peer in node.neighbors.members()
            if node.known.get(peer) is not None
        )
        share = CoordinateShare(node.node_id, node.coord, node.last_proxy_rtt, digest)

    node.neighbors.refresh(node.node_id, node.coord, node.known, p.closest, p.random, rng)
    node.round += 1
    return RoundOutcome(neighbor, neighbor_sample, proxy, proxy_sample, share, pings)


def apply_share(
    node: VivaldiNode,
    share: CoordinateShare,
    proxy_rng: np.random.Generator,
) -> None:
    """Receiver side of a round: learn peers and fold in the sender's proxy RTT."""
    node.learn(share.sender, share.sender_coord)
    for peer, coord in share.neighbor_digest:
        if peer != node.node_id and peer not in node.known:
            node.known[peer] = coord
    if share.proxy_rtt is not None:
        proxy, rtt = share.proxy_rtt
        if proxy in node.proxies:
            update_proxy_coordinate(
                node.proxy_store, proxy, share.sender_coord, rtt, node.round, proxy_rng, node.params
            )


# -- static-matrix driver ---------------------------------------------------


class MatrixNetwork:
    """A network whose RTTs come from a (possibly time-varying) matrix.

    ``rtt_at(round)`` returns the matrix for the current round; endpoints
    index into it via ``index``. Pings are inflated by ``jitter`` times an
    exponential variate, mimicking queueing noise.
    """

    def __init__(self, endpoints: Sequence[str], rtt_at, nodes: Mapping[str, VivaldiNode], jitter: float = 0.0):
        self.index = {e: i for i, e in enumerate(endpoints)}
        self.rtt_at = rtt_at
        self.nodes = nodes
        self.jitter = jitter
        self.round = 0

    def true_rtt(self, a: str, b: str) -> float:
        return float(self.rtt_at(self.round)[self.index[a], self.index[b]])

    def ping(self, src, dst, count, rng):
        base = self.true_rtt(src, dst)
        if not math.isfinite(base) or base <= 0.0:
            return None
        if self.jitter > 0.0:
            return [base * (1.0 + self.jitter * float(e)) for e in rng.exponential(1.0, count)]
        return [base] * count

    def coordinate(self, node):
        n = self.nodes.get(node)
        return None if n is None else n.coord


def run_matrix_rounds(
    clients: Sequence[str],
    proxies: Sequence[str],
    rtt_at,
    rounds: int,
    seed: int,
    params: Optional[VivaldiParams] = None,
    jitter: float = 0.0,
    observe=None,
) -> dict[str, VivaldiNode]:
    """Drive ``rounds`` protocol rounds over a matrix network.

    ``rtt_at`` may be a fixed matrix or a callable ``round -> matrix`` over
    ``clients + proxies``. ``observe(round, nodes, network)`` runs after
    every round.
    """
    from meshgate.rng import stream

    params = params or VivaldiParams()
    if not callable(rtt_at):
        fixed = np.asarray(rtt_at, dtype=float)
        rtt_at = lambda _r: fixed  # noqa: E731
    client_rngs = {c: stream(seed, "coords", c) for c in clients}
    proxy_rngs = {c: stream(seed, "proxy", c) for c in clients}
    nodes = {
        c: VivaldiNode.create(c, client_rngs[c], params, peers=clients, proxies=proxies)
        for c in clients
    }
    net = MatrixNetwork(list(clients) + list(proxies), rtt_at, nodes, jitter)
    for r in range(rounds):
        net.round = r
        for c in clients:
            out = round_tick(nodes[c], client_rngs[c], net, proxy_rngs[c])
            if out.share is not None:
                apply_share(nodes[out.neighbor], out.share, proxy_rngs[out.neighbor])
        if observe is not None:
            observe(r, nodes, net)
    return nodes
