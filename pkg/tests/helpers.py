"""Small scenario builders shared by the simulator tests."""

from __future__ import annotations

import numpy as np

from meshgate.simnet.scenario import scenario_from_dict


def star(
    client_rtts: list[float],
    faults: list[dict] | None = None,
    duration_s: float = 600,
    protocol: dict | None = None,
    workload: dict | None = None,
    topology: dict | None = None,
    strategies: list[str] | None = None,
):
    """Clients around a single proxy ``p``, each at its own RTT, 20 ms apart from each other."""
    n = len(client_rtts)
    rtt = np.full((n + 1, n + 1), 20.0)
    np.fill_diagonal(rtt, 0.0)
    for i, r in enumerate(client_rtts):
        rtt[i, n] = rtt[n, i] = r
    topo = {
        "clients": [f"c{i + 1}" for i in range(n)],
        "proxies": ["p"],
        "rtt_ms": rtt.tolist(),
        "hops": [[1]] * n,
    }
    topo.update(topology or {})
    return scenario_from_dict(
        {
            "name": "star",
            "duration_s": duration_s,
            "strategies": strategies or ["min_load"],
            "protocol": protocol or {},
            "workload": workload or {},
            "topology": topo,
            "faults": faults or [],
        }
    )


def planar_matrix(points: np.ndarray, offset: float = 2.0) -> np.ndarray:
    m = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2) + offset
    np.fill_diagonal(m, 0.0)
    return m
