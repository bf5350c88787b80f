"""Network topology: devices, connections, and the detector on each link.

A topology is a connected undirected graph over device ids 0..n-1.  Every
edge carries exactly one detector, so detector ids coincide with edge ids.
Edges are normalized to (a < b) and sorted lexicographically at construction
so that ids, serialization, and everything derived from them are stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EnvConfig


class TopologyError(ValueError):
    """Malformed or unsatisfiable topology request."""


@dataclass(frozen=True)
class Device:
    id: int
    compromised: bool


@dataclass(frozen=True)
class Connection:
    endpoint_a: int
    endpoint_b: int
    detector_id: int


@dataclass(frozen=True)
class Detector:
    id: int
    connection_id: int
    energy_cost: float


class Topology:
    def __init__(self, n_devices: int, edges, costs):
        edges = np.asarray(edges, dtype=np.int64)
        costs = np.asarray(costs, dtype=np.float64)
        if n_devices < 3:
            raise TopologyError("need at least 3 devices")
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise TopologyError("edges must be an (m, 2) array")
        if costs.shape != (edges.shape[0],):
            raise TopologyError("one cost per edge required")
        if np.any(costs <= 0):
            raise TopologyError("detector costs must be positive")
        if np.any(edges < 0) or np.any(edges >= n_devices):
            raise TopologyError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise TopologyError("self-loops are not allowed")

        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        self.edges = np.column_stack((lo[order], hi[order]))
        self.costs = costs[order]
        self.n_devices = int(n_devices)

        keys = self.edges[:, 0] * n_devices + self.edges[:, 1]
        if np.unique(keys).size != keys.size:
            raise TopologyError("duplicate edges are not allowed")

        ends = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        self.degree = np.bincount(ends, minlength=n_devices)
        eids = np.tile(np.arange(self.m), 2)
        others = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order2 = np.argsort(ends, kind="stable")
        self._adj_ptr = np.concatenate([[0], np.cumsum(self.degree)])
        self._adj_nodes = others[order2]
        self._adj_edges = eids[order2]
        self._check_connected()

    @property
    def m(self) -> int:
        return self.edges.shape[0]

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    def neighbors(self, v: int) -> np.ndarray:
        return self._adj_nodes[self._adj_ptr[v]:self._adj_ptr[v + 1]]

    def incident(self, v: int) -> np.ndarray:
        """Ids of detectors sitting on edges touching device v."""
        return self._adj_edges[self._adj_ptr[v]:self._adj_ptr[v + 1]]

    @property
    def connections(self) -> list[Connection]:
        return [Connection(int(a), int(b), i) for i, (a, b) in enumerate(self.edges)]

    @property
    def detectors(self) -> list[Detector]:
        return [Detector(i, i, float(c)) for i, c in enumerate(self.costs)]

    def _check_connected(self):
        seen = np.zeros(self.n_devices, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in self.neighbors(v):
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        if not seen.all():
            raise TopologyError("graph is not connected")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    def dumps(self) -> str:
        lines = [f"devices {self.n_devices}"]
        for (a, b), c in zip(self.edges, self.costs):
            lines.append(f"edge {a} {b} {c:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Topology":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("devices "):
            raise TopologyError("missing 'devices N' header")
        try:
            n = int(lines[0].split()[1])
        except (IndexError, ValueError):
            raise TopologyError("malformed 'devices N' header") from None
        edges, costs = [], []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 4 or parts[0] != "edge":
                raise TopologyError(f"malformed edge line: {ln!r}")
            edges.append((int(parts[1]), int(parts[2])))
            costs.append(float(parts[3]))
        return cls(n, np.array(edges), np.array(costs))

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        return cls.loads(Path(path).read_text())


def generate_topology(config: EnvConfig, seed: int) -> Topology:
    """Random connected graph with roughly the requested mean degree.

    A random spanning tree guarantees connectivity; extra edges are then
    sampled uniformly from the remaining pairs until the edge count reaches
    round(n * mean_degree / 2).
    """
    n = config.n_devices
    if n < 3:
        raise TopologyError("need at least 3 devices")
    m_target = int(round(n * config.mean_degree / 2.0))
    max_edges = n * (n - 1) // 2
    if m_target > max_edges:
        raise TopologyError(
            f"mean degree {config.mean_degree} needs {m_target} edges "
            f"but {n} devices admit at most {max_edges}")
    m = max(m_target, n - 1)

    rng = np.random.default_rng(seed)
    present = set()
    edge_list = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        key = (min(u, v), max(u, v))
        present.add(key)
        edge_list.append(key)

    if m > max_edges // 2:
        # Dense request: choose the remainder without replacement from all
        # absent pairs to avoid rejection stalls near saturation.
        absent = [(a, b) for a in range(n) for b in range(a + 1, n) if (a, b) not in present]
        take = rng.choice(len(absent), size=m - len(edge_list), replace=False)
        edge_list.extend(absent[i] for i in sorted(take))
    else:
        while len(edge_list) < m:
            a, b = rng.integers(0, n, size=2)
            if a == b:
                continue
            key = (min(int(a), int(b)), max(int(a), int(b)))
            if key in present:
                continue
            present.add(key)
            edge_list.append(key)

    edges = np.array(sorted(edge_list), dtype=np.int64)
    costs = rng.uniform(config.detector_cost_min, config.detector_cost_max, size=len(edges))
    return Topology(n, edges, costs)
