"""Core domain types: substrate networks, agent workflows and resource vectors."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

SCHEMA_VERSION = "v1"

# Built-in hardware label vocabulary.  The label type is an open string set;
# these three are the ones the generators and feature encoders know about.
LABEL_CAMERA = "Camera"
LABEL_TEE = "TEE"
LABEL_LIDAR = "LiDAR"
KNOWN_LABELS = (LABEL_CAMERA, LABEL_TEE, LABEL_LIDAR)

TIER_CLOUD = "Cloud"
TIER_MEC = "MEC"
TIER_END = "End"

RESOURCE_DIMS = ("cpu", "mem", "disk")


@dataclass(frozen=True)
class ResourceVector:
    """Multi-dimensional resource amount (cpu units, mem GB, disk GB)."""

    cpu: float = 0.0
    mem: float = 0.0
    disk: float = 0.0

    def __post_init__(self):
        for name in RESOURCE_DIMS:
            value = getattr(self, name)
            if value < -1e-9:
                raise ValueError(
                    f"resource components must be >= 0, got {self}")
            if value < 0:  # absorb float debris from add/subtract chains
                object.__setattr__(self, name, 0.0)

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu + other.cpu, self.mem + other.mem,
                              self.disk + other.disk)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu - other.cpu, self.mem - other.mem,
                              self.disk - other.disk)

    def fits_within(self, other: "ResourceVector") -> bool:
        return (self.cpu <= other.cpu + 1e-9 and self.mem <= other.mem + 1e-9
                and self.disk <= other.disk + 1e-9)

    def total(self) -> float:
        return self.cpu + self.mem + self.disk

    def as_tuple(self) -> tuple:
        return (self.cpu, self.mem, self.disk)

    @staticmethod
    def zero() -> "ResourceVector":
        return ResourceVector(0.0, 0.0, 0.0)


@dataclass
class SubstrateNode:
    """Physical node with a capacity, mutable residual and hardware labels."""

    id: int
    capacity: ResourceVector
    residual: ResourceVector
    labels: frozenset = frozenset()
    tier: str = TIER_END
    pos: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.labels = frozenset(self.labels)
        if not self.residual.fits_within(self.capacity):
            raise ValueError(f"residual exceeds capacity on node {self.id}")


@dataclass(frozen=True)
class SubstrateLink:
    """Physical link with a bandwidth cap (Mbps) and propagation delay (ms)."""

    u: int
    v: int
    bandwidth_max: float
    prop_delay: float

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError("link endpoints must be distinct")
        if self.bandwidth_max <= 0:
            raise ValueError("bandwidth_max must be > 0")
        if self.prop_delay < 0:
            raise ValueError("prop_delay must be >= 0")

    def key(self) -> tuple:
        return (self.u, self.v) if self.u < self.v else (self.v, self.u)


class SubstrateNetwork:
    """Connected undirected substrate graph with precomputed hop metrics.

    ``hop_matrix[u][v]`` is the shortest hop count and ``path_table[(u, v)]``
    one shortest node path for every ordered node pair.
    """

    def __init__(self, nodes: list, links: list):
        self.nodes = list(nodes)
        self.links = list(links)
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate substrate node ids")
        self._index = {n.id: n for n in self.nodes}
        self._link_index = {}
        self.adjacency = {n.id: [] for n in self.nodes}
        for link in self.links:
            if link.u not in self._index or link.v not in self._index:
                raise ValueError(f"link references unknown node: {link}")
            self._link_index[link.key()] = link
            self.adjacency[link.u].append(link.v)
            self.adjacency[link.v].append(link.u)
        self.hop_matrix, self.path_table = self._all_pairs_shortest()
        if len(self.nodes) > 1 and not np.all(np.isfinite(self.hop_matrix)):
            raise ValueError("substrate graph is not connected")

    def _all_pairs_shortest(self):
        n = len(self.nodes)
        id_to_idx = {node.id: i for i, node in enumerate(self.nodes)}
        hop = np.full((n, n), np.inf)
        paths = {}
        for src in self._index:
            si = id_to_idx[src]
            hop[si, si] = 0
            parent = {src: None}
            queue = deque([src])
            while queue:
                cur = queue.popleft()
                for nxt in sorted(self.adjacency[cur]):
                    if nxt not in parent:
                        parent[nxt] = cur
                        hop[si, id_to_idx[nxt]] = hop[si, id_to_idx[cur]] + 1
                        queue.append(nxt)
            for dst, _ in parent.items():
                path = [dst]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                paths[(src, dst)] = path[::-1]
        self._id_to_idx = id_to_idx
        return hop, paths

    def node(self, node_id: int) -> SubstrateNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise ValueError(f"unknown substrate node id {node_id}") from None

    def link(self, u: int, v: int) -> SubstrateLink:
        key = (u, v) if u < v else (v, u)
        try:
            return self._link_index[key]
        except KeyError:
            raise ValueError(f"no substrate link between {u} and {v}") from None

    def node_ids(self) -> list:
        return [n.id for n in self.nodes]

    def shortest_hop(self, u: int, v: int) -> int:
        iu = self._id_to_idx.get(u)
        iv = self._id_to_idx.get(v)
        if iu is None or iv is None:
            raise ValueError(f"unknown substrate node id in ({u}, {v})")
        return int(self.hop_matrix[iu, iv])

    def shortest_path(self, u: int, v: int) -> list:
        self.shortest_hop(u, v)  # id validation
        return list(self.path_table[(u, v)])

    def path_links(self, u: int, v: int) -> list:
        """Substrate links along the precomputed shortest path u -> v."""
        path = self.shortest_path(u, v)
        return [self.link(a, b) for a, b in zip(path, path[1:])]

    def incident_bandwidth(self, node_id: int) -> float:
        self.node(node_id)
        return sum(l.bandwidth_max for l in self.links
                   if node_id in (l.u, l.v))

    def reset_residuals(self):
        for node in self.nodes:
            node.residual = node.capacity

    def copy(self) -> "SubstrateNetwork":
        nodes = [replace(n) for n in self.nodes]
        return SubstrateNetwork(nodes, self.links)

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "substrate",
            "nodes": [
                {
                    "id": n.id,
                    "capacity": n.capacity.as_tuple(),
                    "residual": n.residual.as_tuple(),
                    "labels": sorted(n.labels),
                    "tier": n.tier,
                    "pos": list(n.pos),
                }
                for n in self.nodes
            ],
            "links": [
                {"u": l.u, "v": l.v, "bandwidth_max": l.bandwidth_max,
                 "prop_delay": l.prop_delay}
                for l in self.links
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubstrateNetwork":
        _check_schema(data, "substrate")
        nodes = [
            SubstrateNode(
                id=d["id"],
                capacity=ResourceVector(*d["capacity"]),
                residual=ResourceVector(*d["residual"]),
                labels=frozenset(d.get("labels", [])),
                tier=d.get("tier", TIER_END),
                pos=tuple(d.get("pos", (0.0, 0.0))),
            )
            for d in data["nodes"]
        ]
        links = [SubstrateLink(d["u"], d["v"], d["bandwidth_max"],
                               d["prop_delay"]) for d in data["links"]]
        return cls(nodes, links)


@dataclass
class AgentNode:
    """Virtual node: one agent of a workflow."""

    id: int
    demand: ResourceVector
    affinity: frozenset = frozenset()
    is_anchor: bool = False

    def __post_init__(self):
        self.affinity = frozenset(self.affinity)
        if self.is_anchor and self.demand.total() > 0:
            raise ValueError(f"anchor agent {self.id} must have zero demand")


@dataclass
class Workflow:
    """Directed agent graph forming one placement request."""

    id: int
    agents: list
    edges: list  # (src agent id, dst agent id, sigma in Mb)
    arrival_time: float = 0.0
    lifetime: float = 1.0
    workflow_type: int = 1

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate agent ids")
        self._index = {a.id: a for a in self.agents}
        for i, j, sigma in self.edges:
            if i not in self._index or j not in self._index:
                raise ValueError(f"edge ({i}, {j}) references unknown agent")
            if sigma <= 0:
                raise ValueError("edge data volume must be > 0")
        if self.lifetime <= 0:
            raise ValueError("lifetime must be > 0")
        if len(self.agents) > 1 and not self._connected():
            raise ValueError("workflow graph must be connected")

    def _connected(self) -> bool:
        neigh = {a.id: set() for a in self.agents}
        for i, j, _ in self.edges:
            neigh[i].add(j)
            neigh[j].add(i)
        seen = {self.agents[0].id}
        queue = deque(seen)
        while queue:
            for nxt in neigh[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.agents)

    def agent(self, agent_id: int) -> AgentNode:
        try:
            return self._index[agent_id]
        except KeyError:
            raise ValueError(f"unknown agent id {agent_id}") from None

    def agent_ids(self) -> list:
        return [a.id for a in self.agents]

    def undirected_neighbors(self) -> dict:
        neigh = {a.id: set() for a in self.agents}
        for i, j, _ in self.edges:
            neigh[i].add(j)
            neigh[j].add(i)
        return neigh

    def total_demand(self) -> ResourceVector:
        total = ResourceVector.zero()
        for a in self.agents:
            total = total + a.demand
        return total

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "workflow",
            "id": self.id,
            "workflow_type": self.workflow_type,
            "arrival_time": self.arrival_time,
            "lifetime": self.lifetime,
            "agents": [
                {"id": a.id, "demand": a.demand.as_tuple(),
                 "affinity": sorted(a.affinity), "is_anchor": a.is_anchor}
                for a in self.agents
            ],
            "edges": [[i, j, sigma] for i, j, sigma in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Workflow":
        _check_schema(data, "workflow")
        agents = [
            AgentNode(id=d["id"], demand=ResourceVector(*d["demand"]),
                      affinity=frozenset(d.get("affinity", [])),
                      is_anchor=d.get("is_anchor", False))
            for d in data["agents"]
        ]
        edges = [(i, j, sigma) for i, j, sigma in data["edges"]]
        return cls(id=data["id"], agents=agents, edges=edges,
                   arrival_time=data.get("arrival_time", 0.0),
                   lifetime=data.get("lifetime", 1.0),
                   workflow_type=data.get("workflow_type", 1))


def _check_schema(data: dict, kind: str):
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {data.get('schema')!r}")
    if data.get("kind") != kind:
        raise ValueError(f"expected kind={kind!r}, got {data.get('kind')!r}")


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2)


def load_substrate(path) -> SubstrateNetwork:
    with open(path) as fh:
        return SubstrateNetwork.from_dict(json.load(fh))


def load_workflow(path) -> Workflow:
    with open(path) as fh:
        return Workflow.from_dict(json.load(fh))
