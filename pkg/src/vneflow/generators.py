"""Reproducible generators for substrate networks and agent workflows.

The substrate follows a Waxman random topology over a unit square; workflows
are chain-with-one-branch templates (planner -> workers -> aggregator) in four
canonical sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import (
    KNOWN_LABELS,
    LABEL_CAMERA,
    LABEL_TEE,
    TIER_CLOUD,
    TIER_END,
    TIER_MEC,
    AgentNode,
    ResourceVector,
    SubstrateLink,
    SubstrateNode,
    SubstrateNetwork,
    Workflow,
)


@dataclass(frozen=True)
class WaxmanParams:
    alpha: float = 0.5
    beta: float = 0.2


# Tier capacities in (cpu units, mem GB, disk GB); fractions sum to 1.
DEFAULT_TIER_PROFILE = {
    TIER_CLOUD: (0.1, ResourceVector(100, 256, 2000)),
    TIER_MEC: (0.3, ResourceVector(32, 64, 500)),
    TIER_END: (0.6, ResourceVector(8, 16, 100)),
}

CORE_BANDWIDTH_MBPS = 1000.0
EDGE_BANDWIDTH_MBPS = 100.0
PROP_DELAY_RANGE_MS = (1.0, 10.0)

# Workflow templates: agent counts per type and whether the type carries a
# hard hardware requirement (on exactly one worker agent).
WORKFLOW_SIZES = {1: 6, 2: 7, 3: 5, 4: 6}
WORKFLOW_AFFINITY = {1: None, 2: LABEL_TEE, 3: None, 4: LABEL_CAMERA}


@dataclass(frozen=True)
class DemandProfile:
    """Per-agent demand and per-edge data volume ranges for one workflow type."""

    demand_low: float = 1.0
    demand_high: float = 4.0
    sigma_low: float = 1.0
    sigma_high: float = 20.0

    @classmethod
    def default_for(cls, wtype: int) -> "DemandProfile":
        # Image processing types (3, 4) are heavier than text search (1, 2).
        if wtype in (3, 4):
            return cls(demand_low=2.0, demand_high=8.0)
        return cls()


def generate_substrate(n: int, seed: int,
                       params: WaxmanParams = WaxmanParams(),
                       tier_profile: dict | None = None,
                       affinity_ratio: float = 0.1) -> SubstrateNetwork:
    """Generate a connected Waxman substrate with tiered heterogeneous nodes.

    Edge probability is ``alpha * exp(-d(u, v) / (beta * L))`` with L the
    maximum pairwise distance.  Non-giant components are bridged to the giant
    component through the geometrically nearest node pair so the result is
    always connected.  ``ceil(affinity_ratio * n)`` nodes carry at least one
    random hardware label.
    """
    if n < 2:
        raise ValueError("substrate must have at least 2 nodes")
    if not 0 <= affinity_ratio <= 1:
        raise ValueError("affinity_ratio must lie in [0, 1]")
    tier_profile = tier_profile or DEFAULT_TIER_PROFILE
    rng = np.random.default_rng(seed)

    pos = rng.uniform(0.0, 1.0, size=(n, 2))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
    max_dist = dist.max()
    if max_dist == 0:
        max_dist = 1.0

    prob = params.alpha * np.exp(-dist / (params.beta * max_dist))
    edges = set()
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < prob[u, v]:
                edges.add((u, v))
    edges |= _bridge_components(n, edges, dist)

    tiers = _assign_tiers(n, tier_profile, rng)
    labeled = rng.choice(n, size=math.ceil(affinity_ratio * n), replace=False)
    labels = {int(u): frozenset({KNOWN_LABELS[rng.integers(len(KNOWN_LABELS))]})
              for u in labeled}

    nodes = []
    for u in range(n):
        cap = tier_profile[tiers[u]][1]
        nodes.append(SubstrateNode(id=u, capacity=cap, residual=cap,
                                   labels=labels.get(u, frozenset()),
                                   tier=tiers[u], pos=tuple(pos[u])))
    links = []
    for u, v in sorted(edges):
        core = tiers[u] in (TIER_CLOUD, TIER_MEC) and tiers[v] in (TIER_CLOUD, TIER_MEC)
        bw = CORE_BANDWIDTH_MBPS if core else EDGE_BANDWIDTH_MBPS
        delay = rng.uniform(*PROP_DELAY_RANGE_MS)
        links.append(SubstrateLink(u, v, bw, delay))
    return SubstrateNetwork(nodes, links)


def _bridge_components(n: int, edges: set, dist: np.ndarray) -> set:
    """Extra edges joining every non-giant component to the giant one."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    comps = {}
    for u in range(n):
        comps.setdefault(find(u), []).append(u)
    added = set()
    while len(comps) > 1:
        giant_root = max(comps, key=lambda r: (len(comps[r]), -r))
        giant = comps[giant_root]
        best = None
        for root, members in comps.items():
            if root == giant_root:
                continue
            for u in members:
                for v in giant:
                    d = dist[u, v]
                    if best is None or d < best[0]:
                        best = (d, u, v, root)
        _, u, v, root = best
        added.add((u, v) if u < v else (v, u))
        giant.extend(comps.pop(root))
    return added


def _assign_tiers(n: int, tier_profile: dict, rng) -> list:
    order = rng.permutation(n)
    tiers = [TIER_END] * n
    offset = 0
    items = list(tier_profile.items())
    for i, (tier, (fraction, _)) in enumerate(items):
        count = int(round(fraction * n))
        if i == len(items) - 1:
            count = n - offset
        for u in order[offset:offset + count]:
            tiers[u] = tier
        offset += count
    return tiers


def generate_workflow(wtype: int, seed: int,
                      demand_profile: DemandProfile | None = None,
                      workflow_id: int = 0) -> Workflow:
    """Build one workflow of the requested template type.

    The topology is a chain backbone with a single fan-out branch: the planner
    (agent 0) feeds two workers, one of which heads the backbone; both ends
    re-converge at the aggregator (last agent).  Types 2 and 4 put a hardware
    requirement on exactly one worker agent.
    """
    if wtype not in WORKFLOW_SIZES:
        raise ValueError(f"unknown workflow type {wtype}")
    profile = demand_profile or DemandProfile.default_for(wtype)
    rng = np.random.default_rng(seed)
    m = WORKFLOW_SIZES[wtype]

    agents = []
    for i in range(m):
        demand = ResourceVector(*rng.uniform(profile.demand_low,
                                             profile.demand_high, size=3))
        agents.append(AgentNode(id=i, demand=demand))

    edge_pairs = _template_edges(m)
    edges = [(i, j, float(rng.uniform(profile.sigma_low, profile.sigma_high)))
             for i, j in edge_pairs]

    label = WORKFLOW_AFFINITY[wtype]
    if label is not None:
        workers = [a.id for a in agents[1:-1]]
        constrained = int(rng.choice(workers))
        agents[constrained].affinity = frozenset({label})

    return Workflow(id=workflow_id, agents=agents, edges=edges,
                    workflow_type=wtype)


def _template_edges(m: int) -> list:
    """Chain 0 -> 1 -> 3 -> ... -> m-2 -> m-1 plus branch 0 -> 2 -> m-1."""
    if m < 4:
        return [(i, i + 1) for i in range(m - 1)]
    edges = [(0, 1), (0, 2)]
    backbone = [1] + list(range(3, m - 1))
    for a, b in zip(backbone, backbone[1:]):
        edges.append((a, b))
    edges.append((backbone[-1], m - 1))
    edges.append((2, m - 1))
    return edges


def shortest_hop(net: SubstrateNetwork, u: int, v: int) -> int:
    """Shortest hop count between two substrate nodes (0 iff u == v)."""
    return net.shortest_hop(u, v)
