"""Feasibility checks, bandwidth sharing, latency/objective scoring and the
greedy BFS placement that turns a probability matrix into a mapping.

Placement reserves resources in a shadow ledger and commits them to the
substrate residuals atomically on acceptance; callers therefore must
serialize placements over a shared substrate (single-writer contract).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import ResourceVector, SubstrateNetwork, Workflow, RESOURCE_DIMS

# A virtual link requesting bandwidth sigma Mb is assumed to want the payload
# moved within TAU_TARGET seconds, so B_req = sigma / TAU_TARGET Mbps.
TAU_TARGET_S = 1.0

# Objective weights and the utilization threshold above which a node counts
# toward the load-balancing penalty.
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.1
OVERLOAD_THRESHOLD = 0.8

ACCEPTED = "Accepted"
REJECTED = "Rejected"

REASON_NO_FEASIBLE_NODE = "no-feasible-node"
REASON_ROLLBACK_EXHAUSTED = "rollback-budget-exhausted"


@dataclass
class Violation:
    kind: str  # "cpu" | "mem" | "disk" | "affinity"
    agent_ids: tuple
    node_id: int


@dataclass
class Mapping:
    node_map: dict  # agent id -> substrate id
    link_map: dict  # (i, j) -> ordered list of substrate link keys
    alloc: dict = field(default_factory=dict)  # (i, j) -> bottleneck Mbps

    def to_dict(self) -> dict:
        return {
            "node_map": {str(a): u for a, u in self.node_map.items()},
            "link_map": {f"{i}->{j}": [list(k) for k in path]
                         for (i, j), path in self.link_map.items()},
            "alloc": {f"{i}->{j}": bw for (i, j), bw in self.alloc.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mapping":
        def parse_edge(text):
            i, j = text.split("->")
            return (int(i), int(j))

        return cls(
            node_map={int(a): u for a, u in data["node_map"].items()},
            link_map={parse_edge(k): [tuple(x) for x in path]
                      for k, path in data["link_map"].items()},
            alloc={parse_edge(k): bw for k, bw in data.get("alloc", {}).items()},
        )


@dataclass
class PlacementStep:
    """One committed node choice, recorded for policy-gradient training."""

    agent_id: int
    candidates: list  # substrate ids the choice was drawn from
    chosen: int
    prob: float  # probability of the choice, renormalized over candidates


@dataclass
class PlacementOutcome:
    status: str
    reason: str | None = None
    mapping: Mapping | None = None
    metrics: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)
    rollbacks: int = 0

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED


def bandwidth_required(sigma: float) -> float:
    return sigma / TAU_TARGET_S


def check_feasibility(net: SubstrateNetwork, wf: Workflow,
                      node_map: dict) -> list:
    """Return every capacity/affinity violation of a total node mapping.

    Capacity is checked against the current residuals, i.e. against a
    substrate that does not yet account for this workflow.
    """
    violations = []
    by_node = {}
    for agent in wf.agents:
        u = node_map[agent.id]
        by_node.setdefault(u, []).append(agent)
    for u, agents in by_node.items():
        node = net.node(u)
        demand = ResourceVector.zero()
        for a in agents:
            demand = demand + a.demand
            missing = a.affinity - node.labels
            if missing:
                violations.append(Violation("affinity", (a.id,), u))
        for dim in RESOURCE_DIMS:
            if getattr(demand, dim) > getattr(node.residual, dim) + 1e-9:
                violations.append(
                    Violation(dim, tuple(a.id for a in agents), u))
    return violations


def allocate_bandwidth(net: SubstrateNetwork, flows: dict) -> dict:
    """Equal-sharing bandwidth split across all flows.

    ``flows`` maps a flow key to ``(path_link_keys, b_req)``.  Each flow on a
    substrate link gets ``min(b_req, B_max / n_flows_on_link)``; the per-link
    sum therefore never exceeds the link capacity.
    """
    usage = {}
    for key, (path, _) in flows.items():
        for link_key in path:
            usage.setdefault(link_key, []).append(key)
    alloc = {}
    for key, (path, b_req) in flows.items():
        per_link = {}
        for link_key in path:
            link = net.link(*link_key)
            per_link[link_key] = min(b_req,
                                     link.bandwidth_max / len(usage[link_key]))
        alloc[key] = per_link
    return alloc


def comm_latency(net: SubstrateNetwork, wf: Workflow, mapping: Mapping,
                 alloc: dict) -> float:
    """Total workflow communication latency in ms.

    sigma is in Mb and bandwidth in Mbps, so sigma / bw is seconds; the
    transmission term is converted to ms to match propagation delays.
    """
    total = 0.0
    for i, j, sigma in wf.edges:
        path = mapping.link_map[(i, j)]
        if not path:
            continue
        if (i, j) not in alloc:
            raise ValueError(f"allocation missing for edge ({i}, {j})")
        per_link = alloc[(i, j)]
        for link_key in path:
            link = net.link(*link_key)
            total += (sigma / per_link[link_key]) * 1000.0 + link.prop_delay
    return total


def objective(net: SubstrateNetwork, wf: Workflow, mapping: Mapping,
              alpha: float = DEFAULT_ALPHA,
              beta: float = DEFAULT_BETA) -> float:
    """Weighted cost: mean inter-agent hop count plus an overload penalty.

    The mapping is assumed *not yet committed*: its demands are charged on
    top of the current residual state when computing utilization.
    """
    hop_term = 0.0
    if wf.edges:
        hops = [net.shortest_hop(mapping.node_map[i], mapping.node_map[j])
                for i, j, _ in wf.edges]
        hop_term = sum(hops) / len(wf.edges)

    extra = {}
    for agent in wf.agents:
        u = mapping.node_map[agent.id]
        extra[u] = extra.get(u, ResourceVector.zero()) + agent.demand
    lb_term = 0.0
    for node in net.nodes:
        used = node.capacity - node.residual
        used = used + extra.get(node.id, ResourceVector.zero())
        utils = [getattr(used, d) / getattr(node.capacity, d)
                 for d in RESOURCE_DIMS if getattr(node.capacity, d) > 0]
        if utils and max(utils) > OVERLOAD_THRESHOLD:
            lb_term += sum(u * u for u in utils)
    return alpha * hop_term + beta * lb_term


def map_links(net: SubstrateNetwork, wf: Workflow, node_map: dict) -> dict:
    """Shortest-path link mapping for every virtual edge (empty if co-located)."""
    link_map = {}
    for i, j, _ in wf.edges:
        u, v = node_map[i], node_map[j]
        link_map[(i, j)] = [l.key() for l in net.path_links(u, v)] if u != v else []
    return link_map


def build_mapping(net: SubstrateNetwork, wf: Workflow, node_map: dict) -> Mapping:
    mapping = Mapping(node_map=dict(node_map),
                      link_map=map_links(net, wf, node_map))
    flows = {(i, j): (mapping.link_map[(i, j)], bandwidth_required(sigma))
             for i, j, sigma in wf.edges if mapping.link_map[(i, j)]}
    alloc = allocate_bandwidth(net, flows)
    mapping.alloc = {key: min(per_link.values())
                     for key, per_link in alloc.items()}
    return mapping


def commit_mapping(net: SubstrateNetwork, wf: Workflow, mapping: Mapping):
    for agent in wf.agents:
        node = net.node(mapping.node_map[agent.id])
        node.residual = node.residual - agent.demand


def release_mapping(net: SubstrateNetwork, wf: Workflow, mapping: Mapping):
    for agent in wf.agents:
        node = net.node(mapping.node_map[agent.id])
        released = node.residual + agent.demand
        if not released.fits_within(node.capacity):
            raise ValueError(f"release overflows capacity on node {node.id}")
        # clamp float debris so repeated commit/release cycles cannot drift
        node.residual = ResourceVector(
            min(released.cpu, node.capacity.cpu),
            min(released.mem, node.capacity.mem),
            min(released.disk, node.capacity.disk))


def outcome_metrics(net: SubstrateNetwork, wf: Workflow,
                    mapping: Mapping) -> dict:
    flows = {(i, j): (mapping.link_map[(i, j)], bandwidth_required(sigma))
             for i, j, sigma in wf.edges if mapping.link_map[(i, j)]}
    alloc = allocate_bandwidth(net, flows)
    total_hops = sum(len(path) for path in mapping.link_map.values())
    return {
        "total_hops": total_hops,
        "comm_latency_ms": comm_latency(net, wf, mapping, alloc),
        "objective": objective(net, wf, mapping),
    }


class _Ledger:
    """Shadow reservations held until commit."""

    def __init__(self, net: SubstrateNetwork):
        self.net = net
        self.reserved = {}

    def free(self, node_id: int) -> ResourceVector:
        node = self.net.node(node_id)
        return node.residual - self.reserved.get(node_id, ResourceVector.zero())

    def feasible(self, agent, node_id: int) -> bool:
        node = self.net.node(node_id)
        if agent.affinity - node.labels:
            return False
        return agent.demand.fits_within(self.free(node_id))

    def reserve(self, agent, node_id: int):
        base = self.reserved.get(node_id, ResourceVector.zero())
        self.reserved[node_id] = base + agent.demand

    def release(self, agent, node_id: int):
        self.reserved[node_id] = self.reserved[node_id] - agent.demand


def _bfs_order(wf: Workflow, root: int) -> list:
    """(agent, parent) pairs in BFS order over the undirected workflow graph."""
    neigh = wf.undirected_neighbors()
    order = [(root, None)]
    seen = {root}
    queue = [root]
    while queue:
        cur = queue.pop(0)
        for nxt in sorted(neigh[cur]):
            if nxt not in seen:
                seen.add(nxt)
                order.append((nxt, cur))
                queue.append(nxt)
    return order


def _renormalized_probs(row: np.ndarray, candidates: list, col_of: dict):
    weights = np.array([max(row[col_of[c]], 0.0) for c in candidates])
    total = weights.sum()
    if total <= 0:
        return np.full(len(candidates), 1.0 / len(candidates))
    return weights / total


def _ordered_candidates(row, candidates, mode, rng, col_of):
    """Candidates ordered by priority: descending probability in rank mode,
    sampled without replacement in sample mode.  Ties break on lowest id."""
    if not candidates:
        return []
    if mode == "rank":
        return sorted(candidates, key=lambda c: (-row[col_of[c]], c))
    probs = _renormalized_probs(row, candidates, col_of)
    remaining = list(candidates)
    weights = list(probs)
    ordered = []
    while remaining:
        w = np.array(weights)
        w = w / w.sum()
        pick = int(rng.choice(len(remaining), p=w))
        ordered.append(remaining.pop(pick))
        weights.pop(pick)
    return ordered


def place_workflow(net: SubstrateNetwork, wf: Workflow, prob_matrix,
                   mode: str = "rank", rng=None,
                   rollback_budget: int | None = None) -> PlacementOutcome:
    """Greedy BFS placement guided by a probability matrix.

    Hard-constrained agents are pinned first, the heaviest remaining agent
    roots a BFS over the workflow graph, and each subsequent agent takes the
    best feasible node in the smallest non-empty k-hop ring around its
    predecessor's host (k = 0 co-location tried first).  Dead ends trigger
    rollback: the predecessor's choice is discarded and retried, up to a
    budget of 3 * |agents| rollbacks.
    """
    if mode not in ("rank", "sample"):
        raise ValueError(f"unknown placement mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    P = np.asarray(prob_matrix, dtype=float)
    if P.shape != (len(wf.agents), len(net.nodes)):
        raise ValueError(f"probability matrix shape {P.shape} does not match "
                         f"({len(wf.agents)}, {len(net.nodes)})")
    if not wf.agents:
        return PlacementOutcome(status=ACCEPTED,
                                mapping=Mapping({}, {}),
                                metrics={"total_hops": 0,
                                         "comm_latency_ms": 0.0,
                                         "objective": 0.0})

    row_of = {a.id: i for i, a in enumerate(wf.agents)}
    col_of = {n.id: i for i, n in enumerate(net.nodes)}
    ledger = _Ledger(net)
    budget = rollback_budget if rollback_budget is not None else 3 * len(wf.agents)
    node_map = {}
    steps = []

    # Phase 1: pin hard-constrained agents to labeled feasible nodes.
    pinned = [a for a in wf.agents if a.affinity]
    for agent in pinned:
        row = P[row_of[agent.id]]
        candidates = [n.id for n in net.nodes if ledger.feasible(agent, n.id)]
        if not candidates:
            return PlacementOutcome(status=REJECTED,
                                    reason=REASON_NO_FEASIBLE_NODE)
        ordered = _ordered_candidates(row, candidates, mode, rng, col_of)
        choice = ordered[0]
        probs = _renormalized_probs(row, candidates, col_of)
        steps.append(PlacementStep(agent.id, list(candidates), choice,
                                   float(probs[candidates.index(choice)])))
        ledger.reserve(agent, choice)
        node_map[agent.id] = choice

    remaining = [a for a in wf.agents if not a.affinity]
    rollbacks = 0
    if remaining:
        outcome, rollbacks = _place_bfs(net, wf, P, remaining, node_map,
                                        ledger, mode, rng, budget, steps,
                                        row_of, col_of)
        if outcome is not None:
            return outcome

    violations = check_feasibility(net, wf, node_map)
    if violations:  # independent post-hoc pass; should never fire
        return PlacementOutcome(status=REJECTED,
                                reason=f"post-check:{violations[0].kind}")
    mapping = build_mapping(net, wf, node_map)
    metrics = outcome_metrics(net, wf, mapping)
    commit_mapping(net, wf, mapping)
    return PlacementOutcome(status=ACCEPTED, mapping=mapping, metrics=metrics,
                            steps=steps, rollbacks=rollbacks)


def _place_bfs(net, wf, P, remaining, node_map, ledger, mode, rng, budget,
               steps, row_of, col_of):
    """BFS phase with backtracking.

    Returns ``(rejection_outcome_or_None, rollback_count)``.
    """
    remaining_ids = {a.id for a in remaining}
    max_total = max((a.demand.total() for a in remaining), default=1.0) or 1.0
    neigh = wf.undirected_neighbors()
    max_deg = max((len(neigh[a.id]) for a in remaining), default=1) or 1

    def root_score(a):
        return a.demand.total() / max_total + len(neigh[a.id]) / max_deg

    root = min(remaining, key=lambda a: (-root_score(a), a.id)).id
    order = [(v, p) for v, p in _bfs_order(wf, root) if v in remaining_ids]

    max_k = int(np.max(net.hop_matrix[np.isfinite(net.hop_matrix)]))

    def candidate_rings(agent, parent):
        """Ordered (ring, node) candidates: nearest non-empty ring first."""
        row = P[row_of[agent.id]]
        feas = [n.id for n in net.nodes if ledger.feasible(agent, n.id)]
        if parent is None:
            ordered = _ordered_candidates(row, feas, mode, rng, col_of)
            return [(0, c) for c in ordered]
        host = node_map[parent]
        out = []
        for k in range(0, max_k + 1):
            ring = [c for c in feas if net.shortest_hop(host, c) == k]
            for c in _ordered_candidates(row, ring, mode, rng, col_of):
                out.append((k, c))
        return out

    # Backtracking over the fixed BFS order.  frames[i] holds the ordered
    # candidate list and current pointer for order[i].
    frames = []
    rollbacks = 0
    i = 0
    while i < len(order):
        agent_id, parent = order[i]
        agent = wf.agent(agent_id)
        if len(frames) == i:
            # The BFS parent is always mapped before its children (pinned
            # parents are in node_map from phase 1).
            frames.append({"cands": candidate_rings(agent, parent),
                           "ptr": 0})
        frame = frames[i]
        placed = False
        while frame["ptr"] < len(frame["cands"]):
            k, choice = frame["cands"][frame["ptr"]]
            if ledger.feasible(agent, choice):
                ledger.reserve(agent, choice)
                node_map[agent_id] = choice
                placed = True
                break
            frame["ptr"] += 1
        if placed:
            i += 1
            continue
        # Dead end: roll back to the predecessor level.
        frames.pop()
        if i == 0:
            return (PlacementOutcome(status=REJECTED,
                                     reason=REASON_NO_FEASIBLE_NODE,
                                     rollbacks=rollbacks), rollbacks)
        rollbacks += 1
        if rollbacks > budget:
            return (PlacementOutcome(status=REJECTED,
                                     reason=REASON_ROLLBACK_EXHAUSTED,
                                     rollbacks=rollbacks), rollbacks)
        i -= 1
        prev_agent_id, _ = order[i]
        prev_agent = wf.agent(prev_agent_id)
        ledger.release(prev_agent, node_map.pop(prev_agent_id))
        frames[i]["ptr"] += 1  # discard the failing choice

    # Record steps for the committed choices (ring-relative probabilities).
    for i, (agent_id, parent) in enumerate(order):
        frame = frames[i]
        k_chosen, choice = frame["cands"][frame["ptr"]]
        ring = [c for kk, c in frame["cands"][frame["ptr"]:] if kk == k_chosen]
        if choice not in ring:
            ring = [choice] + ring
        row = P[row_of[agent_id]]
        probs = _renormalized_probs(row, ring, col_of)
        steps.append(PlacementStep(agent_id, ring, choice,
                                   float(probs[ring.index(choice)])))
    return (None, rollbacks)
