"""Feature matrices fed to the similarity policy network."""

from __future__ import annotations

import numpy as np

from .types import KNOWN_LABELS, RESOURCE_DIMS, SubstrateNetwork, Workflow

# Substrate: 3 normalized residuals, degree share, incident-bandwidth share,
# one indicator per known label, one bias channel.
SUBSTRATE_FEATURE_DIM = 3 + 1 + 1 + len(KNOWN_LABELS) + 1
# Virtual: 3 normalized demands, degree share, per-label requirement
# indicators, anchor flag.
VIRTUAL_FEATURE_DIM = 3 + 1 + len(KNOWN_LABELS) + 1


def substrate_features(net: SubstrateNetwork,
                       bias: np.ndarray | None = None) -> np.ndarray:
    """Per-node feature rows in node-list order."""
    n = len(net.nodes)
    dim_max = {d: max(getattr(node.capacity, d) for node in net.nodes) or 1.0
               for d in RESOURCE_DIMS}
    max_deg = max(len(net.adjacency[node.id]) for node in net.nodes) or 1
    incident = [net.incident_bandwidth(node.id) for node in net.nodes]
    max_bw = max(incident) or 1.0
    if bias is None:
        bias = np.zeros(n)
    rows = []
    for i, node in enumerate(net.nodes):
        row = [getattr(node.residual, d) / dim_max[d] for d in RESOURCE_DIMS]
        row.append(len(net.adjacency[node.id]) / max_deg)
        row.append(incident[i] / max_bw)
        row.extend(1.0 if label in node.labels else 0.0
                   for label in KNOWN_LABELS)
        row.append(float(bias[i]))
        rows.append(row)
    return np.array(rows, dtype=float)


def virtual_features(wf: Workflow, net: SubstrateNetwork) -> np.ndarray:
    """Per-agent feature rows in agent-list order (demands normalized by the
    substrate's per-dimension capacity maxima)."""
    dim_max = {d: max(getattr(node.capacity, d) for node in net.nodes) or 1.0
               for d in RESOURCE_DIMS}
    neigh = wf.undirected_neighbors()
    max_deg = max((len(neigh[a.id]) for a in wf.agents), default=1) or 1
    rows = []
    for agent in wf.agents:
        row = [getattr(agent.demand, d) / dim_max[d] for d in RESOURCE_DIMS]
        row.append(len(neigh[agent.id]) / max_deg)
        row.extend(1.0 if label in agent.affinity else 0.0
                   for label in KNOWN_LABELS)
        row.append(1.0 if agent.is_anchor else 0.0)
        rows.append(row)
    return np.array(rows, dtype=float)


def substrate_adjacency(net: SubstrateNetwork) -> np.ndarray:
    n = len(net.nodes)
    idx = {node.id: i for i, node in enumerate(net.nodes)}
    A = np.zeros((n, n))
    for link in net.links:
        A[idx[link.u], idx[link.v]] = 1.0
        A[idx[link.v], idx[link.u]] = 1.0
    return A


def workflow_adjacency(wf: Workflow) -> np.ndarray:
    """Undirected adjacency of the workflow graph."""
    m = len(wf.agents)
    idx = {a.id: i for i, a in enumerate(wf.agents)}
    A = np.zeros((m, m))
    for i, j, _ in wf.edges:
        A[idx[i], idx[j]] = 1.0
        A[idx[j], idx[i]] = 1.0
    return A
