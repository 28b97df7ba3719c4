"""Node importance scores used as supervised pre-training labels.

Pipeline: raw resource score from cpu x incident bandwidth, L1-normalized
start distribution, neighbor-proportional forward propagation, and a cubic
sharpening step.  All vectors are indexed in substrate node-list order.
"""

from __future__ import annotations

import numpy as np

from .types import SubstrateNetwork

DEFAULT_MU = 0.5
DEFAULT_ITERS = 3


def initial_score(net: SubstrateNetwork) -> np.ndarray:
    """H(u) = cpu(u) * sum of bandwidth over links incident to u."""
    return np.array([n.capacity.cpu * net.incident_bandwidth(n.id)
                     for n in net.nodes], dtype=float)


def initial_distribution(h: np.ndarray) -> np.ndarray:
    """L1 normalization of H; uniform when H is identically zero."""
    total = h.sum()
    if total <= 0:
        return np.full(len(h), 1.0 / len(h))
    return h / total


def forward_matrix(net: SubstrateNetwork, h: np.ndarray) -> np.ndarray:
    """P_F[u, v] = H(v) / sum of H over u's neighbors, 0 for non-neighbors.

    Rows whose neighbors all have zero H fall back to uniform over neighbors.
    """
    idx = {node.id: i for i, node in enumerate(net.nodes)}
    n = len(net.nodes)
    pf = np.zeros((n, n))
    for node in net.nodes:
        u = idx[node.id]
        neigh = [idx[v] for v in net.adjacency[node.id]]
        if not neigh:
            continue
        weights = h[neigh]
        total = weights.sum()
        if total <= 0:
            pf[u, neigh] = 1.0 / len(neigh)
        else:
            pf[u, neigh] = weights / total
    return pf


def iterate(r0: np.ndarray, pf: np.ndarray, mu: float = DEFAULT_MU,
            iters: int = DEFAULT_ITERS) -> np.ndarray:
    """Repeat r <- normalize_L1(r + mu * (P_F @ r)) for ``iters`` rounds."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    r = np.array(r0, dtype=float)
    for _ in range(iters):
        r = r + mu * (pf @ r)
        r = r / np.abs(r).sum()
    return r


def sharpen(r: np.ndarray) -> np.ndarray:
    """Cubic transform NR(u) = r(u)^3 / sum r(v)^3."""
    if np.any(r < 0):
        raise ValueError("ranking vector must be nonnegative")
    cubed = r ** 3
    total = cubed.sum()
    if total <= 0:
        raise ValueError("cannot sharpen an all-zero ranking vector")
    return cubed / total


def noderank(net: SubstrateNetwork, mu: float = DEFAULT_MU,
             iters: int = DEFAULT_ITERS) -> np.ndarray:
    """Full pipeline; output is nonnegative and sums to 1."""
    h = initial_score(net)
    r0 = initial_distribution(h)
    pf = forward_matrix(net, h)
    r = iterate(r0, pf, mu=mu, iters=iters)
    return sharpen(r)
