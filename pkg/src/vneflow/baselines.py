"""Comparison placers: residual greedy, genetic search, and noderank greedy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noderank import noderank
from .embedder import (ACCEPTED, REASON_NO_FEASIBLE_NODE, REJECTED, Mapping,
                       PlacementOutcome, _bfs_order, _Ledger, build_mapping,
                       check_feasibility, commit_mapping, objective,
                       outcome_metrics)
from .types import RESOURCE_DIMS, SubstrateNetwork, Workflow

CONSTRAINT_PENALTY = 1e6


@dataclass(frozen=True)
class GaParams:
    population: int = 100
    generations: int = 150
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    tournament: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not 0 <= rate <= 1:
                raise ValueError("rates must lie in [0, 1]")


def _finalize(net: SubstrateNetwork, wf: Workflow, node_map: dict,
              commit: bool = True) -> PlacementOutcome:
    violations = check_feasibility(net, wf, node_map)
    if violations:
        return PlacementOutcome(status=REJECTED,
                                reason=f"infeasible:{violations[0].kind}")
    mapping = build_mapping(net, wf, node_map)
    metrics = outcome_metrics(net, wf, mapping)
    if commit:
        commit_mapping(net, wf, mapping)
    return PlacementOutcome(status=ACCEPTED, mapping=mapping, metrics=metrics)


def _residual_share(ledger: _Ledger, net: SubstrateNetwork, node_id: int):
    node = net.node(node_id)
    free = ledger.free(node_id)
    return sum(getattr(free, d) / getattr(node.capacity, d)
               for d in RESOURCE_DIMS if getattr(node.capacity, d) > 0)


def greedy_place(net: SubstrateNetwork, wf: Workflow) -> PlacementOutcome:
    """Heaviest agents first, each to the feasible node with the largest
    summed normalized residual (ties on lowest node id)."""
    ledger = _Ledger(net)
    node_map = {}
    order = sorted(wf.agents, key=lambda a: (-a.demand.total(), a.id))
    for agent in order:
        best = None
        for node in net.nodes:
            if not ledger.feasible(agent, node.id):
                continue
            score = _residual_share(ledger, net, node.id)
            if best is None or score > best[0] + 1e-12:
                best = (score, node.id)
        if best is None:
            return PlacementOutcome(status=REJECTED,
                                    reason=REASON_NO_FEASIBLE_NODE)
        node_map[agent.id] = best[1]
        ledger.reserve(agent, best[1])
    return _finalize(net, wf, node_map)


def noderank_greedy_place(net: SubstrateNetwork, wf: Workflow) -> PlacementOutcome:
    """Agents in BFS order each take the highest-noderank feasible node."""
    ranks = noderank(net)
    rank_of = {node.id: ranks[i] for i, node in enumerate(net.nodes)}
    ledger = _Ledger(net)
    node_map = {}
    root = min(wf.agents, key=lambda a: (-a.demand.total(), a.id)).id
    for agent_id, _ in _bfs_order(wf, root):
        agent = wf.agent(agent_id)
        best = None
        for node in net.nodes:
            if not ledger.feasible(agent, node.id):
                continue
            if best is None or rank_of[node.id] > best[0] + 1e-15:
                best = (rank_of[node.id], node.id)
        if best is None:
            return PlacementOutcome(status=REJECTED,
                                    reason=REASON_NO_FEASIBLE_NODE)
        node_map[agent_id] = best[1]
        ledger.reserve(agent, best[1])
    return _finalize(net, wf, node_map)


def _fitness(net: SubstrateNetwork, wf: Workflow, chromosome) -> float:
    node_map = {a.id: int(u) for a, u in zip(wf.agents, chromosome)}
    violations = check_feasibility(net, wf, node_map)
    mapping = Mapping(node_map=node_map, link_map={})
    cost = objective(net, wf, mapping)
    return cost + CONSTRAINT_PENALTY * len(violations)


def ga_place(net: SubstrateNetwork, wf: Workflow,
             params: GaParams = GaParams(),
             return_trace: bool = False):
    """Tournament-selection GA over agent -> node assignment vectors with
    one-point crossover, feasible-node mutation and elitism of one.

    With ``return_trace`` the per-generation best fitness list is returned
    alongside the outcome.
    """
    rng = np.random.default_rng(params.seed)
    node_ids = np.array(net.node_ids())
    m = len(wf.agents)

    # Per-agent individually-feasible node pools for init and mutation.
    pools = []
    for agent in wf.agents:
        pool = [n.id for n in net.nodes
                if not (agent.affinity - n.labels)
                and agent.demand.fits_within(n.residual)]
        pools.append(np.array(pool if pool else node_ids))

    population = np.stack([
        np.array([pools[g][rng.integers(len(pools[g]))] for g in range(m)])
        for _ in range(params.population)
    ])
    fitness = np.array([_fitness(net, wf, ind) for ind in population])
    trace = [float(fitness.min())]

    for _ in range(params.generations):
        elite_idx = int(np.argmin(fitness))
        next_pop = [population[elite_idx].copy()]
        while len(next_pop) < params.population:
            parents = []
            for _ in range(2):
                contenders = rng.integers(params.population,
                                          size=params.tournament)
                winner = contenders[np.argmin(fitness[contenders])]
                parents.append(population[winner])
            child = parents[0].copy()
            if rng.random() < params.crossover_rate and m > 1:
                point = int(rng.integers(1, m))
                child[point:] = parents[1][point:]
            for g in range(m):
                if rng.random() < params.mutation_rate:
                    child[g] = pools[g][rng.integers(len(pools[g]))]
            next_pop.append(child)
        population = np.stack(next_pop)
        fitness = np.array([_fitness(net, wf, ind) for ind in population])
        trace.append(float(fitness.min()))

    best = population[int(np.argmin(fitness))]
    if fitness.min() >= CONSTRAINT_PENALTY:
        outcome = PlacementOutcome(status=REJECTED,
                                   reason="no-feasible-individual")
    else:
        node_map = {a.id: int(u) for a, u in zip(wf.agents, best)}
        outcome = _finalize(net, wf, node_map)
    return (outcome, trace) if return_trace else outcome
