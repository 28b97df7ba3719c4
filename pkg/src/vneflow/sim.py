"""Discrete-event simulation: Poisson workflow arrivals, exponential
lifetimes, residual/congestion bookkeeping and metric logging.

Two independent RNG streams are derived from the config seed: one drives
arrivals, workflow contents and lifetimes (so different placers can be
compared under common random numbers), the other drives placer decisions.
"""

from __future__ import annotations

import csv
import heapq
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .embedder import PlacementOutcome, release_mapping
from .generators import DemandProfile, generate_workflow
from .types import ResourceVector, SubstrateNetwork, Workflow

DEFAULT_FAIL_PENALTY = -10.0

EVENT_ARRIVAL = "arrival"
EVENT_DEPARTURE = "departure"

METRICS_COLUMNS = ("t", "event", "r_t", "raw_hops", "accept_ratio",
                   "solve_ms", "reward")

SUMMARY_SCHEMA = "v1"


@dataclass
class SimConfig:
    arrival_rate: float
    mean_lifetime: float
    horizon: int  # number of workflow arrivals
    seed: int = 0
    type_mix: tuple = (0.25, 0.25, 0.25, 0.25)
    fail_penalty: float = DEFAULT_FAIL_PENALTY
    self_check_every: int = 100

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be > 0")
        if self.mean_lifetime <= 0:
            raise ValueError("mean_lifetime must be > 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in METRICS_COLUMNS})
        with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
            for event in self.events:
                fh.write(json.dumps(event) + "\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary, fh, indent=2)


class SimState:
    """Event queue plus incremental residual/congestion bookkeeping."""

    def __init__(self, net: SubstrateNetwork):
        self.net = net
        self.clock = 0.0
        self.queue = []  # (time, seq, kind, payload)
        self.seq = 0
        self.surviving = {}  # wf id -> (workflow, mapping)
        self.congestion = {}  # link key -> number of workflows using it
        self.arrived = 0
        self.accepted = 0
        self.rejected = 0
        self.departed = 0

    def schedule(self, at: float, kind: str, payload):
        heapq.heappush(self.queue, (at, self.seq, kind, payload))
        self.seq += 1

    def commit(self, wf: Workflow, mapping):
        self.surviving[wf.id] = (wf, mapping)
        for link_key in self._links_of(mapping):
            self.congestion[link_key] = self.congestion.get(link_key, 0) + 1

    def release(self, wf_id: int):
        wf, mapping = self.surviving.pop(wf_id)
        release_mapping(self.net, wf, mapping)
        for link_key in self._links_of(mapping):
            self.congestion[link_key] -= 1
            if self.congestion[link_key] == 0:
                del self.congestion[link_key]

    @staticmethod
    def _links_of(mapping) -> set:
        used = set()
        for path in mapping.link_map.values():
            used.update(path)
        return used

    def weighted_hops(self) -> float:
        """Mean congestion-weighted hop count over surviving workflows."""
        if not self.surviving:
            return 0.0
        total = 0.0
        for _, mapping in self.surviving.values():
            for path in mapping.link_map.values():
                total += sum(self.congestion[k] for k in path)
        return total / len(self.surviving)

    def raw_hops(self) -> float:
        if not self.surviving:
            return 0.0
        total = sum(len(path)
                    for _, mapping in self.surviving.values()
                    for path in mapping.link_map.values())
        return total / len(self.surviving)

    def verify(self):
        """From-scratch recount of residuals and congestion; raises on drift."""
        used = {n.id: ResourceVector.zero() for n in self.net.nodes}
        congestion = {}
        for wf, mapping in self.surviving.values():
            for agent in wf.agents:
                u = mapping.node_map[agent.id]
                used[u] = used[u] + agent.demand
            for link_key in self._links_of(mapping):
                congestion[link_key] = congestion.get(link_key, 0) + 1
        for node in self.net.nodes:
            expected = node.capacity - used[node.id]
            for a, b in zip(expected.as_tuple(), node.residual.as_tuple()):
                if abs(a - b) > 1e-6:
                    raise AssertionError(
                        f"residual drift on node {node.id}: {a} vs {b}")
        if congestion != self.congestion:
            raise AssertionError("congestion counter drift")


def reward_for(state: SimState, kind: str, failed: bool,
               fail_penalty: float) -> float:
    if kind == EVENT_ARRIVAL and failed:
        return fail_penalty
    return -state.weighted_hops()


class Placer:
    """Adapter turning the library placers into a uniform interface.

    ``place(net, wf, rng)`` returns ``(outcome, placed_workflow)``; the
    placed workflow may differ from the arrival (topology decoupling).
    """

    name = "placer"

    def place(self, net, wf, rng):
        raise NotImplementedError


class GreedyPlacer(Placer):
    name = "greedy"

    def place(self, net, wf, rng):
        return baselines.greedy_place(net, wf), wf


class NodeRankPlacer(Placer):
    name = "noderank"

    def place(self, net, wf, rng):
        return baselines.noderank_greedy_place(net, wf), wf


class GaPlacer(Placer):
    name = "ga"

    def __init__(self, params: baselines.GaParams | None = None):
        self.params = params or baselines.GaParams(population=30,
                                                   generations=30)

    def place(self, net, wf, rng):
        from dataclasses import replace
        params = replace(self.params, seed=int(rng.integers(2 ** 31)))
        return baselines.ga_place(net, wf, params), wf


class PolicyPlacer(Placer):
    """Pipeline placer: constraint report, decoupling, bias injection,
    policy forward pass, greedy-BFS placement."""

    name = "agentvne"

    def __init__(self, model, use_bias: bool = True, mode: str = "rank",
                 gamma: float | None = None, bias_max: float | None = None):
        from . import semantics
        self.model = model
        self.use_bias = use_bias
        self.mode = mode
        self.gamma = gamma if gamma is not None else semantics.DEFAULT_GAMMA
        self.bias_max = (bias_max if bias_max is not None
                         else semantics.DEFAULT_BIAS_MAX)

    def prepare(self, net, wf):
        """Decoupled workflow plus the model input arrays for it."""
        from . import features, semantics
        report = semantics.report_from_workflow(wf, net)
        placed_wf = semantics.decouple_topology(wf, report)
        bias = None
        if self.use_bias and report.required:
            bias = semantics.inject_bias(net, report, self.gamma,
                                         self.bias_max)
        inputs = (features.substrate_features(net, bias),
                  features.substrate_adjacency(net),
                  features.virtual_features(placed_wf, net),
                  features.workflow_adjacency(placed_wf))
        return placed_wf, inputs

    def probability(self, net, wf):
        placed_wf, inputs = self.prepare(net, wf)
        return self.model.probability_matrix(*inputs), placed_wf

    def place(self, net, wf, rng):
        from .embedder import place_workflow
        placed_wf, inputs = self.prepare(net, wf)
        P = self.model.probability_matrix(*inputs)
        self.last_context = {"inputs": inputs, "P": P,
                             "placed_wf": placed_wf}
        outcome = place_workflow(net, placed_wf, P, mode=self.mode, rng=rng)
        return outcome, placed_wf


def make_placer(name: str, model=None, **kwargs) -> Placer:
    if name == "greedy":
        return GreedyPlacer()
    if name == "noderank":
        return NodeRankPlacer()
    if name == "ga":
        return GaPlacer(kwargs.get("ga_params"))
    if name == "agentvne":
        if model is None:
            raise ValueError("agentvne placer requires a model")
        return PolicyPlacer(model, use_bias=kwargs.get("use_bias", True),
                            mode=kwargs.get("mode", "rank"))
    raise ValueError(f"unknown placer {name!r}")


class Simulation:
    def __init__(self, net: SubstrateNetwork, config: SimConfig,
                 placer: Placer,
                 demand_profiles: dict | None = None,
                 on_episode=None):
        self.net = net
        self.config = config
        self.placer = placer
        self.demand_profiles = demand_profiles or {}
        self.on_episode = on_episode  # hook for RL rollouts
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.arrival_rng = np.random.default_rng(seeds[0])
        self.decision_rng = np.random.default_rng(seeds[1])
        self.state = SimState(net)
        self.log = MetricsLog()
        self._scheduled_arrivals = 0
        self._wf_counter = 0
        self._events_processed = 0

    def _next_workflow(self, arrival_time: float) -> Workflow:
        types = list(range(1, 5))
        wtype = int(self.arrival_rng.choice(types, p=self.config.type_mix))
        wf_seed = int(self.arrival_rng.integers(2 ** 31))
        profile = self.demand_profiles.get(wtype)
        wf = generate_workflow(wtype, wf_seed, demand_profile=profile,
                               workflow_id=self._wf_counter)
        self._wf_counter += 1
        wf.arrival_time = arrival_time
        wf.lifetime = float(self.arrival_rng.exponential(
            self.config.mean_lifetime))
        return wf

    def _schedule_next_arrival(self, after: float):
        if self._scheduled_arrivals >= self.config.horizon:
            return
        gap = float(self.arrival_rng.exponential(1.0 / self.config.arrival_rate))
        at = after + gap
        self.state.schedule(at, EVENT_ARRIVAL, self._next_workflow(at))
        self._scheduled_arrivals += 1

    def step(self) -> bool:
        """Process one event; returns False when the queue is empty."""
        if not self.state.queue:
            return False
        at, _, kind, payload = heapq.heappop(self.state.queue)
        self.state.clock = at
        failed = False
        solve_ms = 0.0
        detail = {}
        if kind == EVENT_ARRIVAL:
            wf = payload
            self.state.arrived += 1
            start = time.perf_counter()
            outcome, placed_wf = self.placer.place(self.net, wf,
                                                   self.decision_rng)
            solve_ms = (time.perf_counter() - start) * 1000.0
            if outcome.accepted:
                self.state.accepted += 1
                self.state.commit(placed_wf, outcome.mapping)
                self.state.schedule(at + wf.lifetime, EVENT_DEPARTURE, wf.id)
                detail = {"wf": wf.id, "type": wf.workflow_type,
                          "metrics": outcome.metrics}
            else:
                self.state.rejected += 1
                failed = True
                detail = {"wf": wf.id, "type": wf.workflow_type,
                          "reason": outcome.reason}
            self._schedule_next_arrival(at)
            if self.on_episode is not None:
                self.on_episode(self, placed_wf, outcome, failed)
        else:
            self.state.departed += 1
            self.state.release(payload)
            detail = {"wf": payload}

        reward = reward_for(self.state, kind, failed, self.config.fail_penalty)
        accept_ratio = (self.state.accepted / self.state.arrived
                        if self.state.arrived else None)
        row = {
            "t": round(at, 9),
            "event": kind,
            "r_t": self.state.weighted_hops(),
            "raw_hops": self.state.raw_hops(),
            "accept_ratio": accept_ratio if accept_ratio is not None else "",
            "solve_ms": round(solve_ms, 4),
            "reward": reward,
        }
        self.log.rows.append(row)
        self.log.events.append({"t": at, "event": kind, **detail})
        self._events_processed += 1
        if (self.config.self_check_every
                and self._events_processed % self.config.self_check_every == 0):
            self.state.verify()
        return True

    def run(self) -> MetricsLog:
        if self.config.horizon > 0:
            self._schedule_next_arrival(0.0)
        while self.state.arrived < self.config.horizon and self.step():
            pass
        self.log.summary = self._summary()
        return self.log

    def _summary(self) -> dict:
        rows = self.log.rows
        half = rows[len(rows) // 2:]  # warm-up: first half excluded
        def mean(key):
            values = [r[key] for r in half if r[key] != ""]
            return float(np.mean(values)) if values else None
        return {
            "schema": SUMMARY_SCHEMA,
            "placer": self.placer.name,
            "seed": self.config.seed,
            "arrival_rate": self.config.arrival_rate,
            "mean_lifetime": self.config.mean_lifetime,
            "horizon": self.config.horizon,
            "substrate_size": len(self.net.nodes),
            "events": len(rows),
            "arrived": self.state.arrived,
            "accepted": self.state.accepted,
            "rejected": self.state.rejected,
            "departed": self.state.departed,
            "accept_ratio": (self.state.accepted / self.state.arrived
                             if self.state.arrived else None),
            "mean_r_t": mean("r_t"),
            "mean_raw_hops": mean("raw_hops"),
            "mean_solve_ms": mean("solve_ms"),
            "mean_reward": mean("reward"),
        }


def run(net: SubstrateNetwork, config: SimConfig, placer: Placer,
        out_dir: str | None = None, **kwargs) -> MetricsLog:
    sim = Simulation(net, config, placer, **kwargs)
    log = sim.run()
    if out_dir is not None:
        log.write(out_dir)
    return log
