"""Affinity-aware placement of multi-agent workflows on cloud-edge
substrates: generators, topology-aware ranking, a learned placement policy
with semantic constraint handling, baselines and a discrete-event simulator.
"""

__version__ = "0.1.0"

from .types import (AgentNode, ResourceVector, SubstrateLink, SubstrateNode,
                    SubstrateNetwork, Workflow, load_substrate, load_workflow,
                    save_json)
from .generators import (DemandProfile, WaxmanParams, generate_substrate,
                         generate_workflow)
from .noderank import noderank
from .embedder import (Mapping, PlacementOutcome, check_feasibility,
                       objective, place_workflow)
from .semantics import (ConstraintReport, LlmClientConfig, decouple_topology,
                        extract_constraints, inject_bias,
                        report_from_workflow)
from .policy import PolicyConfig, PolicyModel
from .baselines import GaParams, ga_place, greedy_place, noderank_greedy_place
from .sim import SimConfig, Simulation, make_placer

__all__ = [
    "AgentNode", "ResourceVector", "SubstrateLink", "SubstrateNode",
    "SubstrateNetwork", "Workflow", "load_substrate", "load_workflow",
    "save_json", "DemandProfile", "WaxmanParams", "generate_substrate",
    "generate_workflow", "noderank", "Mapping", "PlacementOutcome",
    "check_feasibility", "objective", "place_workflow", "ConstraintReport",
    "LlmClientConfig", "decouple_topology", "extract_constraints",
    "inject_bias", "report_from_workflow", "PolicyConfig", "PolicyModel",
    "GaParams", "ga_place", "greedy_place", "noderank_greedy_place",
    "SimConfig", "Simulation", "make_placer",
]
