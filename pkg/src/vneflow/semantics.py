"""Semantic constraint extraction, topology decoupling and bias injection.

Constraint extraction asks an OpenAI-compatible chat endpoint for a JSON map
of agent id to required hardware labels; any transport, parse or validation
failure falls back to a deterministic keyword rule table.  Constrained agents
are split into a zero-demand anchor (carrying the labels) plus the original
resource node, and a decaying bias field around label-carrying substrate
nodes is written into the policy feature bias channel.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .types import (KNOWN_LABELS, LABEL_CAMERA, LABEL_LIDAR, LABEL_TEE,
                    AgentNode, ResourceVector, SubstrateNetwork, Workflow)

# Nominal data volume (Mb) on the synthetic anchor -> resource edge.
ANCHOR_EDGE_SIGMA = 1.0

DEFAULT_GAMMA = 0.5
DEFAULT_BIAS_MAX = 1.0

# Keyword -> label fallback rules; extensible via a JSON config file.
DEFAULT_RULES = {
    "video": LABEL_CAMERA,
    "camera": LABEL_CAMERA,
    "surveillance": LABEL_CAMERA,
    "vision": LABEL_CAMERA,
    "privacy": LABEL_TEE,
    "confidential": LABEL_TEE,
    "sensitive": LABEL_TEE,
    "secure": LABEL_TEE,
    "lidar": LABEL_LIDAR,
    "point cloud": LABEL_LIDAR,
}

ENV_LLM_URL = "VNEFLOW_LLM_URL"
ENV_LLM_MODEL = "VNEFLOW_LLM_MODEL"
ENV_LLM_KEY = "VNEFLOW_LLM_KEY"

PROMPT = (
    "You map agent descriptions to required hardware labels. Respond with a "
    "single JSON object mapping agent id (string) to a list of labels drawn "
    "from {labels}. Use an empty list when no hard hardware requirement "
    "exists. Agents: {agents}"
)


@dataclass
class LlmClientConfig:
    url: str | None = None
    model: str | None = None
    api_key: str | None = None
    timeout_s: float = 10.0
    retries: int = 1
    audit_path: str | None = None

    @classmethod
    def from_env(cls) -> "LlmClientConfig":
        return cls(url=os.environ.get(ENV_LLM_URL),
                   model=os.environ.get(ENV_LLM_MODEL),
                   api_key=os.environ.get(ENV_LLM_KEY))

    @property
    def enabled(self) -> bool:
        return bool(self.url)


@dataclass
class ConstraintReport:
    required: dict = field(default_factory=dict)  # agent id -> set of labels
    candidates: dict = field(default_factory=dict)  # agent id -> [node ids]
    source: str = "rules"
    infeasible: list = field(default_factory=list)  # labels with no carrier


def load_rules(path: str | None = None) -> dict:
    if path is None:
        return dict(DEFAULT_RULES)
    with open(path) as fh:
        rules = json.load(fh)
    for keyword, label in rules.items():
        if not isinstance(keyword, str) or not isinstance(label, str):
            raise ValueError("rule table must map keyword strings to labels")
    return rules


def _rules_extract(descriptions: dict, rules: dict) -> dict:
    required = {}
    for agent_id, text in descriptions.items():
        lowered = text.lower()
        labels = {label for keyword, label in rules.items()
                  if keyword in lowered}
        if labels:
            required[agent_id] = labels
    return required


def _normalize_description(description) -> dict:
    """Accepts a bare string (applied to agent 0) or a JSON-style dict with
    an ``agents`` list of ``{"id": ..., "description": ...}`` entries."""
    if isinstance(description, str):
        return {0: description} if description.strip() else {}
    if isinstance(description, dict) and "agents" in description:
        return {int(a["id"]): str(a.get("description", ""))
                for a in description["agents"]}
    raise ValueError("unparseable workflow description")


def _llm_extract(descriptions: dict, config: LlmClientConfig,
                 vocabulary: set) -> dict:
    import requests

    payload = {
        "model": config.model or "default",
        "temperature": 0,
        "response_format": {"type": "json_object"},
        "messages": [{
            "role": "user",
            "content": PROMPT.format(labels=sorted(vocabulary),
                                     agents=json.dumps(
                                         {str(k): v for k, v in
                                          descriptions.items()})),
        }],
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    last_error = None
    for _ in range(config.retries + 1):
        try:
            response = requests.post(config.url, json=payload,
                                     headers=headers,
                                     timeout=config.timeout_s)
            response.raise_for_status()
            body = response.json()
            content = body["choices"][0]["message"]["content"]
            _audit(config, payload, content)
            parsed = json.loads(content)
            required = {}
            for key, labels in parsed.items():
                agent_id = int(key)
                if agent_id not in descriptions:
                    raise ValueError(f"unknown agent id {agent_id}")
                labels = set(labels)
                unknown = labels - vocabulary
                if unknown:
                    raise ValueError(f"labels outside vocabulary: {unknown}")
                if labels:
                    required[agent_id] = labels
            return required
        except Exception as exc:  # fall back to rules on any failure
            last_error = exc
            _audit(config, payload, f"error: {exc}")
            time.sleep(0)
    raise last_error


def _audit(config: LlmClientConfig, request: dict, response: str):
    if not config.audit_path:
        return
    with open(config.audit_path, "a") as fh:
        fh.write(json.dumps({"t": time.time(), "request": request,
                             "response": response}) + "\n")


def extract_constraints(description, net: SubstrateNetwork,
                        client_config: LlmClientConfig | None = None,
                        rules: dict | None = None) -> ConstraintReport:
    """Derive per-agent hard label requirements from a request description."""
    rules = rules if rules is not None else dict(DEFAULT_RULES)
    vocabulary = set(KNOWN_LABELS) | set(rules.values())
    descriptions = _normalize_description(description)
    source = "rules"
    required = None
    if client_config is not None and client_config.enabled:
        try:
            required = _llm_extract(descriptions, client_config, vocabulary)
            source = "llm"
        except Exception:
            required = None
    if required is None:
        required = _rules_extract(descriptions, rules)
    return _build_report(required, net, source)


def report_from_workflow(wf: Workflow, net: SubstrateNetwork) -> ConstraintReport:
    """Constraint report read directly off the workflow's affinity sets."""
    required = {a.id: set(a.affinity) for a in wf.agents if a.affinity}
    return _build_report(required, net, "rules")


def _build_report(required: dict, net: SubstrateNetwork,
                  source: str) -> ConstraintReport:
    report = ConstraintReport(required={k: set(v) for k, v in required.items()},
                              source=source)
    for agent_id, labels in required.items():
        candidates = [n.id for n in net.nodes if labels <= n.labels]
        report.candidates[agent_id] = candidates
        if not candidates:
            for label in labels:
                if not any(label in n.labels for n in net.nodes):
                    report.infeasible.append(label)
    return report


def decouple_topology(wf: Workflow, report: ConstraintReport) -> Workflow:
    """Split each constrained agent into resource node + zero-demand anchor.

    The anchor keeps the labels and is joined to the resource node by a
    directed edge with nominal data volume; demands are conserved.
    """
    if not report.required:
        return wf
    next_id = max(a.id for a in wf.agents) + 1
    agents = []
    extra_edges = []
    for agent in wf.agents:
        if agent.id in report.required:
            agents.append(AgentNode(id=agent.id, demand=agent.demand,
                                    affinity=frozenset()))
            anchor = AgentNode(id=next_id, demand=ResourceVector.zero(),
                               affinity=frozenset(report.required[agent.id]),
                               is_anchor=True)
            agents.append(anchor)
            extra_edges.append((anchor.id, agent.id, ANCHOR_EDGE_SIGMA))
            next_id += 1
        else:
            agents.append(AgentNode(id=agent.id, demand=agent.demand,
                                    affinity=agent.affinity,
                                    is_anchor=agent.is_anchor))
    return Workflow(id=wf.id, agents=agents,
                    edges=list(wf.edges) + extra_edges,
                    arrival_time=wf.arrival_time, lifetime=wf.lifetime,
                    workflow_type=wf.workflow_type)


def inject_bias(net: SubstrateNetwork, report: ConstraintReport,
                gamma: float = DEFAULT_GAMMA,
                bias_max: float = DEFAULT_BIAS_MAX) -> np.ndarray:
    """Bias field: bias_max on candidate nodes, geometric decay over the
    1- and 2-hop neighborhoods, capped at bias_max."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    idx = {node.id: i for i, node in enumerate(net.nodes)}
    bias = np.zeros(len(net.nodes))
    for candidates in report.candidates.values():
        for c in candidates:
            bias[idx[c]] += bias_max
            for other in net.nodes:
                hops = net.shortest_hop(c, other.id)
                if hops in (1, 2):
                    bias[idx[other.id]] += (gamma ** hops) * bias_max
    return np.minimum(bias, bias_max)
