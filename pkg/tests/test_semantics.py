"""Constraint extraction, topology decoupling and bias injection."""

import json
from unittest import mock

import numpy as np
import pytest

from vneflow import semantics
from vneflow.generators import generate_substrate, generate_workflow
from vneflow.semantics import (ConstraintReport, LlmClientConfig,
                               decouple_topology, extract_constraints,
                               inject_bias, load_rules, report_from_workflow)
from vneflow.types import AgentNode, ResourceVector, Workflow


def test_rules_extraction_is_pure_and_keyword_driven(tiny_net):
    desc = {"agents": [
        {"id": 0, "description": "Parses the user request"},
        {"id": 1, "description": "Runs VIDEO analytics on the feed"},
        {"id": 2, "description": "Handles confidential medical records"},
    ]}
    r1 = extract_constraints(desc, tiny_net)
    r2 = extract_constraints(desc, tiny_net)
    assert r1.required == r2.required == {1: {"Camera"}, 2: {"TEE"}}
    assert r1.source == "rules"


def test_bare_string_description_targets_agent_zero(tiny_net):
    report = extract_constraints("secure enclave processing", tiny_net)
    assert report.required == {0: {"TEE"}}
    assert extract_constraints("", tiny_net).required == {}


def test_unparseable_description_raises(tiny_net):
    with pytest.raises(ValueError, match="unparseable"):
        extract_constraints({"bogus": 1}, tiny_net)


def test_report_candidates_and_infeasible(tiny_net):
    report = extract_constraints(
        {"agents": [{"id": 0, "description": "privacy filter"},
                    {"id": 1, "description": "lidar point cloud fusion"}]},
        tiny_net)
    assert report.candidates[0] == [3]  # the lone TEE node
    assert report.candidates[1] == []
    assert report.infeasible == ["LiDAR"]


def test_load_rules_validation(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"thermal": "Camera"}))
    rules = load_rules(str(path))
    assert rules == {"thermal": "Camera"}
    path.write_text(json.dumps({"x": 3}))
    with pytest.raises(ValueError):
        load_rules(str(path))
    assert load_rules(None) == semantics.DEFAULT_RULES


def _mock_response(payload, status=200):
    resp = mock.Mock()
    resp.status_code = status
    resp.raise_for_status = mock.Mock()
    resp.json.return_value = payload
    return resp


def test_llm_extraction_success(tiny_net):
    config = LlmClientConfig(url="http://llm.test/v1/chat/completions",
                             model="m")
    body = {"choices": [{"message": {"content":
                                     json.dumps({"0": ["TEE"], "1": []})}}]}
    desc = {"agents": [{"id": 0, "description": "a"},
                       {"id": 1, "description": "b"}]}
    with mock.patch("requests.post",
                    return_value=_mock_response(body)) as post:
        report = extract_constraints(desc, tiny_net, client_config=config)
    assert report.source == "llm"
    assert report.required == {0: {"TEE"}}
    sent = post.call_args.kwargs["json"]
    assert sent["temperature"] == 0
    assert sent["response_format"] == {"type": "json_object"}


def test_llm_failure_falls_back_to_rules(tiny_net):
    config = LlmClientConfig(url="http://llm.test/x", retries=1)
    desc = {"agents": [{"id": 0, "description": "video feed monitor"}]}
    with mock.patch("requests.post", side_effect=OSError("boom")) as post:
        report = extract_constraints(desc, tiny_net, client_config=config)
    assert post.call_count == 2  # initial call + one retry
    assert report.source == "rules"
    assert report.required == {0: {"Camera"}}


def test_llm_out_of_vocabulary_falls_back(tiny_net):
    config = LlmClientConfig(url="http://llm.test/x", retries=0)
    body = {"choices": [{"message": {"content":
                                     json.dumps({"0": ["GPU"]})}}]}
    desc = {"agents": [{"id": 0, "description": "sensitive data"}]}
    with mock.patch("requests.post", return_value=_mock_response(body)):
        report = extract_constraints(desc, tiny_net, client_config=config)
    assert report.source == "rules"
    assert report.required == {0: {"TEE"}}


def test_llm_audit_log_written(tiny_net, tmp_path):
    audit = tmp_path / "audit.jsonl"
    config = LlmClientConfig(url="http://llm.test/x", retries=0,
                             audit_path=str(audit))
    body = {"choices": [{"message": {"content": json.dumps({"0": ["TEE"]})}}]}
    desc = {"agents": [{"id": 0, "description": "a"}]}
    with mock.patch("requests.post", return_value=_mock_response(body)):
        extract_constraints(desc, tiny_net, client_config=config)
    lines = [json.loads(l) for l in audit.read_text().splitlines()]
    assert len(lines) == 1
    assert "request" in lines[0] and "response" in lines[0]


def test_decouple_conserves_demand_and_adds_anchor():
    wf = generate_workflow(2, seed=1)
    net = generate_substrate(20, seed=1)
    report = report_from_workflow(wf, net)
    assert len(report.required) == 1
    split = decouple_topology(wf, report)
    assert len(split.agents) == len(wf.agents) + 1
    assert split.total_demand() == wf.total_demand()
    anchors = [a for a in split.agents if a.is_anchor]
    assert len(anchors) == 1
    anchor = anchors[0]
    assert anchor.demand.total() == 0
    (constrained_id, labels), = report.required.items()
    assert anchor.affinity == labels
    # the resource half no longer carries the constraint
    assert split.agent(constrained_id).affinity == frozenset()
    # anchor joined to its resource node with the nominal volume
    extra = [(i, j, s) for i, j, s in split.edges
             if (i, j) not in {(a, b) for a, b, _ in wf.edges}]
    assert extra == [(anchor.id, constrained_id,
                      semantics.ANCHOR_EDGE_SIGMA)]


def test_decouple_without_constraints_is_identity():
    wf = generate_workflow(1, seed=2)
    net = generate_substrate(15, seed=2)
    assert decouple_topology(wf, report_from_workflow(wf, net)) is wf


def test_inject_bias_values(tiny_net):
    report = ConstraintReport(candidates={0: [3]})
    bias = inject_bias(tiny_net, report, gamma=0.5, bias_max=1.0)
    # node order 0,1,2,3; hops from 3: [2, 1, 2, 0]
    np.testing.assert_allclose(bias, [0.25, 0.5, 0.25, 1.0])


def test_inject_bias_caps_at_max(tiny_net):
    report = ConstraintReport(candidates={0: [0], 1: [2]})
    bias = inject_bias(tiny_net, report, gamma=0.5, bias_max=1.0)
    # node 1 is 1 hop from both candidates (0.5 + 0.5) -> capped at 1.0
    assert bias[1] == 1.0
    assert np.all(bias <= 1.0)


def test_inject_bias_validates_gamma(tiny_net):
    with pytest.raises(ValueError):
        inject_bias(tiny_net, ConstraintReport(), gamma=1.0)


def test_bias_channel_reaches_features(tiny_net):
    from vneflow.features import substrate_features
    report = ConstraintReport(candidates={0: [3]})
    bias = inject_bias(tiny_net, report)
    off = substrate_features(tiny_net)
    on = substrate_features(tiny_net, bias)
    np.testing.assert_allclose(on[:, -1] - off[:, -1], bias)
    np.testing.assert_allclose(on[:, :-1], off[:, :-1])
